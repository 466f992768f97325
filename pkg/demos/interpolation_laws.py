"""Show the statistical laws behind the cosine latent interpolation.

The blend out = cos(lam*pi/2) * z + sin(lam*pi/2) * eps keeps unit variance
for standard-normal inputs (cos^2 + sin^2 = 1) while the correlation with the
source latent falls off as cos(lam*pi/2). The training-time interpolation
weight is logit-normal(1, 1), which concentrates draws toward the noisy end.

Run from the repo root: python demos/interpolation_laws.py
"""

import math

import numpy as np

from geoforge.latent import (
    LambdaParams,
    LatentGrid,
    cosine_interpolate,
    noise_like,
    sample_lambdas,
)


def main():
    rng = np.random.default_rng(0)
    z = LatentGrid(rng.standard_normal((16, 16, 16, 8)).astype(np.float32))

    print(f"{'lambda':>7} {'std(out)':>9} {'corr':>7} {'cos(l*pi/2)':>12}")
    for lam in (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0):
        out = cosine_interpolate(z, lam, noise_seed=42)
        corr = float(np.corrcoef(out.values.ravel(), z.values.ravel())[0, 1])
        print(f"{lam:7.2f} {out.values.std():9.4f} {corr:7.3f} "
              f"{math.cos(lam * math.pi / 2):12.3f}")

    assert np.array_equal(cosine_interpolate(z, 0.0, 42).values, z.values)
    assert np.array_equal(cosine_interpolate(z, 1.0, 42).values, noise_like(z, 42).values)
    print("\nendpoints are exact: lam=0 returns the latent, lam=1 returns the noise")

    lams = sample_lambdas(LambdaParams(), seed=0, count=200_000)
    print(f"\ntraining weight sampler: median {np.median(lams):.4f} "
          f"(sigmoid(1) = {1 / (1 + math.exp(-1)):.4f}), "
          f"quartiles {np.quantile(lams, 0.25):.3f} / {np.quantile(lams, 0.75):.3f}")


if __name__ == "__main__":
    main()
