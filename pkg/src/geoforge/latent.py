"""Latent-space operations over downsampled occupancy grids.

A LatentGrid is a D x D x D x C real field obtained from an N^3 occupancy
grid by a fixed linear block projection (a deterministic stand-in for a
learned encoder). On top of it: channel-wise normalization against fixed
corpus statistics, cosine interpolation with Gaussian noise, and the
training-time samplers for the interpolation weight and the prior level.

All stochastic operations draw from counter-based Philox streams so results
are bit-reproducible across platforms for a given seed.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    EmptyCorpus,
    EmptyGrid,
    FormatError,
    LambdaOutOfRange,
    NonPositiveStd,
    ResolutionMismatch,
)
from .voxel import LodLevel, VoxelGrid

log = logging.getLogger(__name__)

DEFAULT_D = 16
DEFAULT_C = 8
PROJECTION_SEED = 20_240_901

# Calibrated so random half-occupied grids give ~0.2 per-channel std,
# matching the raw-latent spread the normalization step is meant to fix.
LATENT_SCALE = 0.4

SSLT_MAGIC = b"SSLT"
SSLT_VERSION = 1

STD_CLAMP = 1e-6


@dataclass(frozen=True)
class LatentGrid:
    """values: float32 array of shape (d, d, d, c), spatial index x + d*y + d^2*z."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 4 or v.shape[0] != v.shape[1] or v.shape[1] != v.shape[2]:
            raise ResolutionMismatch(f"latent must be (d, d, d, c), got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def d(self):
        return self.values.shape[0]

    @property
    def c(self):
        return self.values.shape[3]

    def __eq__(self, other):
        return isinstance(other, LatentGrid) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if np.any(self.std <= 0):
            raise NonPositiveStd(f"std must be strictly positive, got {self.std}")

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist()})

    @classmethod
    def from_json(cls, text: str):
        d = json.loads(text)
        return cls(mean=np.array(d["mean"]), std=np.array(d["std"]))


@dataclass(frozen=True)
class LambdaParams:
    mu: float = 1.0
    sigma: float = 1.0
    inference_lambda: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not 0.0 <= self.inference_lambda <= 1.0:
            raise LambdaOutOfRange(f"inference_lambda {self.inference_lambda} not in [0, 1]")


class PriorChoice(Enum):
    LOD0 = 0
    LOD1 = 1
    LOD2 = 2
    NOISE = 3

    @property
    def lod(self):
        if self is PriorChoice.NOISE:
            return None
        return LodLevel(self.value)


def _axis_poly_basis(m, degree):
    """Orthonormal discrete polynomial basis (constant, ramp, ...) on m points."""
    t = np.linspace(-1.0, 1.0, m) if m > 1 else np.zeros(1)
    vander = np.column_stack([t ** k for k in range(degree + 1)])
    q, _ = np.linalg.qr(vander)
    # fix signs so the constant vector is positive
    for j in range(q.shape[1]):
        if q[np.argmax(np.abs(q[:, j])), j] < 0:
            q[:, j] = -q[:, j]
    return q  # (m, degree+1)


def projection_matrix(block_edge: int, c: int = DEFAULT_C, seed: int = PROJECTION_SEED):
    """Fixed (c, block_edge^3) projection with orthonormal rows.

    Rows span the low-order tensor-polynomial subspace of a block (so flat
    occupancy patterns like cuboid faces survive the round trip), mixed by a
    seeded random orthogonal rotation. Intra-block bit order is
    ix + m*iy + m^2*iz.
    """
    m = block_edge
    max_deg = m - 1
    deg = 0
    while (deg + 1) ** 3 < c:
        deg += 1
    deg = min(deg, max_deg)
    if (deg + 1) ** 3 < c:
        raise ResolutionMismatch(
            f"block edge {m} too small for {c} channels"
        )
    axis = _axis_poly_basis(m, deg)
    combos = sorted(
        ((i + j + k, i, j, k) for i in range(deg + 1) for j in range(deg + 1) for k in range(deg + 1)),
        key=lambda t: (t[0], t[1:]),
    )[:c]
    rows = []
    for _, i, j, k in combos:
        # tensor product over (iz, iy, ix) then flatten with ix fastest
        vec = np.einsum("a,b,c->abc", axis[:, k], axis[:, j], axis[:, i]).ravel()
        rows.append(vec)
    basis = np.stack(rows)  # (c, m^3), orthonormal rows
    rng = np.random.Generator(np.random.Philox(seed))
    mix, _ = np.linalg.qr(rng.standard_normal((c, c)))
    return mix @ basis


def _blocks(grid: VoxelGrid, d: int):
    n = grid.n
    if n % d != 0:
        raise ResolutionMismatch(f"grid n={n} not divisible by latent d={d}")
    m = n // d
    # (bx, ix, by, iy, bz, iz) -> (bx, by, bz, iz, iy, ix) so the flattened
    # intra-block bit index is ix + m*iy + m^2*iz
    arr = grid.occ.reshape(d, m, d, m, d, m)
    return arr.transpose(0, 2, 4, 5, 3, 1).reshape(d, d, d, m ** 3), m


def encode_surrogate(grid: VoxelGrid, d: int = DEFAULT_D, c: int = DEFAULT_C,
                     seed: int = PROJECTION_SEED) -> LatentGrid:
    """Deterministic block projection of occupancy into a latent field."""
    bits, m = _blocks(grid, d)
    proj = projection_matrix(m, c, seed)
    values = LATENT_SCALE * (bits.astype(np.float64) @ proj.T)
    return LatentGrid(values.astype(np.float32))


def decode_surrogate(latent: LatentGrid, n: int = None, seed: int = PROJECTION_SEED) -> VoxelGrid:
    """Inverse of encode_surrogate: back-project and threshold at 0.5."""
    d, c = latent.d, latent.c
    if n is None:
        n = d * 4 if d * 4 >= 8 else d * 2
    if n % d != 0:
        raise ResolutionMismatch(f"target n={n} not divisible by latent d={d}")
    m = n // d
    proj = projection_matrix(m, c, seed)
    bits_hat = (latent.values.astype(np.float64) / LATENT_SCALE) @ proj
    occ_blocks = bits_hat >= 0.5
    occ = (
        occ_blocks.reshape(d, d, d, m, m, m)
        .transpose(0, 5, 1, 4, 2, 3)  # inverse of the encode transpose
        .reshape(n, n, n)
    )
    return VoxelGrid(occ)


def normalize_latent(latent: LatentGrid, stats: NormStats) -> LatentGrid:
    if len(stats.mean) != latent.c:
        raise ResolutionMismatch(f"stats have {len(stats.mean)} channels, latent has {latent.c}")
    out = (latent.values.astype(np.float64) - stats.mean) / stats.std
    return LatentGrid(out.astype(np.float32))


def denormalize_latent(latent: LatentGrid, stats: NormStats) -> LatentGrid:
    out = latent.values.astype(np.float64) * stats.std + stats.mean
    return LatentGrid(out.astype(np.float32))


def compute_stats(corpus) -> NormStats:
    """Per-channel mean and population std over all positions of all latents.

    Zero-variance channels are clamped to 1e-6 with a warning; the result is
    meant to be persisted once and reused verbatim at inference.
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("compute_stats needs a non-empty corpus")
    c = corpus[0].c
    stacked = np.concatenate([lat.values.reshape(-1, c).astype(np.float64) for lat in corpus])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)  # population std
    if np.any(std < STD_CLAMP):
        log.warning("compute_stats: clamping %d zero-variance channel(s) to %g",
                    int((std < STD_CLAMP).sum()), STD_CLAMP)
        std = np.maximum(std, STD_CLAMP)
    return NormStats(mean=mean, std=std)


def noise_like(latent: LatentGrid, seed: int) -> LatentGrid:
    """Standard-normal noise with the latent's shape from a Philox stream."""
    rng = np.random.Generator(np.random.Philox(seed))
    return LatentGrid(rng.standard_normal(latent.values.shape).astype(np.float32))


def cosine_interpolate(z_norm: LatentGrid, lam: float, noise_seed: int) -> LatentGrid:
    """Blend a normalized latent with Gaussian noise on the cosine arc.

    out = cos(lam*pi/2) * z_norm + sin(lam*pi/2) * eps. The endpoints are
    special-cased so lam=0 returns z_norm and lam=1 returns eps bit-exactly.
    """
    if not 0.0 <= lam <= 1.0:
        raise LambdaOutOfRange(f"lambda {lam} not in [0, 1]")
    if lam == 0.0:
        return LatentGrid(z_norm.values.copy())
    eps = noise_like(z_norm, noise_seed)
    if lam == 1.0:
        return eps
    a = math.cos(lam * math.pi / 2)
    b = math.sin(lam * math.pi / 2)
    out = a * z_norm.values.astype(np.float64) + b * eps.values.astype(np.float64)
    return LatentGrid(out.astype(np.float32))


def sample_lambda(params: LambdaParams, seed: int) -> float:
    """One logit-normal draw: sigmoid of Normal(mu, sigma^2)."""
    rng = np.random.Generator(np.random.Philox(seed))
    x = params.mu + params.sigma * rng.standard_normal()
    return float(1.0 / (1.0 + math.exp(-x)))


def sample_lambdas(params: LambdaParams, seed: int, count: int) -> np.ndarray:
    """Vectorized logit-normal draws from a single stream."""
    rng = np.random.Generator(np.random.Philox(seed))
    x = params.mu + params.sigma * rng.standard_normal(count)
    return 1.0 / (1.0 + np.exp(-x))


def sample_training_prior(gt: VoxelGrid, seed: int) -> PriorChoice:
    """Uniform choice over {LOD0, LOD1, LOD2, pure noise} for a training step."""
    if gt.is_empty:
        raise EmptyGrid("cannot sample a prior for an empty grid")
    rng = np.random.Generator(np.random.Philox(seed))
    return PriorChoice(int(rng.integers(4)))


def latent_to_bytes(latent: LatentGrid) -> bytes:
    """SSLT serialization: header + float32 values, channel fastest, then
    spatial index x + d*y + d^2*z."""
    header = SSLT_MAGIC + struct.pack("<III", SSLT_VERSION, latent.d, latent.c)
    payload = np.ascontiguousarray(latent.values.transpose(2, 1, 0, 3), dtype="<f4")
    return header + payload.tobytes()


def latent_from_bytes(data: bytes) -> LatentGrid:
    if len(data) < 16:
        raise FormatError("SSLT: truncated header")
    if data[:4] != SSLT_MAGIC:
        raise FormatError(f"SSLT: bad magic {data[:4]!r}")
    version, d, c = struct.unpack("<III", data[4:16])
    if version != SSLT_VERSION:
        raise FormatError(f"SSLT: unsupported version {version}")
    count = d * d * d * c
    payload = data[16:]
    if len(payload) != count * 4:
        raise FormatError(f"SSLT: expected {count * 4} payload bytes, got {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").reshape(d, d, d, c).transpose(2, 1, 0, 3)
    return LatentGrid(np.ascontiguousarray(values))


def write_sslt(latent: LatentGrid, path):
    Path(path).write_bytes(latent_to_bytes(latent))


def read_sslt(path) -> LatentGrid:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"SSLT: no such file {p}")
    return latent_from_bytes(p.read_bytes())
