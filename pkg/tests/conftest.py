"""Shared fixtures and independent oracles used across the test suite.

The oracles here are deliberately naive (brute force, O(n^2) and worse) so
they can be trusted as references for the accelerated implementations.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from geoforge.flow import FlowConfig, TrainConfig, train_toy, generate
from geoforge.metrics import voxel_iou
from geoforge.voxel import VoxelGrid, lod_prior, synth_building, synth_condition

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO_ROOT / "fixtures"

TRAIN_SEEDS = range(500)
HELDOUT_SEEDS = range(10_000, 10_024)


def brute_point_in_rings(x, y, rings):
    """Even-odd rule by explicit ray casting, one point at a time."""
    crossings = 0
    for ring in rings:
        for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:]):
            if (y0 > y) != (y1 > y):
                x_cross = x0 + (y - y0) / (y1 - y0) * (x1 - x0)
                if x_cross > x:
                    crossings += 1
    return crossings % 2 == 1


def brute_chamfer(a: VoxelGrid, b: VoxelGrid) -> float:
    """O(|P| * |Q|) symmetric Chamfer on occupied-voxel centers."""
    p = a.centers()
    q = b.centers()
    d = np.sqrt(((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2))
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def random_grid(rng, n, p=0.5):
    return VoxelGrid(rng.random((n, n, n)) < p)


def random_nonempty_grid(rng, n, p=0.5):
    while True:
        g = random_grid(rng, n, p)
        if not g.is_empty:
            return g


@pytest.fixture(scope="session")
def toy_bundle():
    """Train the toy velocity model once per session on 500 synthetic shapes.

    Returns the model, the wall-clock training time, and a held-out corpus of
    (grid, cond) pairs whose seeds are disjoint from the training seeds.
    """
    n = 32
    corpus = []
    for seed in TRAIN_SEEDS:
        grid, params = synth_building(seed, n)
        corpus.append((grid, synth_condition(params, n)))
    t0 = time.perf_counter()
    model = train_toy(corpus, epochs=30, seed=0, config=TrainConfig())
    train_seconds = time.perf_counter() - t0
    heldout = []
    for seed in HELDOUT_SEEDS:
        grid, params = synth_building(seed, n)
        heldout.append((grid, synth_condition(params, n)))
    return {"model": model, "train_seconds": train_seconds, "heldout": heldout, "n": n}


def mean_iou_by_start(model, heldout, n, lam=0.5, base_seed=555):
    """Mean IoU(generated, gt) for each start in {noise, LOD0, LOD1, LOD2}."""
    from geoforge.voxel import LodLevel

    means = {}
    for start in ("noise", 0, 1, 2):
        ious = []
        for j, (gt, cond) in enumerate(heldout):
            seed = base_seed + 17 * j
            if start == "noise":
                gen = generate(model, None, cond, FlowConfig(lam=1.0, seed=seed), n=n)
            else:
                prior = lod_prior(gt, LodLevel(start))
                gen = generate(model, prior, cond, FlowConfig(lam=lam, seed=seed), n=n)
            ious.append(voxel_iou(gen, gt))
        means[start] = float(np.mean(ious))
    return means
