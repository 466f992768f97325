"""Latent operations: surrogate codec, normalization, interpolation, samplers."""

import math

import numpy as np
import pytest

from geoforge.errors import (
    EmptyCorpus,
    EmptyGrid,
    FormatError,
    LambdaOutOfRange,
    NonPositiveStd,
    ResolutionMismatch,
)
from geoforge.latent import (
    LambdaParams,
    LatentGrid,
    NormStats,
    PriorChoice,
    compute_stats,
    cosine_interpolate,
    decode_surrogate,
    denormalize_latent,
    encode_surrogate,
    latent_from_bytes,
    latent_to_bytes,
    noise_like,
    normalize_latent,
    projection_matrix,
    read_sslt,
    sample_lambda,
    sample_lambdas,
    sample_training_prior,
    write_sslt,
)
from geoforge.metrics import voxel_iou
from geoforge.voxel import VoxelGrid

from conftest import random_grid


def random_latent(rng, d=4, c=8):
    return LatentGrid(rng.standard_normal((d, d, d, c)).astype(np.float32))


def random_cuboid(rng, n):
    # building-scale cuboids: each edge spans at least two latent blocks
    edge = rng.integers(n // 8, n + 1, size=3)
    lo = np.array([rng.integers(0, n - e + 1) for e in edge])
    occ = np.zeros((n, n, n), dtype=bool)
    occ[lo[0]:lo[0] + edge[0], lo[1]:lo[1] + edge[1], lo[2]:lo[2] + edge[2]] = True
    return VoxelGrid(occ)


class TestProjection:
    def test_orthonormal_rows(self):
        for m, c in ((2, 8), (4, 8), (4, 4)):
            p = projection_matrix(m, c)
            assert np.allclose(p @ p.T, np.eye(c), atol=1e-12)

    def test_deterministic(self):
        assert np.array_equal(projection_matrix(4, 8), projection_matrix(4, 8))

    def test_too_many_channels_for_block(self):
        with pytest.raises(ResolutionMismatch):
            projection_matrix(1, 8)


class TestSurrogateCodec:
    def test_empty_grid_zero_latent(self):
        z = encode_surrogate(VoxelGrid(np.zeros((32, 32, 32), dtype=bool)), 16, 8)
        assert np.all(z.values == 0.0)

    def test_full_grid_all_positions_equal(self):
        z = encode_surrogate(VoxelGrid(np.ones((32, 32, 32), dtype=bool)), 16, 8)
        flat = z.values.reshape(-1, 8)
        assert np.all(flat == flat[0])

    def test_random_grid_channel_std_near_calibration(self):
        # per-channel sample std over random half-occupied grids stays in the
        # documented [0.1, 0.3] band around the 0.2 calibration target
        rng = np.random.default_rng(11)
        stds = []
        for _ in range(100):
            z = encode_surrogate(random_grid(rng, 64), 16, 8)
            stds.append(z.values.reshape(-1, 8).std(axis=0))
        stds = np.stack(stds)
        assert np.all(stds > 0.1) and np.all(stds < 0.3)
        assert abs(float(stds.mean()) - 0.2) < 0.02

    def test_round_trip_lossless_at_block_edge_2(self):
        # 8 bits per block, 8 channels, orthonormal projection: invertible
        rng = np.random.default_rng(3)
        for _ in range(10):
            g = random_grid(rng, 32)
            assert decode_surrogate(encode_surrogate(g, 16, 8), 32) == g

    def test_cuboid_reconstruction(self):
        rng = np.random.default_rng(7)
        ious = []
        for _ in range(100):
            g = random_cuboid(rng, 64)
            rec = decode_surrogate(encode_surrogate(g, 16, 8), 64)
            ious.append(voxel_iou(rec, g))
        ious = np.array(ious)
        # the 4^3-bit -> 8-channel projection is lossy; the low-order
        # polynomial rows keep cuboids nearly intact
        assert ious.min() >= 0.95

    def test_all_zero_latent_decodes_empty(self):
        z = LatentGrid(np.zeros((16, 16, 16, 8), dtype=np.float32))
        assert decode_surrogate(z, 64).is_empty

    def test_determinism(self):
        g = random_grid(np.random.default_rng(0), 32)
        a = encode_surrogate(g, 16, 8)
        b = encode_surrogate(g, 16, 8)
        assert np.array_equal(a.values, b.values)

    def test_resolution_mismatch(self):
        with pytest.raises(ResolutionMismatch):
            encode_surrogate(VoxelGrid(np.zeros((30, 30, 30), dtype=bool)), 16, 8)
        with pytest.raises(ResolutionMismatch):
            decode_surrogate(LatentGrid(np.zeros((16, 16, 16, 8), dtype=np.float32)), 50)


class TestNormalization:
    def test_hand_computed_population_standardization(self):
        # channel values {1, 2, 3}: population mean 2, std sqrt(2/3)
        z = LatentGrid(np.array([1.0, 2.0, 3.0], dtype=np.float32).reshape(1, 1, 1, 3))
        stats = NormStats(mean=np.array([2.0] * 3), std=np.array([math.sqrt(2.0 / 3.0)] * 3))
        out = normalize_latent(z, stats)
        expect = np.array([-math.sqrt(1.5), 0.0, math.sqrt(1.5)], dtype=np.float32)
        assert np.allclose(out.values.ravel(), expect, atol=1e-6)

    def test_identity_stats(self):
        z = random_latent(np.random.default_rng(0))
        stats = NormStats(mean=np.zeros(8), std=np.ones(8))
        assert np.array_equal(normalize_latent(z, stats).values, z.values)

    def test_zero_std_rejected(self):
        with pytest.raises(NonPositiveStd):
            NormStats(mean=np.zeros(2), std=np.array([1.0, 0.0]))

    def test_inverse_affine_recovers_input(self):
        rng = np.random.default_rng(1)
        z = random_latent(rng)
        stats = NormStats(mean=rng.normal(size=8), std=rng.uniform(0.5, 2.0, size=8))
        z64 = z.values.astype(np.float64)
        normed = (z64 - stats.mean) / stats.std
        back = normed * stats.std + stats.mean
        rel = np.abs(back - z64) / np.maximum(np.abs(z64), 1e-30)
        assert rel.max() < 1e-12

    def test_channel_count_mismatch(self):
        z = random_latent(np.random.default_rng(0), c=8)
        with pytest.raises(ResolutionMismatch):
            normalize_latent(z, NormStats(mean=np.zeros(4), std=np.ones(4)))


class TestComputeStats:
    def test_constant_channel_clamped_with_warning(self, caplog):
        z = LatentGrid(np.full((2, 2, 2, 1), 5.0, dtype=np.float32))
        with caplog.at_level("WARNING"):
            stats = compute_stats([z])
        assert stats.mean[0] == 5.0
        assert stats.std[0] == 1e-6
        assert any("clamp" in r.message for r in caplog.records)

    def test_two_latent_hand_computed(self):
        a = LatentGrid(np.zeros((1, 1, 1, 1), dtype=np.float32))
        b = LatentGrid(np.full((1, 1, 1, 1), 2.0, dtype=np.float32))
        stats = compute_stats([a, b])
        assert stats.mean[0] == 1.0
        assert stats.std[0] == 1.0  # population std of {0, 2}

    def test_monte_carlo_recovery(self):
        rng = np.random.default_rng(2)
        true_mean = np.array([0.0, 0.5, -0.3, 0.1])
        corpus = [
            LatentGrid((true_mean + 0.2 * rng.standard_normal((8, 8, 8, 4))).astype(np.float32))
            for _ in range(500)
        ]  # 500 * 512 = 256k values per channel
        stats = compute_stats(corpus)
        assert np.all(np.abs(stats.mean - true_mean) < 0.01)
        assert np.all(np.abs(stats.std - 0.2) < 0.01)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            compute_stats([])

    def test_stats_json_round_trip(self):
        stats = NormStats(mean=np.array([1.0, 2.0]), std=np.array([0.5, 0.25]))
        again = NormStats.from_json(stats.to_json())
        assert np.array_equal(again.mean, stats.mean)
        assert np.array_equal(again.std, stats.std)


class TestCosineInterpolate:
    def test_lambda_zero_bit_exact(self):
        z = random_latent(np.random.default_rng(0))
        out = cosine_interpolate(z, 0.0, noise_seed=123)
        assert np.array_equal(out.values, z.values)

    def test_lambda_one_equals_noise(self):
        z = random_latent(np.random.default_rng(0))
        out = cosine_interpolate(z, 1.0, noise_seed=123)
        assert np.array_equal(out.values, noise_like(z, 123).values)

    def test_lambda_half_closed_form(self):
        z = random_latent(np.random.default_rng(0))
        eps = noise_like(z, 9)
        out = cosine_interpolate(z, 0.5, noise_seed=9)
        expect = (z.values.astype(np.float64) + eps.values.astype(np.float64)) * (math.sqrt(2) / 2)
        assert np.allclose(out.values, expect, atol=1e-6)

    def test_out_of_range(self):
        z = random_latent(np.random.default_rng(0))
        for lam in (-0.1, 1.1):
            with pytest.raises(LambdaOutOfRange):
                cosine_interpolate(z, lam, 0)

    def test_seed_determinism(self):
        z = random_latent(np.random.default_rng(0))
        a = cosine_interpolate(z, 0.3, 42)
        b = cosine_interpolate(z, 0.3, 42)
        assert np.array_equal(a.values, b.values)


class TestLambdaSampler:
    def test_range(self):
        params = LambdaParams()
        for seed in range(100):
            lam = sample_lambda(params, seed)
            assert 0.0 < lam < 1.0

    def test_determinism(self):
        params = LambdaParams()
        assert sample_lambda(params, 7) == sample_lambda(params, 7)

    def test_degenerate_sigma_concentrates_at_median(self):
        params = LambdaParams(mu=1.0, sigma=1e-9)
        target = 1.0 / (1.0 + math.exp(-1.0))
        for seed in range(50):
            assert abs(sample_lambda(params, seed) - target) < 1e-6

    def test_vectorized_matches_distribution(self):
        lams = sample_lambdas(LambdaParams(), 0, 100_000)
        assert np.all((lams > 0) & (lams < 1))
        assert abs(np.median(lams) - 0.7311) < 0.01

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            LambdaParams(sigma=0.0)
        with pytest.raises(LambdaOutOfRange):
            LambdaParams(inference_lambda=1.5)


class TestPriorSampler:
    def test_uniform_over_four_options(self):
        counts = {choice: 0 for choice in PriorChoice}
        g = VoxelGrid(np.ones((8, 8, 8), dtype=bool))
        draws = 100_000
        for seed in range(draws):
            counts[sample_training_prior(g, seed)] += 1
        for choice, count in counts.items():
            assert abs(count / draws - 0.25) < 0.01, choice

    def test_determinism(self):
        g = VoxelGrid(np.ones((8, 8, 8), dtype=bool))
        assert sample_training_prior(g, 5) == sample_training_prior(g, 5)

    def test_empty_grid_rejected(self):
        with pytest.raises(EmptyGrid):
            sample_training_prior(VoxelGrid(np.zeros((8, 8, 8), dtype=bool)), 0)

    def test_noise_branch_uncorrelated_with_data(self):
        # pure-noise starts carry no information about the data latent
        rng = np.random.default_rng(4)
        z = random_latent(rng, d=8, c=8)
        zv = z.values.astype(np.float64).ravel()
        zv = zv - zv.mean()
        num = 0.0
        den_n = 0.0
        for seed in range(10_000):
            nv = noise_like(z, seed).values.astype(np.float64).ravel()
            nv = nv - nv.mean()
            num += float(nv @ zv)
            den_n += float(nv @ nv)
        corr = num / math.sqrt(den_n * float(zv @ zv))
        assert abs(corr) < 0.01

    def test_noise_lod_mapping(self):
        assert PriorChoice.NOISE.lod is None
        assert PriorChoice.LOD1.lod.value == 1


class TestSslt:
    def test_round_trip(self):
        z = random_latent(np.random.default_rng(0), d=4, c=3)
        again = latent_from_bytes(latent_to_bytes(z))
        assert np.array_equal(again.values, z.values)

    def test_file_round_trip(self, tmp_path):
        z = random_latent(np.random.default_rng(1), d=4, c=8)
        path = tmp_path / "z.sslt"
        write_sslt(z, path)
        assert np.array_equal(read_sslt(path).values, z.values)

    def test_value_layout(self):
        # value at (x, y, z, ch) lands at payload float index
        # ((x + d*y + d^2*z) * c + ch)
        d, c = 2, 3
        vals = np.arange(d * d * d * c, dtype=np.float32).reshape(d, d, d, c)
        z = LatentGrid(vals)
        payload = np.frombuffer(latent_to_bytes(z)[16:], dtype="<f4")
        for x in range(d):
            for y in range(d):
                for zz in range(d):
                    for ch in range(c):
                        idx = (x + d * y + d * d * zz) * c + ch
                        assert payload[idx] == vals[x, y, zz, ch]

    def test_header(self):
        z = random_latent(np.random.default_rng(0), d=4, c=8)
        data = latent_to_bytes(z)
        assert data[:4] == b"SSLT"
        assert int.from_bytes(data[4:8], "little") == 1
        assert int.from_bytes(data[8:12], "little") == 4
        assert int.from_bytes(data[12:16], "little") == 8

    def test_format_errors(self):
        z = random_latent(np.random.default_rng(0), d=2, c=2)
        data = latent_to_bytes(z)
        with pytest.raises(FormatError):
            latent_from_bytes(data[:-4])
        with pytest.raises(FormatError):
            latent_from_bytes(b"XXXX" + data[4:])
        with pytest.raises(FormatError):
            latent_from_bytes(data[:4] + (9).to_bytes(4, "little") + data[8:])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            read_sslt(tmp_path / "nope.sslt")
