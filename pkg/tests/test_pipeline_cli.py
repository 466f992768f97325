"""End-to-end pipeline stages and the command-line interface."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from geoforge.cli import main
from geoforge.errors import LambdaOutOfRange
from geoforge.flow import FlowConfig, TrainConfig, train_toy, write_gftm
from geoforge.osm import GeoBBox, GeoFootprint, footprints_to_json
from geoforge.pipeline import (
    EXIT_FATAL,
    EXIT_OK,
    EXIT_PARTIAL,
    cmd_fetch,
    cmd_generate,
    cmd_priorize,
    exit_code,
    load_manifest,
)
from geoforge.voxel import read_ssvx, synth_building, synth_condition

from conftest import FIXTURE_DIR

BBOX_ARG = "47.3600,8.5400,47.3610,8.5415"
BBOX = GeoBBox(min_lat=47.3600, max_lat=47.3610, min_lon=8.5400, max_lon=8.5415)


@pytest.fixture(scope="module")
def tiny_model_path(tmp_path_factory):
    corpus = []
    for seed in range(40):
        grid, params = synth_building(seed, 32)
        corpus.append((grid, synth_condition(params, 32)))
    model = train_toy(corpus, epochs=2, seed=0, config=TrainConfig())
    path = tmp_path_factory.mktemp("model") / "toy.gftm"
    write_gftm(model, path)
    return path


@pytest.fixture()
def fetched_dir(tmp_path):
    out = tmp_path / "run"
    cmd_fetch(BBOX, out, offline=True, fixture_dir=FIXTURE_DIR)
    return out


class TestFetch:
    def test_offline_outputs(self, fetched_dir):
        manifest = load_manifest(fetched_dir / "manifest.json")
        assert len(manifest["buildings"]) == 4
        assert manifest["failures"] == []
        assert (fetched_dir / "footprints.json").exists()
        assert (fetched_dir / "satellite.png").exists()
        assert (fetched_dir / "satellite.png.geo.json").exists()
        for i in range(4):
            assert (fetched_dir / f"b{i:03d}_masked.png").exists()
        assert exit_code(manifest) == EXIT_OK

    def test_offline_missing_fixture_names_path(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "fetch", "--bbox", BBOX_ARG, "--out", str(tmp_path / "o"),
            "--offline", "--fixtures", str(tmp_path / "nothing"),
        ])
        assert result.exit_code == EXIT_FATAL
        assert "nothing" in result.output

    def test_invalid_bbox_flag(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "fetch", "--bbox", "not-a-bbox", "--out", str(tmp_path / "o"), "--offline",
        ])
        assert result.exit_code != 0

    def test_cli_fetch_exit_zero(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "fetch", "--bbox", BBOX_ARG, "--out", str(tmp_path / "o"),
            "--offline", "--fixtures", str(FIXTURE_DIR),
        ])
        assert result.exit_code == EXIT_OK, result.output
        assert "4 building(s)" in result.output


class TestPriorize:
    def test_lod_all_writes_12_priors(self, fetched_dir):
        manifest = cmd_priorize(fetched_dir / "manifest.json", lod="all", n=32)
        priors = list(fetched_dir.glob("b*_lod*.ssvx"))
        assert len(priors) == 12
        rasters = list(fetched_dir.glob("b*_raster.ssvx"))
        assert len(rasters) == 4
        assert exit_code(manifest) == EXIT_OK

    def test_single_lod(self, fetched_dir):
        cmd_priorize(fetched_dir / "manifest.json", lod="1", n=32)
        assert len(list(fetched_dir.glob("b*_lod1.ssvx"))) == 4
        assert len(list(fetched_dir.glob("b*_lod0.ssvx"))) == 0

    def test_hole_footprint_lod1_matches_raster_outline(self, fetched_dir):
        cmd_priorize(fetched_dir / "manifest.json", lod="1", n=32)
        manifest = load_manifest(fetched_dir / "manifest.json")
        rec = next(r for r in manifest["buildings"] if r["source_id"] == "relation/201")
        raster = read_ssvx(fetched_dir / rec["raster_grid"])
        lod1 = read_ssvx(fetched_dir / rec["priors"]["1"])
        # the courtyard building is a plain extrusion: its LOD1 prior is the
        # footprint slice union over the same z-range, i.e. the raster itself
        assert lod1 == raster
        # and the hole is actually open in the cross-section
        mid = raster.occ[:, :, 0]
        xs = np.flatnonzero(mid.any(axis=1))
        ys = np.flatnonzero(mid.any(axis=0))
        assert not mid[(xs[0] + xs[-1]) // 2, (ys[0] + ys[-1]) // 2]

    def test_degenerate_footprint_partial_exit(self, tmp_path, fetched_dir):
        # inject a zero-area footprint into the fetched documents
        fps_path = fetched_dir / "footprints.json"
        docs = json.loads(fps_path.read_text())
        line = [[0.0, 0.0], [0.0, 1e-4], [0.0, 2e-4], [0.0, 1e-4], [0.0, 0.0]]
        docs.append({"id": "way/999", "outer": line, "holes": [],
                     "height_m": 10.0, "min_height_m": 0.0, "tags": {}})
        fps_path.write_text(json.dumps(docs))
        manifest = load_manifest(fetched_dir / "manifest.json")
        manifest["buildings"].append({"source_id": "way/999", "index": 4,
                                      "footprints_file": "footprints.json"})
        (fetched_dir / "manifest.json").write_text(json.dumps(manifest))

        manifest = cmd_priorize(fetched_dir / "manifest.json", lod="all", n=32)
        assert len(list(fetched_dir.glob("b00[0-3]_raster.ssvx"))) == 4
        assert len(manifest["failures"]) == 1
        assert manifest["failures"][0]["source_id"] == "way/999"
        assert exit_code(manifest) == EXIT_PARTIAL


class TestGenerate:
    def test_generates_and_evaluates(self, fetched_dir, tiny_model_path):
        cmd_priorize(fetched_dir / "manifest.json", lod="all", n=32)
        manifest = cmd_generate(fetched_dir / "manifest.json", tiny_model_path,
                                FlowConfig(lam=0.5, seed=1), prior_lod=1)
        assert len(list(fetched_dir.glob("b*_generated.ssvx"))) == 4
        reports = list(fetched_dir.glob("b*_eval.json"))
        assert len(reports) == 4
        rep = json.loads(reports[0].read_text())
        assert {"iou", "chamfer", "f_score", "tau", "n"} <= set(rep)
        assert exit_code(manifest) == EXIT_OK

    def test_lambda_out_of_range_before_writes(self, fetched_dir, tiny_model_path):
        cmd_priorize(fetched_dir / "manifest.json", lod="all", n=32)
        with pytest.raises(LambdaOutOfRange):
            cmd_generate(fetched_dir / "manifest.json", tiny_model_path,
                         FlowConfig(lam=1.2, seed=1))
        assert list(fetched_dir.glob("b*_generated.ssvx")) == []

    def test_cli_lambda_flag_validation(self, fetched_dir, tiny_model_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "generate", "--manifest", str(fetched_dir / "manifest.json"),
            "--model", str(tiny_model_path), "--lambda", "1.2",
        ])
        assert result.exit_code == EXIT_FATAL
        assert "1.2" in result.output

    def test_same_seed_bit_identical(self, fetched_dir, tiny_model_path):
        cmd_priorize(fetched_dir / "manifest.json", lod="all", n=32)
        cmd_generate(fetched_dir / "manifest.json", tiny_model_path,
                     FlowConfig(lam=0.5, seed=7), prior_lod=1)
        first = {p.name: p.read_bytes() for p in fetched_dir.glob("b*_generated.ssvx")}
        cmd_generate(fetched_dir / "manifest.json", tiny_model_path,
                     FlowConfig(lam=0.5, seed=7), prior_lod=1)
        second = {p.name: p.read_bytes() for p in fetched_dir.glob("b*_generated.ssvx")}
        assert first == second


class TestEvalCli:
    def test_identical_files(self, tmp_path):
        from geoforge.voxel import synth_shape, write_ssvx

        g = synth_shape(0, 32)
        a = tmp_path / "a.ssvx"
        write_ssvx(g, a)
        runner = CliRunner()
        result = runner.invoke(main, ["eval", "--pred", str(a), "--gt", str(a)])
        assert result.exit_code == 0, result.output
        rep = json.loads(result.output)
        assert rep["iou"] == 1.0 and rep["chamfer"] == 0.0 and rep["f_score"] == 1.0

    def test_lod_chain_iou_non_decreasing(self, tmp_path):
        from geoforge.voxel import LodLevel, lod_prior, synth_shape, write_ssvx

        g = synth_shape(8, 32)
        gt_path = tmp_path / "gt.ssvx"
        write_ssvx(g, gt_path)
        runner = CliRunner()
        ious = []
        for level in LodLevel:
            p = tmp_path / f"lod{level.value}.ssvx"
            write_ssvx(lod_prior(g, level), p)
            result = runner.invoke(main, ["eval", "--pred", str(p), "--gt", str(gt_path)])
            ious.append(json.loads(result.output)["iou"])
        assert ious[0] <= ious[1] <= ious[2]

    def test_resolution_mismatch_names_both(self, tmp_path):
        from geoforge.voxel import synth_shape, write_ssvx

        a = tmp_path / "a.ssvx"
        b = tmp_path / "b.ssvx"
        write_ssvx(synth_shape(0, 32), a)
        write_ssvx(synth_shape(0, 16), b)
        runner = CliRunner()
        result = runner.invoke(main, ["eval", "--pred", str(a), "--gt", str(b)])
        assert result.exit_code == EXIT_FATAL
        assert "32" in result.output and "16" in result.output


class TestRefineCli:
    def test_mock_refine(self, fetched_dir, tmp_path):
        runner = CliRunner()
        out = tmp_path / "refined.png"
        result = runner.invoke(main, [
            "refine", "--image", str(fetched_dir / "b000_masked.png"),
            "--provider", "mock", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert out.exists() and (tmp_path / "refined.png.geo.json").exists()


class TestCorpusAndTraining:
    def test_synth_corpus_and_train_cli(self, tmp_path):
        runner = CliRunner()
        corpus_dir = tmp_path / "corpus"
        result = runner.invoke(main, [
            "synth-corpus", "--out", str(corpus_dir), "--count", "10",
            "--seed", "3", "--resolution", "32",
        ])
        assert result.exit_code == 0, result.output
        assert len(list(corpus_dir.glob("*.ssvx"))) == 10
        assert len(list(corpus_dir.glob("*.cond.json"))) == 10

        model_path = tmp_path / "m.gftm"
        result = runner.invoke(main, [
            "train-toy", "--corpus", str(corpus_dir), "--epochs", "1",
            "--seed", "0", "--out", str(model_path),
        ])
        assert result.exit_code == 0, result.output
        assert model_path.exists()
        assert model_path.with_suffix(".gftm.json").exists()


class TestManifest:
    def test_rerun_is_idempotent_except_timestamps(self, tmp_path):
        out = tmp_path / "run"
        cmd_fetch(BBOX, out, offline=True, fixture_dir=FIXTURE_DIR)
        snapshot = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "manifest.json"}
        m1 = load_manifest(out / "manifest.json")
        cmd_fetch(BBOX, out, offline=True, fixture_dir=FIXTURE_DIR)
        snapshot2 = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "manifest.json"}
        m2 = load_manifest(out / "manifest.json")
        assert snapshot == snapshot2
        for m in (m1, m2):
            m.pop("created")
            m.pop("updated")
        assert m1 == m2

    def test_missing_manifest(self, tmp_path):
        from geoforge.errors import GeoForgeError

        with pytest.raises(GeoForgeError):
            load_manifest(tmp_path / "manifest.json")
