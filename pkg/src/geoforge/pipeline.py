"""End-to-end pipeline stages with a persistent manifest.

Each stage reads and rewrites `manifest.json` in the output directory so any
stage can be re-run deterministically. Stage functions return the manifest;
per-building failures are recorded instead of aborting the run.
"""

import datetime
import json
import logging
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DegenerateFootprint, FootprintOutsideImage, GeoForgeError, LambdaOutOfRange
from .flow import FlowConfig, generate, read_gftm
from .metrics import DEFAULT_TAU, eval_report
from .osm import (
    DEFAULT_OVERPASS_URL,
    GeoBBox,
    fetch_buildings,
    footprints_from_json,
    footprints_to_json,
)
from .tiles import (
    fetch_and_stitch,
    mask_with_footprint,
    save_geoimage,
    zoom_for_extent,
)
from .transport import HttpTransport, OfflineFixtureTransport
from .voxel import LodLevel, lod_prior, rasterize_footprint, read_ssvx, write_ssvx

log = logging.getLogger(__name__)

DEFAULT_TILE_URL = "https://tile.openstreetmap.org/{z}/{x}/{y}.png"

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_FATAL = 2


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def new_manifest(bbox: GeoBBox, out_dir):
    return {
        "tool_version": __version__,
        "created": _now(),
        "updated": _now(),
        "bbox": asdict(bbox),
        "config": {},
        "buildings": [],
        "failures": [],
    }


def load_manifest(path):
    p = Path(path)
    if not p.exists():
        raise GeoForgeError(f"manifest not found: {p}")
    return json.loads(p.read_text())


def save_manifest(manifest, out_dir):
    manifest["updated"] = _now()
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def resolve_transport(offline: bool, fixture_dir=None):
    if offline:
        if fixture_dir is None:
            fixture_dir = Path("fixtures")
        return OfflineFixtureTransport(fixture_dir)
    return HttpTransport()


def cmd_fetch(bbox: GeoBBox, out_dir, transport=None, overpass_url=None,
              tile_url=None, zoom=None, offline=False, fixture_dir=None):
    """Retrieve footprints and imagery for bbox; write footprints.json, the
    stitched satellite image, and per-building masked crops."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if transport is None:
        transport = resolve_transport(offline, fixture_dir)
    overpass_url = overpass_url or os.environ.get("GEOFORGE_OVERPASS_URL", DEFAULT_OVERPASS_URL)
    tile_url = tile_url or os.environ.get("GEOFORGE_TILE_URL", DEFAULT_TILE_URL)

    manifest = new_manifest(bbox, out)
    manifest["config"] = {
        "overpass_url": overpass_url,
        "tile_url": tile_url,
        "offline": bool(offline),
    }

    footprints = fetch_buildings(bbox, overpass_url, transport=transport)
    (out / "footprints.json").write_text(footprints_to_json(footprints))

    if zoom is None:
        zoom = zoom_for_extent(bbox)
    manifest["config"]["zoom"] = zoom
    image = fetch_and_stitch(bbox, zoom, tile_url, transport=transport)
    sat_path = out / "satellite.png"
    save_geoimage(image, sat_path)
    manifest["satellite_image"] = sat_path.name

    for i, fp in enumerate(footprints):
        rec = {
            "source_id": fp.source_id,
            "index": i,
            "footprints_file": "footprints.json",
        }
        try:
            masked = mask_with_footprint(image, fp)
            masked_path = out / f"b{i:03d}_masked.png"
            save_geoimage(masked, masked_path)
            rec["masked_image"] = masked_path.name
        except FootprintOutsideImage as e:
            manifest["failures"].append({"source_id": fp.source_id, "stage": "mask", "error": str(e)})
            log.warning("mask failed for %s: %s", fp.source_id, e)
        manifest["buildings"].append(rec)

    save_manifest(manifest, out)
    return manifest


def cmd_priorize(manifest_path, lod="all", n=64):
    """Rasterize each footprint and write SSVX priors for the requested LODs
    plus the full extrusion (`gt.ssvx`-style reference grid)."""
    manifest_path = Path(manifest_path)
    out = manifest_path.parent
    manifest = load_manifest(manifest_path)
    footprints = footprints_from_json((out / "footprints.json").read_text())
    by_id = {fp.source_id: fp for fp in footprints}

    levels = list(LodLevel) if lod == "all" else [LodLevel(int(lod))]
    manifest["config"]["prior_resolution"] = n
    manifest["config"]["prior_lods"] = [lv.value for lv in levels]

    for rec in manifest["buildings"]:
        fp = by_id.get(rec["source_id"])
        if fp is None:
            continue
        i = rec["index"]
        try:
            grid = rasterize_footprint(fp, n)
        except DegenerateFootprint as e:
            manifest["failures"].append(
                {"source_id": rec["source_id"], "stage": "priorize", "error": str(e)}
            )
            log.warning("priorize failed for %s: %s", rec["source_id"], e)
            continue
        gt_path = out / f"b{i:03d}_raster.ssvx"
        write_ssvx(grid, gt_path)
        rec["raster_grid"] = gt_path.name
        rec["priors"] = {}
        for lv in levels:
            prior = lod_prior(grid, lv)
            p = out / f"b{i:03d}_lod{lv.value}.ssvx"
            write_ssvx(prior, p)
            rec["priors"][str(lv.value)] = p.name

    save_manifest(manifest, out)
    return manifest


def cmd_generate(manifest_path, model_path, config: FlowConfig, prior_lod=1, tau=DEFAULT_TAU):
    """Run the latent round trip per building and evaluate against the
    rasterized footprint grid."""
    if not 0.0 <= config.lam <= 1.0:
        raise LambdaOutOfRange(f"lambda {config.lam} not in [0, 1]")
    manifest_path = Path(manifest_path)
    out = manifest_path.parent
    manifest = load_manifest(manifest_path)
    model = read_gftm(model_path)
    manifest["config"]["model"] = str(model_path)
    manifest["config"]["flow"] = asdict(config)
    manifest["config"]["generate_prior_lod"] = prior_lod

    for rec in manifest["buildings"]:
        priors = rec.get("priors") or {}
        prior_name = priors.get(str(prior_lod))
        if prior_name is None:
            continue
        i = rec["index"]
        try:
            prior = read_ssvx(out / prior_name)
            gen = generate(model, prior, None, config, n=prior.n)
            gen_path = out / f"b{i:03d}_generated.ssvx"
            write_ssvx(gen, gen_path)
            rec["generated_grid"] = gen_path.name
            if rec.get("raster_grid"):
                gt = read_ssvx(out / rec["raster_grid"])
                report = eval_report(gen, gt, tau)
                rep_path = out / f"b{i:03d}_eval.json"
                rep_path.write_text(report.to_json())
                rec["eval_report"] = rep_path.name
        except GeoForgeError as e:
            manifest["failures"].append(
                {"source_id": rec["source_id"], "stage": "generate", "error": str(e)}
            )
            log.warning("generate failed for %s: %s", rec["source_id"], e)

    save_manifest(manifest, out)
    return manifest


def cmd_eval(pred_path, gt_path, tau=DEFAULT_TAU, out_path=None):
    """Evaluate two SSVX grids and return the report (optionally written)."""
    pred = read_ssvx(pred_path)
    gt = read_ssvx(gt_path)
    report = eval_report(pred, gt, tau)
    if out_path:
        Path(out_path).write_text(report.to_json())
    return report


def exit_code(manifest) -> int:
    if manifest.get("failures"):
        return EXIT_PARTIAL if manifest.get("buildings") else EXIT_FATAL
    return EXIT_OK
