"""Command-line entry point wiring the pipeline stages together."""

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .errors import GeoForgeError
from .flow import FlowConfig, TrainConfig, train_toy, write_gftm
from .latent import DEFAULT_C, DEFAULT_D
from .osm import GeoBBox
from .pipeline import (
    EXIT_FATAL,
    cmd_eval,
    cmd_fetch,
    cmd_generate,
    cmd_priorize,
    exit_code,
)
from .tiles import load_geoimage, refine_image, save_geoimage
from .voxel import read_ssvx, synth_building, synth_condition, write_ssvx

log = logging.getLogger(__name__)


def _parse_bbox(text):
    try:
        min_lat, min_lon, max_lat, max_lon = (float(v) for v in text.split(","))
    except ValueError:
        raise click.BadParameter("expected minlat,minlon,maxlat,maxlon")
    return GeoBBox(min_lat=min_lat, max_lat=max_lat, min_lon=min_lon, max_lon=max_lon)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--bbox", required=True, help="minlat,minlon,maxlat,maxlon")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--offline", is_flag=True, help="Serve all HTTP from recorded fixtures.")
@click.option("--fixtures", "fixture_dir", type=click.Path(), default=None,
              help="Fixture directory for --offline (default ./fixtures).")
@click.option("--overpass-url", default=None, envvar="GEOFORGE_OVERPASS_URL")
@click.option("--tile-url", default=None, envvar="GEOFORGE_TILE_URL")
@click.option("--zoom", type=int, default=None)
def fetch(bbox, out_dir, offline, fixture_dir, overpass_url, tile_url, zoom):
    """Retrieve footprints and satellite imagery for a bounding box."""
    try:
        manifest = cmd_fetch(_parse_bbox(bbox), out_dir, overpass_url=overpass_url,
                             tile_url=tile_url, zoom=zoom, offline=offline,
                             fixture_dir=fixture_dir)
    except GeoForgeError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_FATAL)
    click.echo(f"fetched {len(manifest['buildings'])} building(s) into {out_dir}")
    sys.exit(exit_code(manifest))


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--lod", default="all", type=click.Choice(["0", "1", "2", "all"]))
@click.option("--resolution", "n", default=64, type=int)
def priorize(manifest_path, lod, n):
    """Rasterize footprints into SSVX occupancy priors."""
    try:
        manifest = cmd_priorize(manifest_path, lod=lod, n=n)
    except GeoForgeError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_FATAL)
    sys.exit(exit_code(manifest))


@main.command("train-toy")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True),
              help="Directory of .ssvx shapes with optional .cond.json sidecars.")
@click.option("--epochs", default=40, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--latent-d", default=DEFAULT_D, type=int)
@click.option("--latent-c", default=DEFAULT_C, type=int)
def train_toy_cmd(corpus_dir, epochs, seed, out_path, latent_d, latent_c):
    """Train the toy velocity model on an SSVX corpus."""
    corpus = []
    for p in sorted(Path(corpus_dir).glob("*.ssvx")):
        grid = read_ssvx(p)
        cond_path = p.with_suffix(".cond.json")
        if cond_path.exists():
            cond = np.array(json.loads(cond_path.read_text()), dtype=np.float64)
        else:
            cond = np.zeros(8)
        corpus.append((grid, cond))
    if not corpus:
        click.echo(f"error: no .ssvx files in {corpus_dir}", err=True)
        sys.exit(EXIT_FATAL)
    try:
        model = train_toy(corpus, epochs, seed, TrainConfig(d=latent_d, c=latent_c))
    except GeoForgeError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_FATAL)
    write_gftm(model, out_path)
    click.echo(f"trained on {len(corpus)} shapes; loss "
               f"{model.meta['first_loss']:.4f} -> {model.meta['final_loss']:.4f}; wrote {out_path}")


@main.command("synth-corpus")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--count", default=500, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--resolution", "n", default=32, type=int)
def synth_corpus(out_dir, count, seed, n):
    """Generate a synthetic building corpus for toy training."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        grid, params = synth_building(seed + i, n)
        write_ssvx(grid, out / f"s{i:05d}.ssvx")
        cond = synth_condition(params, n)
        (out / f"s{i:05d}.cond.json").write_text(json.dumps(cond.tolist()))
    click.echo(f"wrote {count} shapes to {out_dir}")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--lambda", "lam", default=0.5, type=float)
@click.option("--steps", default=50, type=int)
@click.option("--cfg", default=7.5, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--prior-lod", default=1, type=int)
def generate(manifest_path, model_path, lam, steps, cfg, seed, prior_lod):
    """Generate detailed grids from priors via the flow sampler."""
    try:
        config = FlowConfig(steps=steps, cfg_scale=cfg, lam=lam, seed=seed)
        manifest = cmd_generate(manifest_path, model_path, config, prior_lod=prior_lod)
    except GeoForgeError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_FATAL)
    sys.exit(exit_code(manifest))


@main.command("eval")
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--gt", required=True, type=click.Path(exists=True))
@click.option("--tau", default=0.05, type=float)
@click.option("--out", "out_path", default=None, type=click.Path())
def eval_cmd(pred, gt, tau, out_path):
    """Evaluate a predicted SSVX grid against ground truth."""
    try:
        report = cmd_eval(pred, gt, tau, out_path)
    except GeoForgeError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_FATAL)
    click.echo(report.to_json())


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--provider", default="mock", type=click.Choice(["mock", "remote"]))
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--refine-url", default=None, envvar="GEOFORGE_REFINE_URL")
def refine(image_path, provider, out_path, refine_url):
    """Refine a satellite crop through the provider abstraction."""
    try:
        image = load_geoimage(image_path)
        refined = refine_image(image, provider=provider, endpoint=refine_url)
    except GeoForgeError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_FATAL)
    out_path = out_path or image_path
    save_geoimage(refined, out_path)
    click.echo(f"refined image written to {out_path}")


if __name__ == "__main__":
    main()
