"""Regenerate the offline replay fixtures bundled with the repo.

Writes fixtures/overpass_block.json (a recorded-style Overpass response with
three closed building ways and one multipolygon with a hole) and the solid-
color satellite tiles the offline pipeline stitches for the same block.

Run from the repo root: python demos/make_fixtures.py
"""

import json
import math
from pathlib import Path

from PIL import Image

from geoforge.osm import GeoBBox
from geoforge.tiles import latlon_to_tile_f, zoom_for_extent

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

BBOX = GeoBBox(min_lat=47.3600, max_lat=47.3610, min_lon=8.5400, max_lon=8.5415)


def rect_ring(lat0, lat1, lon0, lon1):
    return [
        {"lat": lat0, "lon": lon0},
        {"lat": lat0, "lon": lon1},
        {"lat": lat1, "lon": lon1},
        {"lat": lat1, "lon": lon0},
        {"lat": lat0, "lon": lon0},
    ]


def overpass_doc():
    elements = [
        {
            "type": "way",
            "id": 101,
            "tags": {"building": "yes", "height": "12 m"},
            "geometry": rect_ring(47.36010, 47.36030, 8.54010, 8.54040),
        },
        {
            "type": "way",
            "id": 102,
            "tags": {"building": "apartments", "building:levels": "4"},
            "geometry": rect_ring(47.36040, 47.36060, 8.54050, 8.54080),
        },
        {
            "type": "way",
            "id": 103,
            "tags": {"building": "yes"},
            "geometry": [
                {"lat": 47.36070, "lon": 8.54010},
                {"lat": 47.36070, "lon": 8.54050},
                {"lat": 47.36090, "lon": 8.54050},
                {"lat": 47.36090, "lon": 8.54030},
                {"lat": 47.36080, "lon": 8.54030},
                {"lat": 47.36080, "lon": 8.54010},
                {"lat": 47.36070, "lon": 8.54010},
            ],
        },
        {
            "type": "relation",
            "id": 201,
            "tags": {"building": "yes", "type": "multipolygon", "height": "20"},
            "members": [
                {
                    "type": "way",
                    "ref": 9001,
                    "role": "outer",
                    "geometry": rect_ring(47.36020, 47.36060, 8.54090, 8.54140),
                },
                {
                    "type": "way",
                    "ref": 9002,
                    "role": "inner",
                    "geometry": rect_ring(47.36035, 47.36045, 8.54105, 8.54125),
                },
            ],
        },
    ]
    return {"version": 0.6, "generator": "geoforge-fixture", "elements": elements}


def tile_color(x, y):
    # distinct, deterministic per-tile colors so stitching is checkable
    return ((x * 37) % 200 + 30, (y * 53) % 200 + 30, ((x + y) * 29) % 200 + 30, 255)


def write_tiles(zoom):
    xf0, yf0 = latlon_to_tile_f(BBOX.max_lat, BBOX.min_lon, zoom)
    xf1, yf1 = latlon_to_tile_f(BBOX.min_lat, BBOX.max_lon, zoom)
    count = 0
    for x in range(int(math.floor(xf0)), int(math.ceil(xf1))):
        for y in range(int(math.floor(yf0)), int(math.ceil(yf1))):
            out = FIXTURES / "tiles" / str(zoom) / str(x) / f"{y}.png"
            out.parent.mkdir(parents=True, exist_ok=True)
            Image.new("RGBA", (256, 256), tile_color(x, y)).save(out)
            count += 1
    return count


def main():
    FIXTURES.mkdir(exist_ok=True)
    (FIXTURES / "overpass_block.json").write_text(json.dumps(overpass_doc(), indent=2))
    zoom = zoom_for_extent(BBOX)
    count = write_tiles(zoom)
    print(f"wrote overpass_block.json and {count} tiles at zoom {zoom}")


if __name__ == "__main__":
    main()
