"""Web Mercator tile math, tile stitching, footprint masking, refinement.

Standard slippy-map scheme: tile x grows east, tile y grows south, 256 px
tiles by default. Stitched images carry a linear geo transform (origin of
pixel (0,0) plus degrees-per-pixel at the stitch zoom) in a JSON sidecar.
"""

import base64
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    FootprintOutsideImage,
    MissingCredentials,
    NetworkError,
    OutOfProjection,
    ProviderError,
    TileDecodeError,
)
from .geometry import points_in_rings
from .osm import MERCATOR_LAT_LIMIT, GeoBBox
from .transport import HttpTransport, request_with_retry

log = logging.getLogger(__name__)

TILE_SIZE = 256
MAX_ZOOM = 19
MAX_INFLIGHT_TILES = 4

REFINE_KEY_ENV = "GEOFORGE_REFINE_KEY"

DEFAULT_REFINE_PROMPT = """\
Input: a single nadir satellite photograph of one building and its immediate
surroundings, possibly blurry or low-resolution.

Desired output: the same scene, same framing and same viewpoint, rendered as
a sharp, high-resolution nadir photograph.

Operations: deblur, increase effective resolution, recover roof texture and
edge detail, keep colors natural.

Do not: move, add, or remove any structure; do not change the viewpoint,
scale, orientation, lighting direction, or image aspect ratio.
"""


@dataclass(frozen=True)
class TileCoord:
    zoom: int
    x: int
    y: int

    def __post_init__(self):
        if not 0 <= self.zoom <= 22:
            raise OutOfProjection(f"zoom {self.zoom} out of range")
        limit = 1 << self.zoom
        if not (0 <= self.x < limit and 0 <= self.y < limit):
            raise OutOfProjection(f"tile ({self.x}, {self.y}) out of range at zoom {self.zoom}")


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel-center -> (lat, lon) map; lat decreases with row."""

    origin_lat: float
    origin_lon: float
    deg_per_px_x: float
    deg_per_px_y: float
    zoom: int

    def pixel_latlon(self, rows, cols):
        lat = self.origin_lat - (np.asarray(rows) + 0.5) * self.deg_per_px_y
        lon = self.origin_lon + (np.asarray(cols) + 0.5) * self.deg_per_px_x
        return lat, lon

    def to_json(self) -> str:
        return json.dumps(
            {
                "origin_lat": self.origin_lat,
                "origin_lon": self.origin_lon,
                "deg_per_px_x": self.deg_per_px_x,
                "deg_per_px_y": self.deg_per_px_y,
                "zoom": self.zoom,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str):
        d = json.loads(text)
        return cls(
            origin_lat=d["origin_lat"], origin_lon=d["origin_lon"],
            deg_per_px_x=d["deg_per_px_x"], deg_per_px_y=d["deg_per_px_y"],
            zoom=d["zoom"],
        )


@dataclass(frozen=True)
class GeoImage:
    """RGBA raster with a geo transform; alpha==0 marks background."""

    pixels: np.ndarray  # (h, w, 4) uint8
    geo: GeoTransform

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 4 or px.shape[0] < 1 or px.shape[1] < 1:
            raise TileDecodeError(f"GeoImage needs (h, w, 4) uint8 pixels, got {px.shape}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def latlon_to_tile_f(lat: float, lon: float, zoom: int):
    """Fractional slippy-map tile coordinates (x_f, y_f)."""
    if abs(lat) > MERCATOR_LAT_LIMIT:
        raise OutOfProjection(f"latitude {lat} outside Web Mercator limit")
    if not -180.0 <= lon <= 180.0:
        raise OutOfProjection(f"longitude {lon} out of range")
    n = 2.0 ** zoom
    phi = math.radians(lat)
    x_f = (lon + 180.0) / 360.0 * n
    y_f = (1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0 * n
    return x_f, y_f


def latlon_to_tile(lat: float, lon: float, zoom: int):
    """Containing tile plus fractional offset within it.

    Coordinates sitting exactly on the east/south edge of the tile grid are
    assigned to the last tile with offset 1.0.
    """
    x_f, y_f = latlon_to_tile_f(lat, lon, zoom)
    limit = 1 << zoom
    tx = min(int(math.floor(x_f)), limit - 1)
    ty = min(int(math.floor(y_f)), limit - 1)
    return TileCoord(zoom, tx, ty), (x_f - tx, y_f - ty)


def tile_to_latlon(zoom: int, x_f: float, y_f: float):
    """Inverse mercator map of fractional tile coordinates."""
    n = 2.0 ** zoom
    lon = x_f / n * 360.0 - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * y_f / n))))
    return lat, lon


def zoom_for_extent(bbox: GeoBBox, min_pixels: int = 512, tile_size: int = TILE_SIZE,
                    max_zoom: int = MAX_ZOOM) -> int:
    """Smallest zoom at which the bbox's longer side spans >= min_pixels."""
    for zoom in range(max_zoom + 1):
        x0, y0 = latlon_to_tile_f(bbox.max_lat, bbox.min_lon, zoom)
        x1, y1 = latlon_to_tile_f(bbox.min_lat, bbox.max_lon, zoom)
        span = max(x1 - x0, y1 - y0) * tile_size
        if span >= min_pixels:
            return zoom
    return max_zoom


def _fill_template(template: str, tile: TileCoord) -> str:
    url = template.replace("{z}", str(tile.zoom)).replace("{x}", str(tile.x)).replace("{y}", str(tile.y))
    key = os.environ.get("GEOFORGE_TILE_KEY")
    if key and "{key}" in url:
        url = url.replace("{key}", key)
    return url


def fetch_and_stitch(bbox: GeoBBox, zoom: int, url_template: str, transport=None,
                     tile_size: int = TILE_SIZE, max_inflight: int = MAX_INFLIGHT_TILES) -> GeoImage:
    """Fetch the minimal tile rectangle covering bbox, stitch, crop to bbox.

    Tile fetches run on a bounded thread pool; placement is by tile index so
    the stitched result does not depend on arrival order.
    """
    for ph in ("{z}", "{x}", "{y}"):
        if ph not in url_template:
            raise ValueError(f"url_template missing placeholder {ph}")
    if transport is None:
        transport = HttpTransport()

    xf_w, yf_n = latlon_to_tile_f(bbox.max_lat, bbox.min_lon, zoom)
    xf_e, yf_s = latlon_to_tile_f(bbox.min_lat, bbox.max_lon, zoom)
    tx0, tx1 = int(math.floor(xf_w)), int(math.ceil(xf_e)) - 1
    ty0, ty1 = int(math.floor(yf_n)), int(math.ceil(yf_s)) - 1
    tiles = [TileCoord(zoom, x, y) for y in range(ty0, ty1 + 1) for x in range(tx0, tx1 + 1)]

    def fetch_one(tile):
        url = _fill_template(url_template, tile)
        try:
            resp = request_with_retry(transport, "GET", url)
        except NetworkError as e:
            raise NetworkError(f"tile z={tile.zoom} x={tile.x} y={tile.y}: {e}") from e
        try:
            img = Image.open(io.BytesIO(resp.body)).convert("RGBA")
        except (UnidentifiedImageError, OSError) as e:
            raise TileDecodeError(f"tile z={tile.zoom} x={tile.x} y={tile.y}: {e}") from e
        if img.size != (tile_size, tile_size):
            img = img.resize((tile_size, tile_size))
        return tile, np.asarray(img, dtype=np.uint8)

    canvas = np.zeros(((ty1 - ty0 + 1) * tile_size, (tx1 - tx0 + 1) * tile_size, 4), dtype=np.uint8)
    with ThreadPoolExecutor(max_workers=max_inflight) as pool:
        for tile, data in pool.map(fetch_one, tiles):
            r = (tile.y - ty0) * tile_size
            c = (tile.x - tx0) * tile_size
            canvas[r:r + tile_size, c:c + tile_size] = data

    # crop to the bbox's pixel footprint within the stitched canvas
    left = int(math.floor((xf_w - tx0) * tile_size))
    right = int(math.ceil((xf_e - tx0) * tile_size))
    top = int(math.floor((yf_n - ty0) * tile_size))
    bottom = int(math.ceil((yf_s - ty0) * tile_size))
    crop = canvas[top:bottom, left:right]

    lat_nw, lon_nw = tile_to_latlon(zoom, tx0 + left / tile_size, ty0 + top / tile_size)
    lat_se, lon_se = tile_to_latlon(zoom, tx0 + right / tile_size, ty0 + bottom / tile_size)
    geo = GeoTransform(
        origin_lat=lat_nw,
        origin_lon=lon_nw,
        deg_per_px_x=(lon_se - lon_nw) / crop.shape[1],
        deg_per_px_y=(lat_nw - lat_se) / crop.shape[0],
        zoom=zoom,
    )
    return GeoImage(pixels=crop, geo=geo)


def expected_crop_size(bbox: GeoBBox, zoom: int, tile_size: int = TILE_SIZE):
    """(width, height) fetch_and_stitch will produce, from the tile math alone."""
    xf_w, yf_n = latlon_to_tile_f(bbox.max_lat, bbox.min_lon, zoom)
    xf_e, yf_s = latlon_to_tile_f(bbox.min_lat, bbox.max_lon, zoom)
    tx0, ty0 = int(math.floor(xf_w)), int(math.floor(yf_n))
    w = int(math.ceil((xf_e - tx0) * tile_size)) - int(math.floor((xf_w - tx0) * tile_size))
    h = int(math.ceil((yf_s - ty0) * tile_size)) - int(math.floor((yf_n - ty0) * tile_size))
    return w, h


def mask_with_footprint(image: GeoImage, footprint) -> GeoImage:
    """Keep pixels whose center falls inside the footprint (even-odd rule,
    holes punched out); everything else gets alpha=0."""
    h, w = image.height, image.width
    geo = image.geo
    lat_top, _ = geo.pixel_latlon(0, 0)
    lat_bot, _ = geo.pixel_latlon(h - 1, 0)
    _, lon_left = geo.pixel_latlon(0, 0)
    _, lon_right = geo.pixel_latlon(0, w - 1)
    ring = np.array(footprint.outer_ring)
    if (ring[:, 0].max() < min(lat_top, lat_bot) or ring[:, 0].min() > max(lat_top, lat_bot)
            or ring[:, 1].max() < min(lon_left, lon_right) or ring[:, 1].min() > max(lon_left, lon_right)):
        raise FootprintOutsideImage(f"{footprint.source_id}: outer ring outside image extent")

    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    lat, lon = geo.pixel_latlon(rows.ravel(), cols.ravel())
    inside = points_in_rings(lon, lat, footprint.rings_lonlat()).reshape(h, w)

    out = image.pixels.copy()
    out[~inside, 3] = 0
    out[inside, 3] = 255
    return GeoImage(pixels=out, geo=geo)


def refine_image(image: GeoImage, provider: str = "mock", prompt: str = None,
                 endpoint: str = None, transport=None) -> GeoImage:
    """Image-refinement step behind a provider abstraction.

    `mock` returns the input unchanged; `remote` POSTs the PNG plus an
    instruction prompt to a configurable image-edit endpoint and decodes
    the returned image.
    """
    if provider == "mock":
        return image
    if provider != "remote":
        raise ValueError(f"unknown provider {provider!r}")
    key = os.environ.get(REFINE_KEY_ENV)
    if not key:
        raise MissingCredentials(f"remote refinement requires {REFINE_KEY_ENV}")
    if endpoint is None:
        endpoint = os.environ.get("GEOFORGE_REFINE_URL")
    if not endpoint:
        raise ProviderError("no refinement endpoint configured (--refine-url / GEOFORGE_REFINE_URL)")
    if transport is None:
        transport = HttpTransport()
    body = json.dumps({
        "image_b64": base64.b64encode(image_to_png_bytes(image)).decode("ascii"),
        "prompt": prompt or DEFAULT_REFINE_PROMPT,
    }).encode()
    resp = transport.request("POST", endpoint, data=body,
                             headers={"Authorization": f"Bearer {key}",
                                      "Content-Type": "application/json"})
    if resp.status != 200:
        raise ProviderError(f"refinement endpoint returned HTTP {resp.status}: {resp.body[:200]!r}")
    try:
        img = Image.open(io.BytesIO(resp.body)).convert("RGBA")
    except (UnidentifiedImageError, OSError) as e:
        raise ProviderError(f"could not decode refined image: {e}") from e
    return GeoImage(pixels=np.asarray(img, dtype=np.uint8), geo=image.geo)


def image_to_png_bytes(image: GeoImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image.pixels, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def save_geoimage(image: GeoImage, path):
    """PNG plus `<path>.geo.json` sidecar with the geo transform."""
    p = Path(path)
    p.write_bytes(image_to_png_bytes(image))
    Path(str(p) + ".geo.json").write_text(image.geo.to_json())


def load_geoimage(path) -> GeoImage:
    p = Path(path)
    img = Image.open(p).convert("RGBA")
    geo = GeoTransform.from_json(Path(str(p) + ".geo.json").read_text())
    return GeoImage(pixels=np.asarray(img, dtype=np.uint8), geo=geo)
