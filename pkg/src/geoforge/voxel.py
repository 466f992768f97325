"""Binary occupancy grids: footprint extrusion, LOD priors, synthetic shapes.

The grid lives in a normalized cube [-0.5, 0.5]^3 with z the height axis and
z = -0.5 at ground level. Linear voxel index is x + n*y + n^2*z.
"""

import logging
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DegenerateFootprint, EmptyGrid, FormatError, ResolutionMismatch
from .geometry import points_in_rings, ring_area

log = logging.getLogger(__name__)

EARTH_M_PER_DEG = 111_320.0

SSVX_MAGIC = b"SSVX"
SSVX_VERSION = 1


class LodLevel(Enum):
    LOD0 = 0
    LOD1 = 1
    LOD2 = 2


@dataclass(frozen=True)
class VoxelGrid:
    """N^3 binary occupancy; occ is a bool array indexed [x, y, z]."""

    occ: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occ, dtype=bool)
        if occ.ndim != 3 or len(set(occ.shape)) != 1:
            raise ResolutionMismatch(f"occupancy must be cubic, got shape {occ.shape}")
        occ.setflags(write=False)
        object.__setattr__(self, "occ", occ)

    @property
    def n(self):
        return self.occ.shape[0]

    @property
    def count(self):
        return int(self.occ.sum())

    @property
    def is_empty(self):
        return not self.occ.any()

    def __eq__(self, other):
        return isinstance(other, VoxelGrid) and np.array_equal(self.occ, other.occ)

    def __hash__(self):
        return hash((self.n, self.occ.tobytes()))

    def centers(self):
        """(k, 3) array of occupied voxel centers in the normalized frame."""
        idx = np.argwhere(self.occ)
        return (idx + 0.5) / self.n - 0.5


def voxel_centers_1d(n):
    """Coordinates of voxel centers along one axis of the normalized cube."""
    return (np.arange(n) + 0.5) / n - 0.5


def rasterize_footprint(footprint, n: int, height_config=None) -> VoxelGrid:
    """Extrude a footprint polygon into an n^3 occupancy grid.

    The polygon is projected to local meters (equirectangular about its
    centroid), its horizontal bounding square scaled to the cube; the true
    height-to-width ratio is preserved up to the cube ceiling (taller
    buildings are clamped with a warning).
    """
    if n < 8:
        raise ResolutionMismatch(f"n must be >= 8, got {n}")
    rings_ll = footprint.rings_lonlat()  # (lon, lat)
    outer = rings_ll[0]
    lat0 = float(np.mean(outer[:-1, 1]))
    lon0 = float(np.mean(outer[:-1, 0]))
    cos_lat = math.cos(math.radians(lat0))

    rings_m = []
    for r in rings_ll:
        xm = (r[:, 0] - lon0) * EARTH_M_PER_DEG * cos_lat
        ym = (r[:, 1] - lat0) * EARTH_M_PER_DEG
        rings_m.append(np.column_stack([xm, ym]))

    outer_m = rings_m[0]
    if abs(ring_area(outer_m)) < 1e-9:
        raise DegenerateFootprint(f"{footprint.source_id}: zero-area footprint")

    xmin, ymin = outer_m[:, 0].min(), outer_m[:, 1].min()
    xmax, ymax = outer_m[:, 0].max(), outer_m[:, 1].max()
    extent = max(xmax - xmin, ymax - ymin)
    if extent <= 0:
        raise DegenerateFootprint(f"{footprint.source_id}: degenerate horizontal extent")
    cx, cy = (xmin + xmax) / 2, (ymin + ymax) / 2

    # frame coords: 1 unit == `extent` meters, footprint centered in xy
    rings_f = [np.column_stack([(r[:, 0] - cx) / extent, (r[:, 1] - cy) / extent]) for r in rings_m]

    height_f = footprint.height_m / extent
    min_height_f = footprint.min_height_m / extent
    if height_f > 1.0:
        log.warning(
            "%s: height %.1fm exceeds cube at extent %.1fm, clamping",
            footprint.source_id, footprint.height_m, extent,
        )
        height_f = 1.0
        min_height_f = min(min_height_f, 1.0)

    c = voxel_centers_1d(n)
    gx, gy = np.meshgrid(c, c, indexing="ij")
    inside = points_in_rings(gx.ravel(), gy.ravel(), rings_f).reshape(n, n)
    if not inside.any():
        raise DegenerateFootprint(f"{footprint.source_id}: footprint covers no voxel centers")

    zc = c + 0.5  # height above ground in frame units
    zmask = (zc >= min_height_f) & (zc <= height_f)
    occ = inside[:, :, None] & zmask[None, None, :]
    if not occ.any():
        raise DegenerateFootprint(f"{footprint.source_id}: extrusion covers no voxel layers")
    return VoxelGrid(occ)


def lod_prior(gt: VoxelGrid, level: LodLevel) -> VoxelGrid:
    """Coarse prior for a grid: bounding cuboid, or cross-section extrusions.

    LOD0: axis-aligned bounding cuboid of the occupancy.
    LOD1: union of all occupied z-slices, replicated across the occupied
          z-range.
    LOD2: split height minimizing total volume of the two-band union
          construction (each band's slice union replicated over the band's
          occupied z-range); ties broken by the smallest split.
    """
    if gt.is_empty:
        raise EmptyGrid("cannot build a prior for an empty grid")
    occ = gt.occ
    n = gt.n

    if level is LodLevel.LOD0:
        idx = np.argwhere(occ)
        lo = idx.min(axis=0)
        hi = idx.max(axis=0)
        out = np.zeros_like(occ)
        out[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] = True
        return VoxelGrid(out)

    z_any = occ.any(axis=(0, 1))
    zs = np.flatnonzero(z_any)

    if level is LodLevel.LOD1:
        union = occ.any(axis=2)
        out = np.zeros_like(occ)
        out[:, :, zs[0]:zs[-1] + 1] = union[:, :, None]
        return VoxelGrid(out)

    # LOD2: prefix/suffix slice unions along z
    pre = np.logical_or.accumulate(occ, axis=2)           # pre[..., h-1] = union of slices < h
    suf = np.logical_or.accumulate(occ[:, :, ::-1], axis=2)[:, :, ::-1]  # suf[..., h] = union of slices >= h
    pre_sum = pre.sum(axis=(0, 1))
    suf_sum = suf.sum(axis=(0, 1))

    def band_extent(lo_z, hi_z):
        band = zs[(zs >= lo_z) & (zs <= hi_z)]
        if len(band) == 0:
            return None
        return band[0], band[-1]

    best = None
    for h in range(1, n):
        vol = 0
        lower = band_extent(0, h - 1)
        if lower:
            vol += int(pre_sum[h - 1]) * (lower[1] - lower[0] + 1)
        upper = band_extent(h, n - 1)
        if upper:
            vol += int(suf_sum[h]) * (upper[1] - upper[0] + 1)
        if best is None or vol < best[0]:
            best = (vol, h, lower, upper)

    _, h, lower, upper = best
    out = np.zeros_like(occ)
    if lower:
        out[:, :, lower[0]:lower[1] + 1] = pre[:, :, h - 1][:, :, None]
    if upper:
        out[:, :, upper[0]:upper[1] + 1] = suf[:, :, h][:, :, None]
    return VoxelGrid(out)


def _rand_span(rng, n, min_size, lo=0, hi=None):
    hi = n if hi is None else hi
    size = int(rng.integers(min_size, hi - lo - 1))
    start = int(rng.integers(lo, hi - size))
    return start, start + size  # half-open


def synth_building(seed: int, n: int):
    """Deterministic building-like shape generator for the toy corpus.

    Returns (VoxelGrid, params dict). Families: rectangle, L, ring; an
    optional tower (own cross-section) sits on top and stays inside the
    base footprint so grids are always 6-connected.
    """
    if n < 16:
        raise ResolutionMismatch(f"n must be >= 16, got {n}")
    rng = np.random.default_rng(seed)
    family = ["rect", "l", "ring"][int(rng.integers(3))]
    min_size = max(4, n // 6)

    base = np.zeros((n, n), dtype=bool)
    x0, x1 = _rand_span(rng, n, min_size)
    y0, y1 = _rand_span(rng, n, min_size)
    base[x0:x1, y0:y1] = True
    tower_region = (x0, x1, y0, y1)

    if family == "l":
        # second rect overlapping the first
        ox0 = int(rng.integers(x0, x1 - 2))
        oy0 = int(rng.integers(y0, y1 - 2))
        ox1 = min(n, ox0 + int(rng.integers(min_size, n // 2)))
        oy1 = min(n, oy0 + int(rng.integers(min_size, n // 2)))
        base[ox0:ox1, oy0:oy1] = True
    elif family == "ring":
        wall = max(2, n // 16)
        hx0, hx1 = x0 + wall, x1 - wall
        hy0, hy1 = y0 + wall, y1 - wall
        if hx1 - hx0 >= 2 and hy1 - hy0 >= 2:
            base[hx0:hx1, hy0:hy1] = False
            tower_region = (x0, x0 + wall, y0, y1)  # on the ring wall
        else:
            family = "rect"

    base_h = int(rng.integers(n // 4, 3 * n // 4))
    occ = np.zeros((n, n, n), dtype=bool)
    occ[:, :, :base_h] = base[:, :, None]

    has_tower = bool(rng.random() < 0.5)
    tower_h = 0
    if has_tower:
        tx0, tx1, ty0, ty1 = tower_region
        if tx1 - tx0 > 2 and ty1 - ty0 > 2:
            sx0 = int(rng.integers(tx0, tx1 - 2))
            sy0 = int(rng.integers(ty0, ty1 - 2))
            sx1 = int(rng.integers(sx0 + 2, tx1))
            sy1 = int(rng.integers(sy0 + 2, ty1))
            tower_h = int(rng.integers(2, max(3, n - base_h)))
            tower = np.zeros((n, n), dtype=bool)
            tower[sx0:sx1, sy0:sy1] = True
            tower &= base  # stay on top of the base so the shape is connected
            if tower.any():
                occ[:, :, base_h:base_h + tower_h] = tower[:, :, None]
            else:
                has_tower = False
                tower_h = 0
        else:
            has_tower = False

    params = {
        "seed": seed,
        "family": family,
        "base_h": base_h,
        "has_tower": has_tower,
        "tower_h": tower_h,
        "base_area": int(base.sum()),
    }
    log.debug("synth_building: %s", params)
    return VoxelGrid(occ), params


def synth_shape(seed: int, n: int) -> VoxelGrid:
    return synth_building(seed, n)[0]


def synth_condition(params, n: int) -> np.ndarray:
    """Fixed-length descriptor of a synthetic shape family (toy conditioning)."""
    fam = {"rect": 0, "l": 1, "ring": 2}[params["family"]]
    cond = np.zeros(8, dtype=np.float64)
    cond[fam] = 1.0
    cond[3] = 1.0 if params["has_tower"] else 0.0
    cond[4] = params["base_h"] / n
    cond[5] = params["tower_h"] / n
    cond[6] = params["base_area"] / (n * n)
    cond[7] = 1.0
    return cond


def grid_to_bytes(grid: VoxelGrid) -> bytes:
    """SSVX serialization: header + LSB-first packed bits, index x + n*y + n^2*z."""
    n = grid.n
    header = SSVX_MAGIC + struct.pack("<III", SSVX_VERSION, n, 0)
    bits = grid.occ.ravel(order="F")  # x fastest -> linear index x + n*y + n^2*z
    return header + np.packbits(bits, bitorder="little").tobytes()


def grid_from_bytes(data: bytes) -> VoxelGrid:
    if len(data) < 16:
        raise FormatError("SSVX: truncated header")
    if data[:4] != SSVX_MAGIC:
        raise FormatError(f"SSVX: bad magic {data[:4]!r}")
    version, n, reserved = struct.unpack("<III", data[4:16])
    if version != SSVX_VERSION:
        raise FormatError(f"SSVX: unsupported version {version}")
    nbytes = (n ** 3 + 7) // 8
    payload = data[16:]
    if len(payload) != nbytes:
        raise FormatError(f"SSVX: expected {nbytes} payload bytes, got {len(payload)}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")[: n ** 3]
    occ = bits.astype(bool).reshape((n, n, n), order="F")
    return VoxelGrid(occ)


def write_ssvx(grid: VoxelGrid, path):
    Path(path).write_bytes(grid_to_bytes(grid))


def read_ssvx(path) -> VoxelGrid:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"SSVX: no such file {p}")
    return grid_from_bytes(p.read_bytes())
