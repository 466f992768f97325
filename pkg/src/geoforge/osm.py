"""OpenStreetMap building ingest: Overpass queries, response parsing, heights.

Footprints come back as WGS84 rings plus a height estimate derived from OSM
tags. Multipolygon relations keep their inner rings as holes so shapes like
a courtyard block or an arch stay representable downstream.
"""

import json
import logging
import math
from dataclasses import dataclass, field

from .errors import InvalidBBox, MalformedResponse
from .geometry import ring_area

log = logging.getLogger(__name__)

MERCATOR_LAT_LIMIT = 85.0511

DEFAULT_OVERPASS_URL = "https://overpass-api.de/api/interpreter"


@dataclass(frozen=True)
class GeoBBox:
    """WGS84 bounding box. Latitudes are clamped to the Web Mercator limit."""

    min_lat: float
    max_lat: float
    min_lon: float
    max_lon: float

    def __post_init__(self):
        if not (self.min_lat < self.max_lat and self.min_lon < self.max_lon):
            raise InvalidBBox(f"degenerate bbox: {self}")
        if abs(self.min_lat) > MERCATOR_LAT_LIMIT or abs(self.max_lat) > MERCATOR_LAT_LIMIT:
            raise InvalidBBox(f"latitude outside Web Mercator limit: {self}")
        if self.min_lon < -180 or self.max_lon > 180:
            raise InvalidBBox(f"longitude out of range: {self}")


@dataclass
class GeoFootprint:
    """A building outline (closed outer ring + holes) with height attributes.

    Rings are lists of (lat, lon) pairs with first == last.
    """

    outer_ring: list
    holes: list = field(default_factory=list)
    height_m: float = 10.0
    min_height_m: float = 0.0
    source_id: str = ""
    raw_tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.outer_ring) < 4 or self.outer_ring[0] != self.outer_ring[-1]:
            raise MalformedResponse(
                f"footprint {self.source_id}: outer ring must be closed with >= 4 vertices"
            )
        for hole in self.holes:
            if len(hole) < 4 or hole[0] != hole[-1]:
                raise MalformedResponse(f"footprint {self.source_id}: unclosed hole ring")
        if not self.height_m > self.min_height_m:
            raise MalformedResponse(
                f"footprint {self.source_id}: height {self.height_m} <= min_height {self.min_height_m}"
            )

    def rings_lonlat(self):
        """All rings as (m, 2) arrays in (lon, lat) order for planar math."""
        import numpy as np

        out = [np.array([(lon, lat) for lat, lon in self.outer_ring])]
        for hole in self.holes:
            out.append(np.array([(lon, lat) for lat, lon in hole]))
        return out


@dataclass(frozen=True)
class HeightConfig:
    """Fallback chain for missing height tags."""

    meters_per_level: float = 3.0
    default_height_m: float = 10.0


def _fmt(v):
    """Format a coordinate without a trailing .0 and without precision loss."""
    if float(v) == int(v):
        return str(int(v))
    return repr(float(v))


def build_overpass_query(bbox: GeoBBox) -> str:
    """Overpass QL selecting building ways and relations in bbox, JSON output."""
    coords = f"({_fmt(bbox.min_lat)},{_fmt(bbox.min_lon)},{_fmt(bbox.max_lat)},{_fmt(bbox.max_lon)})"
    return (
        "[out:json][timeout:60];\n"
        "(\n"
        f'  way["building"]{coords};\n'
        f'  relation["building"]{coords};\n'
        ");\n"
        "out geom;\n"
    )


def _parse_length_m(text):
    """Parse a height-ish tag value like '25', '25 m', '25m'. None on failure."""
    if text is None:
        return None
    s = str(text).strip().lower()
    if s.endswith("m"):
        s = s[:-1].strip()
    try:
        return float(s)
    except ValueError:
        return None


def infer_height(raw_tags, config: HeightConfig = HeightConfig()) -> float:
    """Height in meters from tags: `height`, then `building:levels`, then default."""
    h = _parse_length_m(raw_tags.get("height"))
    if h is not None and h > 0:
        return h
    levels = _parse_length_m(raw_tags.get("building:levels"))
    if levels is not None and levels > 0:
        return levels * config.meters_per_level
    return config.default_height_m


def infer_min_height(raw_tags, config: HeightConfig = HeightConfig()) -> float:
    h = _parse_length_m(raw_tags.get("min_height"))
    if h is not None and h >= 0:
        return h
    return 0.0


def _geom_ring(geometry):
    """Overpass geometry list -> [(lat, lon), ...]."""
    return [(float(p["lat"]), float(p["lon"])) for p in geometry]


def _is_closed(ring):
    return len(ring) >= 4 and ring[0] == ring[-1]


def _stitch_segments(segments):
    """Join open way segments that share endpoints into closed rings.

    Returns (rings, leftover_count). Good enough for well-formed OSM
    multipolygons; anything unmatched is reported as leftover.
    """
    closed = [s for s in segments if _is_closed(s)]
    open_segs = [s for s in segments if not _is_closed(s)]
    while open_segs:
        cur = open_segs.pop(0)
        progressed = True
        while not _is_closed(cur) and progressed:
            progressed = False
            for i, seg in enumerate(open_segs):
                if seg[0] == cur[-1]:
                    cur = cur + seg[1:]
                elif seg[-1] == cur[-1]:
                    cur = cur + list(reversed(seg))[1:]
                else:
                    continue
                open_segs.pop(i)
                progressed = True
                break
        if _is_closed(cur):
            closed.append(cur)
        else:
            return closed, 1 + len(open_segs)
    return closed, 0


def parse_buildings_verbose(response_doc: str):
    """Parse an Overpass JSON response into footprints.

    Returns (footprints, warnings). One footprint per closed building way;
    multipolygon relations contribute one footprint with holes from inner
    members. Open ways are skipped with a warning string.
    """
    try:
        doc = json.loads(response_doc)
    except (json.JSONDecodeError, TypeError) as e:
        raise MalformedResponse(f"invalid JSON: {e}") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("elements"), list):
        raise MalformedResponse("response has no 'elements' array")

    footprints = []
    warnings = []
    config = HeightConfig()
    for el in doc["elements"]:
        if not isinstance(el, dict):
            continue
        tags = el.get("tags") or {}
        if "building" not in tags:
            continue
        etype = el.get("type")
        source_id = f"{etype}/{el.get('id')}"
        try:
            if etype == "way":
                ring = _geom_ring(el.get("geometry") or [])
                if not _is_closed(ring):
                    warnings.append(f"{source_id}: open way skipped")
                    continue
                footprints.append(
                    GeoFootprint(
                        outer_ring=ring,
                        holes=[],
                        height_m=infer_height(tags, config),
                        min_height_m=infer_min_height(tags, config),
                        source_id=source_id,
                        raw_tags=dict(tags),
                    )
                )
            elif etype == "relation":
                if tags.get("type", "multipolygon") != "multipolygon":
                    warnings.append(f"{source_id}: unsupported relation type skipped")
                    continue
                outers, inners = [], []
                for member in el.get("members") or []:
                    geometry = member.get("geometry")
                    if not geometry:
                        continue
                    seg = _geom_ring(geometry)
                    if member.get("role") == "inner":
                        inners.append(seg)
                    else:
                        outers.append(seg)
                outer_rings, leftover = _stitch_segments(outers)
                if leftover or not outer_rings:
                    warnings.append(f"{source_id}: could not close outer ring, skipped")
                    continue
                # largest outer ring wins when a relation has several
                outer = max(outer_rings, key=lambda r: abs(_ring_area_latlon(r)))
                hole_rings, hole_leftover = _stitch_segments(inners)
                if hole_leftover:
                    warnings.append(f"{source_id}: dropped {hole_leftover} unclosed inner segment(s)")
                footprints.append(
                    GeoFootprint(
                        outer_ring=outer,
                        holes=hole_rings,
                        height_m=infer_height(tags, config),
                        min_height_m=infer_min_height(tags, config),
                        source_id=source_id,
                        raw_tags=dict(tags),
                    )
                )
        except MalformedResponse as e:
            warnings.append(f"{source_id}: {e}")
    for w in warnings:
        log.warning("parse_buildings: %s", w)
    return footprints, warnings


def _ring_area_latlon(ring):
    import numpy as np

    arr = np.array([(lon, lat) for lat, lon in ring])
    return ring_area(arr)


def parse_buildings(response_doc: str):
    """list of GeoFootprint from an Overpass JSON response (warnings logged)."""
    footprints, _ = parse_buildings_verbose(response_doc)
    return footprints


def fetch_buildings(bbox: GeoBBox, endpoint: str = DEFAULT_OVERPASS_URL, transport=None):
    """Query Overpass for buildings in bbox.

    Composes build_overpass_query -> HTTP POST (3 attempts, exponential
    backoff) -> parse_buildings. `transport` is injectable for offline tests.
    """
    from .transport import HttpTransport, request_with_retry

    if transport is None:
        transport = HttpTransport()
    query = build_overpass_query(bbox)
    resp = request_with_retry(transport, "POST", endpoint, data=query.encode())
    return parse_buildings(resp.body.decode("utf-8"))


def footprints_to_json(footprints) -> str:
    """Serialize footprints to the footprints.json document format."""
    docs = [
        {
            "id": fp.source_id,
            "outer": [[lat, lon] for lat, lon in fp.outer_ring],
            "holes": [[[lat, lon] for lat, lon in hole] for hole in fp.holes],
            "height_m": fp.height_m,
            "min_height_m": fp.min_height_m,
            "tags": fp.raw_tags,
        }
        for fp in footprints
    ]
    return json.dumps(docs, indent=2, sort_keys=True)


def footprints_from_json(text: str):
    try:
        docs = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedResponse(f"invalid footprints.json: {e}") from e
    out = []
    for d in docs:
        out.append(
            GeoFootprint(
                outer_ring=[(lat, lon) for lat, lon in d["outer"]],
                holes=[[(lat, lon) for lat, lon in hole] for hole in d.get("holes", [])],
                height_m=float(d["height_m"]),
                min_height_m=float(d.get("min_height_m", 0.0)),
                source_id=str(d.get("id", "")),
                raw_tags=dict(d.get("tags", {})),
            )
        )
    return out
