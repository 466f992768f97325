"""2D polygon helpers: even-odd point-in-polygon tests on rings with holes.

A ring is an (m, 2) float array of vertices with first == last. A polygon is
a list of rings; the first ring is the outer boundary, the rest are holes.
The even-odd rule over the concatenated edge set handles holes for free.
"""

import numpy as np


def ring_area(ring):
    """Signed shoelace area of a closed ring."""
    x = ring[:, 0]
    y = ring[:, 1]
    return 0.5 * np.sum(x[:-1] * y[1:] - x[1:] * y[:-1])


def points_in_rings(px, py, rings):
    """Even-odd inside test for many query points against a set of rings.

    px, py: 1D arrays of query coordinates.
    Returns a bool array; a point is inside when a rightward ray crosses
    the combined edge set an odd number of times.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    crossings = np.zeros(px.shape, dtype=np.int64)
    for ring in rings:
        ring = np.asarray(ring, dtype=float)
        for i in range(len(ring) - 1):
            x1, y1 = ring[i]
            x2, y2 = ring[i + 1]
            if y1 == y2:
                continue
            straddles = (y1 <= py) != (y2 <= py)
            if not straddles.any():
                continue
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            crossings += straddles & (px < xint)
    return (crossings % 2) == 1


def point_in_rings(x, y, rings):
    """Scalar convenience wrapper around points_in_rings."""
    return bool(points_in_rings(np.array([x]), np.array([y]), rings)[0])
