"""Small 3D geometry kernel used by the rule calculators.

All functions accept array-likes of shape (3,) (or (2,) for planar
distances) and work in the normalized-image coordinate system: x grows
rightward, y grows downward, z more negative toward the camera.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateGeometry

_EPS = 1e-12


def angle_between_deg(v1, v2) -> float:
    """Angle between two vectors in degrees, in [0, 180].

    Raises DegenerateGeometry when either vector is (numerically) zero.
    """
    a = np.asarray(v1, dtype=float)
    b = np.asarray(v2, dtype=float)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < _EPS or nb < _EPS:
        raise DegenerateGeometry("zero-length vector in angle computation")
    cos = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def point_segment_distance(p, a, b) -> float:
    """Distance from point p to the segment [a, b].

    A zero-length segment degrades to point-to-point distance.
    """
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom < _EPS:
        return float(np.linalg.norm(p - a))
    t = float(np.dot(p - a, ab)) / denom
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(p - (a + t * ab)))


def point_polyline_distance(p, pts) -> float:
    """Minimum distance from p to the polyline through pts (>= 1 point)."""
    pts = [np.asarray(q, dtype=float) for q in pts]
    if not pts:
        raise ValueError("polyline needs at least one point")
    if len(pts) == 1:
        return float(np.linalg.norm(np.asarray(p, dtype=float) - pts[0]))
    return min(
        point_segment_distance(p, pts[i], pts[i + 1]) for i in range(len(pts) - 1)
    )


def cross(v1, v2) -> np.ndarray:
    """3D cross product as a float array."""
    return np.cross(np.asarray(v1, dtype=float), np.asarray(v2, dtype=float))
