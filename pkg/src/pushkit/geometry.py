"""Small planar geometry helpers shared across the package.

Conventions used everywhere:

* world and object frames are right-handed, angles in radians,
  counter-clockwise positive;
* an object frame is centered on the object centroid with +x along the
  object's length axis;
* every stored orientation lies in the half-open interval (-pi, pi].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, TWO_PI)


def rot(theta: float) -> np.ndarray:
    """2x2 rotation matrix for a CCW rotation by theta."""
    c = np.cos(theta)
    s = np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotate(vec, theta: float) -> np.ndarray:
    """Rotate a 2-vector (or an (n, 2) array of them) CCW by theta."""
    v = np.asarray(vec, dtype=float)
    c = np.cos(theta)
    s = np.sin(theta)
    x = v[..., 0]
    y = v[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1)


@dataclass(frozen=True)
class Pose2D:
    """Planar pose (x, y, theta); theta is wrapped on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_world(self, point_obj) -> np.ndarray:
        """Map a point from this pose's local frame to the world frame."""
        return self.xy + rotate(point_obj, self.theta)

    def to_local(self, point_world) -> np.ndarray:
        """Map a world point into this pose's local frame."""
        return rotate(np.asarray(point_world, dtype=float) - self.xy, -self.theta)


def rect_sdf(point, half_len: float, half_wid: float) -> float:
    """Signed distance from a point to an axis-aligned rectangle boundary.

    Negative inside, positive outside, zero on the boundary.
    """
    px, py = abs(point[0]) - half_len, abs(point[1]) - half_wid
    if px > 0.0 or py > 0.0:
        ox = max(px, 0.0)
        oy = max(py, 0.0)
        return float(np.hypot(ox, oy))
    return float(max(px, py))


def rect_project(point, half_len: float, half_wid: float) -> np.ndarray:
    """Project a point onto the rectangle boundary (nearest boundary point)."""
    x, y = float(point[0]), float(point[1])
    inside = abs(x) <= half_len and abs(y) <= half_wid
    if not inside:
        return np.array([np.clip(x, -half_len, half_len), np.clip(y, -half_wid, half_wid)])
    # inside: push out through the nearest face
    dx = half_len - abs(x)
    dy = half_wid - abs(y)
    if dx <= dy:
        return np.array([np.copysign(half_len, x if x != 0.0 else 1.0), y])
    return np.array([x, np.copysign(half_wid, y if y != 0.0 else 1.0)])


def rect_inward_normal(point, half_len: float, half_wid: float, tol: float) -> np.ndarray:
    """Inward unit normal of the rectangle at a boundary point.

    At a corner (both faces within tol) the normal is the corner bisector,
    which approximates the corner's composite friction cone with a single
    central direction.
    """
    x, y = float(point[0]), float(point[1])
    on_x = abs(abs(x) - half_len) <= tol
    on_y = abs(abs(y) - half_wid) <= tol
    n = np.zeros(2)
    if on_x:
        n[0] = -np.sign(x)
    if on_y:
        n[1] = -np.sign(y)
    if not on_x and not on_y:
        raise ValueError("point is not on the rectangle boundary")
    norm = float(np.hypot(n[0], n[1]))
    return n / norm


def segment_rect_entry(p0, d, half_len: float, half_wid: float):
    """First parameter s in [0, 1] where p0 + s*d enters the rectangle.

    Returns None when the segment never meets the rectangle.  A start point
    already on the boundary (or inside) yields s = 0.  Uses the standard
    slab-clipping method.
    """
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(d, dtype=float)
    lo, hi = 0.0, 1.0
    for axis, half in ((0, half_len), (1, half_wid)):
        p, v = p0[axis], d[axis]
        if v == 0.0:
            if p < -half or p > half:
                return None
            continue
        t0 = (-half - p) / v
        t1 = (half - p) / v
        if t0 > t1:
            t0, t1 = t1, t0
        lo = max(lo, t0)
        hi = min(hi, t1)
        if lo > hi:
            return None
    return lo
