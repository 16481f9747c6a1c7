"""Oriented box geometry in the bird's-eye-view (BEV) plane.

Yaw is measured counterclockwise from the +x axis of the sensor frame and the
box length runs along the heading. Conversions from other conventions (e.g.
KITTI camera labels) happen in :mod:`hotspot3d.io`, never here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

# Intersections smaller than this (m^2) are clipping noise.
AREA_EPS = 1e-12


def wrap_angle(angle):
    """Wrap an angle (scalar or array) into [-pi, pi)."""
    wrapped = np.mod(np.asarray(angle, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box parameters: {vals}")
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sizes must be positive, got l={self.l}, w={self.w}, h={self.h}")
        for name in ("cx", "cy", "cz", "l", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def area_bev(self) -> float:
        return self.l * self.w

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw])

    @classmethod
    def from_array(cls, arr: Sequence[float]) -> "Box3D":
        return cls(*(float(v) for v in arr[:7]))


def box_corners_bev(box: Box3D) -> np.ndarray:
    """Return the (4, 2) BEV corners, counterclockwise, starting at front-left."""
    hl, hw = box.l / 2.0, box.w / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def local_frame(p, box: Box3D):
    """Express BEV point(s) ``p`` in the box frame: x' along heading, y' to the left.

    ``p`` may be a single (x, y) pair or an (n, 2) array.
    """
    p = np.asarray(p, dtype=np.float64)
    dx = p[..., 0] - box.cx
    dy = p[..., 1] - box.cy
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    xl = c * dx + s * dy
    yl = -s * dx + c * dy
    if p.ndim == 1:
        return float(xl), float(yl)
    return np.stack([xl, yl], axis=-1)


def point_in_box_bev(p, box: Box3D):
    """Boundary-inclusive BEV containment; vectorized over (n, 2) inputs."""
    loc = np.asarray(local_frame(p, box))
    inside = (np.abs(loc[..., 0]) <= box.l / 2.0) & (np.abs(loc[..., 1]) <= box.w / 2.0)
    if np.ndim(inside) == 0:
        return bool(inside)
    return inside


def point_in_box_3d(p, box: Box3D):
    """3D containment; ``p`` is (x, y, z[, ...]) or an (n, >=3) array."""
    p = np.asarray(p, dtype=np.float64)
    inside = point_in_box_bev(p[..., :2], box) & (np.abs(p[..., 2] - box.cz) <= box.h / 2.0)
    if np.ndim(inside) == 0:
        return bool(inside)
    return inside


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counterclockwise vertex order)."""
    poly = np.asarray(poly, dtype=np.float64)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def clip_convex(subject: Sequence[Tuple[float, float]], clip: Sequence[Tuple[float, float]]):
    """Sutherland-Hodgman clipping of ``subject`` by a convex CCW polygon ``clip``."""
    output = [tuple(v) for v in subject]
    clip = [tuple(v) for v in clip]
    for k in range(len(clip)):
        if not output:
            break
        c1, c2 = clip[k - 1], clip[k]
        inputs, output = output, []
        s = inputs[-1]
        s_in = _cross(c1, c2, s) >= 0.0
        for e in inputs:
            e_in = _cross(c1, c2, e) >= 0.0
            if e_in != s_in:
                # Segment s->e crosses the clip line.
                ds, de = _cross(c1, c2, s), _cross(c1, c2, e)
                t = ds / (ds - de)
                output.append((s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])))
            if e_in:
                output.append(e)
            s, s_in = e, e_in
    return output


def intersection_area_bev(a: Box3D, b: Box3D) -> float:
    # Cheap rejection on circumscribed circles.
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    if math.hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb:
        return 0.0
    poly = clip_convex(box_corners_bev(a), box_corners_bev(b))
    area = abs(polygon_area(poly))
    return area if area >= AREA_EPS else 0.0


def rotated_iou_bev(a: Box3D, b: Box3D) -> float:
    inter = intersection_area_bev(a, b)
    if inter == 0.0:
        return 0.0
    union = a.area_bev + b.area_bev - inter
    return float(min(1.0, max(0.0, inter / union)))


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU of two upright boxes (BEV overlap times vertical overlap)."""
    inter_bev = intersection_area_bev(a, b)
    if inter_bev == 0.0:
        return 0.0
    z_overlap = min(a.cz + a.h / 2, b.cz + b.h / 2) - max(a.cz - a.h / 2, b.cz - b.h / 2)
    if z_overlap <= 0.0:
        return 0.0
    inter = inter_bev * z_overlap
    return float(min(1.0, max(0.0, inter / (a.volume + b.volume - inter))))


def rigid_transform_box(box: Box3D, theta: float, tx: float = 0.0, ty: float = 0.0) -> Box3D:
    """Rotate ``box`` by ``theta`` about the origin, then translate by (tx, ty)."""
    c, s = math.cos(theta), math.sin(theta)
    return Box3D(c * box.cx - s * box.cy + tx, s * box.cx + c * box.cy + ty, box.cz,
                 box.l, box.w, box.h, box.yaw + theta)


def rigid_transform_points(p, theta: float, tx: float = 0.0, ty: float = 0.0) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    c, s = math.cos(theta), math.sin(theta)
    x = c * p[..., 0] - s * p[..., 1] + tx
    y = s * p[..., 0] + c * p[..., 1] + ty
    return np.stack([x, y], axis=-1)
