"""Seeded synthetic LiDAR scenes with exact ground truth.

Objects are non-overlapping upright boxes; their points are sampled near the
box surface (roof and sides) and kept strictly inside, so every ground truth
knows its interior point count. Point counts can be pinned or drawn
log-uniformly to mimic the huge spread of points per object in real scans.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .assignment import GroundTruth
from .geometry import Box3D, point_in_box_3d
from .inference import Detection

# Mean (l, w, h) per class, KITTI-like.
TEMPLATES = {
    "Car": (3.9, 1.6, 1.56),
    "Pedestrian": (0.8, 0.6, 1.73),
    "Cyclist": (1.76, 0.6, 1.73),
}
_GAP = 0.2
_SHRINK = 0.98


class SceneError(RuntimeError):
    pass


@dataclass
class SynthSpec:
    num_objects: int = 5
    class_names: Tuple[str, ...] = ("Car", "Pedestrian", "Cyclist")
    class_mix: Optional[Dict[str, float]] = None
    # int: exactly n points per object; (lo, hi): log-uniform integer in [lo, hi]
    points_per_object: Union[int, Tuple[int, int]] = (1, 2000)
    noise_sigma: float = 0.02
    size_jitter: float = 0.05
    clutter_points: int = 500
    x_range: Tuple[float, float] = (0.0, 70.4)
    y_range: Tuple[float, float] = (-40.0, 40.0)
    ground_z: float = -1.6
    seed: int = 0
    max_retries: int = 200

    def __post_init__(self):
        if self.num_objects < 0:
            raise ValueError("num_objects must be >= 0")
        if isinstance(self.points_per_object, (list, tuple)):
            lo, hi = self.points_per_object
            if not 1 <= lo <= hi:
                raise ValueError(f"bad points_per_object range {self.points_per_object}")
            self.points_per_object = (int(lo), int(hi))
        elif self.points_per_object < 0:
            raise ValueError("points_per_object must be >= 0")
        unknown = [c for c in self.class_names if c not in TEMPLATES]
        if unknown:
            raise ValueError(f"no size template for classes {unknown}")


@dataclass
class SceneBundle:
    points: np.ndarray
    gts: List[GroundTruth]
    scene_id: str = "000000"
    seed: int = 0
    meta: dict = field(default_factory=dict)


def _place_boxes(spec: SynthSpec, rng: np.random.Generator) -> List[Tuple[int, Box3D]]:
    names = list(spec.class_names)
    mix = spec.class_mix or {n: 1.0 for n in names}
    probs = np.array([mix.get(n, 0.0) for n in names], dtype=np.float64)
    if probs.sum() <= 0:
        raise ValueError("class_mix assigns zero weight to every class")
    probs /= probs.sum()
    placed: List[Tuple[int, Box3D]] = []
    for _ in range(spec.num_objects):
        cls = int(rng.choice(len(names), p=probs))
        l0, w0, h0 = TEMPLATES[names[cls]]
        jit = 1.0 + spec.size_jitter * rng.uniform(-1, 1, size=3)
        l, w, h = l0 * jit[0], w0 * jit[1], h0 * jit[2]
        r = 0.5 * math.hypot(l, w)
        for _attempt in range(spec.max_retries):
            cx = rng.uniform(spec.x_range[0] + r + _GAP, spec.x_range[1] - r - _GAP)
            cy = rng.uniform(spec.y_range[0] + r + _GAP, spec.y_range[1] - r - _GAP)
            yaw = rng.uniform(-math.pi, math.pi)
            clear = all(math.hypot(cx - b.cx, cy - b.cy) > r + 0.5 * math.hypot(b.l, b.w) + _GAP
                        for _, b in placed)
            if clear:
                placed.append((cls, Box3D(cx, cy, spec.ground_z + h / 2, l, w, h, yaw)))
                break
        else:
            raise SceneError(f"could not place object {len(placed)} after {spec.max_retries} tries")
    return placed


def _surface_points(box: Box3D, n: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` points near the roof and side faces, strictly inside ``box``."""
    if n == 0:
        return np.zeros((0, 4))
    hl, hw, hh = box.l / 2, box.w / 2, box.h / 2
    # faces: roof, front, back, left, right
    areas = np.array([box.l * box.w, box.w * box.h, box.w * box.h, box.l * box.h, box.l * box.h])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u = rng.uniform(-1, 1, size=(n, 3)) * np.array([hl, hw, hh])
    u[face == 0, 2] = hh
    u[face == 1, 0] = hl
    u[face == 2, 0] = -hl
    u[face == 3, 1] = hw
    u[face == 4, 1] = -hw
    u += rng.normal(0.0, sigma, size=u.shape)
    u = np.clip(u, -_SHRINK * np.array([hl, hw, hh]), _SHRINK * np.array([hl, hw, hh]))
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = box.cx + c * u[:, 0] - s * u[:, 1]
    y = box.cy + s * u[:, 0] + c * u[:, 1]
    z = box.cz + u[:, 2]
    return np.column_stack([x, y, z, rng.uniform(0, 1, size=n)])


def _point_count(spec: SynthSpec, rng: np.random.Generator) -> int:
    if isinstance(spec.points_per_object, tuple):
        lo, hi = spec.points_per_object
        return int(min(hi, math.floor(math.exp(rng.uniform(math.log(lo), math.log(hi + 1))))))
    return int(spec.points_per_object)


def _clutter(spec: SynthSpec, boxes: Sequence[Box3D], rng: np.random.Generator) -> np.ndarray:
    n = spec.clutter_points
    if n == 0:
        return np.zeros((0, 4))
    x = rng.uniform(*spec.x_range, size=n)
    y = rng.uniform(*spec.y_range, size=n)
    # Mostly ground returns, some floating clutter.
    ground = rng.uniform(size=n) < 0.8
    z = np.where(ground, spec.ground_z - np.abs(rng.normal(0, 0.03, size=n)) - 0.01,
                 rng.uniform(spec.ground_z, spec.ground_z + 2.5, size=n))
    pts = np.column_stack([x, y, z, rng.uniform(0, 1, size=n)])
    keep = np.ones(n, dtype=bool)
    for b in boxes:
        grown = Box3D(b.cx, b.cy, b.cz, b.l + 0.1, b.w + 0.1, b.h + 0.1, b.yaw)
        keep &= ~point_in_box_3d(pts, grown)
    return pts[keep]


def synth_scene(spec: SynthSpec, scene_id: str = "000000") -> SceneBundle:
    rng = np.random.default_rng(spec.seed)
    placed = _place_boxes(spec, rng)
    chunks = [_surface_points(b, _point_count(spec, rng), spec.noise_sigma, rng) for _, b in placed]
    chunks.append(_clutter(spec, [b for _, b in placed], rng))
    points = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 4))
    gts = [GroundTruth(cls, b, int(np.count_nonzero(point_in_box_3d(points, b))))
           for cls, b in placed]
    return SceneBundle(points, gts, scene_id, spec.seed,
                       {"class_names": list(spec.class_names)})


def simulate_detector(gts: Sequence[GroundTruth], rng: np.random.Generator, half_points: float = 30.0,
                      center_noise: float = 0.05, fp_rate: float = 0.5,
                      x_range=(0.0, 70.4), y_range=(-40.0, 40.0)) -> List[Detection]:
    """Noisy stand-in detector whose hit rate grows with an object's point count.

    A ground truth with ``n`` points is detected with probability
    ``1 - 2 ** (-n / half_points)``; detections get jittered centers and random
    scores. On average ``fp_rate * len(gts)`` spurious boxes are added.
    """
    dets = []
    for gt in gts:
        if rng.uniform() < 1.0 - 2.0 ** (-gt.num_points / half_points):
            b = gt.box
            dx, dy = rng.normal(0, center_noise, size=2)
            dets.append(Detection(gt.class_id, float(rng.uniform(0.3, 1.0)),
                                  Box3D(b.cx + dx, b.cy + dy, b.cz, b.l, b.w, b.h, b.yaw)))
    for _ in range(rng.poisson(fp_rate * max(1, len(gts)))):
        cls = gts[int(rng.integers(len(gts)))].class_id if gts else 0
        dets.append(Detection(cls, float(rng.uniform(0.3, 1.0)),
                              Box3D(rng.uniform(*x_range), rng.uniform(*y_range), -1.0, 1.0, 1.0, 1.5,
                                    rng.uniform(-math.pi, math.pi))))
    return dets
