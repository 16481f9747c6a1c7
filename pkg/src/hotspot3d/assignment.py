"""Hotspot target assignment on the BEV occupancy map.

A *spot* is an occupied output cell whose center lies inside a ground-truth
box. Each object keeps at most ``M = max(1, floor(C / volume))`` spots nearest
to its BEV center as *hotspots*. Non-hotspot cells whose center falls inside
any box are IGNORED; everything else is NEGATIVE.
"""
from __future__ import annotations

import enum
import math
import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .codec import encode_box
from .geometry import Box3D, local_frame, point_in_box_bev
from .voxelizer import GridConfig, OccupancyGrid, cell_centers

NEGATIVE = 0
IGNORED = -1
HOTSPOT = 1

Cell = Tuple[int, int]


class ConfigError(ValueError):
    pass


class Encoding(str, enum.Enum):
    NONE = "none"
    LEFT_RIGHT = "lr"
    FRONT_BACK = "fb"
    QUADRANT = "quadrant"
    EIGHT_DIR = "8dir"
    DEVIATION = "deviation"

    @property
    def size(self) -> int:
        return {"none": 0, "lr": 2, "fb": 2, "quadrant": 4, "8dir": 8, "deviation": 2}[self.value]

    @property
    def categorical(self) -> bool:
        return self not in (Encoding.NONE, Encoding.DEVIATION)


@dataclass(frozen=True)
class GroundTruth:
    class_id: int
    box: Box3D
    num_points: int = 0
    difficulty: Optional[int] = None

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError("class_id must be nonnegative")
        if self.num_points < 0:
            raise ValueError("num_points must be nonnegative")


@dataclass
class SpatialRelationTarget:
    kind: Encoding
    label: np.ndarray

    @property
    def index(self) -> Optional[int]:
        """Active class for categorical encodings."""
        return int(np.argmax(self.label)) if self.kind.categorical else None


@dataclass
class AssignmentMap:
    """Per-cell supervision.

    ``state`` holds NEGATIVE / IGNORED / HOTSPOT; ``class_id`` and ``owner``
    are -1 except on hotspot cells. ``box_targets`` (rows, cols, 8) and
    ``relation`` (rows, cols, encoding size) are zero off hotspots.
    """
    state: np.ndarray
    class_id: np.ndarray
    owner: np.ndarray
    box_targets: np.ndarray
    relation: np.ndarray
    encoding: Encoding
    num_classes: int

    @property
    def shape(self):
        return self.state.shape

    @property
    def hotspot_mask(self) -> np.ndarray:
        return self.state == HOTSPOT

    @property
    def ignored_mask(self) -> np.ndarray:
        return self.state == IGNORED

    def hotspot_cells(self, obj: Optional[int] = None) -> List[Cell]:
        mask = self.hotspot_mask if obj is None else self.hotspot_mask & (self.owner == obj)
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(mask))]

    def hotspot_counts(self, num_objects: int) -> List[int]:
        owners = self.owner[self.hotspot_mask]
        return np.bincount(owners, minlength=num_objects).tolist() if num_objects else []


def max_hotspots(gt: GroundTruth, C: float) -> int:
    """Hotspot budget for one object; ``sys.maxsize`` when ``C`` is infinite."""
    if not C > 0:
        raise ConfigError(f"C must be positive, got {C}")
    if math.isinf(C):
        return sys.maxsize
    return max(1, math.floor(C / gt.box.volume))


def find_spots(occ: OccupancyGrid, gt: GroundTruth, config: GridConfig) -> List[Cell]:
    centers = cell_centers(config)
    inside = point_in_box_bev(centers.reshape(-1, 2), gt.box).reshape(occ.shape)
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(inside & occ.occupied))]


def select_hotspots(spots: Sequence[Cell], gt: GroundTruth, C: float, config: GridConfig) -> List[Cell]:
    """The ``M`` spots nearest the box center in BEV; ties broken by (row, col)."""
    m = max_hotspots(gt, C)
    if len(spots) <= m:
        return sorted(spots)
    centers = cell_centers(config)
    rows = np.array([s[0] for s in spots])
    cols = np.array([s[1] for s in spots])
    c = centers[rows, cols]
    dist = np.hypot(c[:, 0] - gt.box.cx, c[:, 1] - gt.box.cy)
    order = np.lexsort((cols, rows, dist))[:m]
    return sorted((int(rows[k]), int(cols[k])) for k in order)


def spatial_relation_label(center, box: Box3D, kind: Encoding) -> SpatialRelationTarget:
    kind = Encoding(kind)
    xl, yl = local_frame(center, box)
    label = np.zeros(kind.size)
    if kind is Encoding.QUADRANT:
        if xl >= 0:
            label[0 if yl >= 0 else 3] = 1.0
        else:
            label[1 if yl >= 0 else 2] = 1.0
    elif kind is Encoding.LEFT_RIGHT:
        label[0 if yl >= 0 else 1] = 1.0
    elif kind is Encoding.FRONT_BACK:
        label[0 if xl >= 0 else 1] = 1.0
    elif kind is Encoding.EIGHT_DIR:
        angle = math.atan2(yl, xl) % (2.0 * math.pi)
        label[min(7, int(angle // (math.pi / 4.0)))] = 1.0
    elif kind is Encoding.DEVIATION:
        label[0] = min(0.5, max(-0.5, xl / box.l))
        label[1] = min(0.5, max(-0.5, yl / box.w))
    return SpatialRelationTarget(kind, label)


def resolve_ownership(gts: Sequence[GroundTruth], config: GridConfig) -> np.ndarray:
    """Owner index per cell (-1 if no box contains the cell center).

    A cell inside several boxes goes to the box with the nearest BEV center,
    then the lower object index.
    """
    centers = cell_centers(config)
    shape = centers.shape[:2]
    flat = centers.reshape(-1, 2)
    owner = np.full(flat.shape[0], -1, dtype=np.int64)
    best = np.full(flat.shape[0], np.inf)
    for k, gt in enumerate(gts):
        inside = point_in_box_bev(flat, gt.box)
        dist = np.hypot(flat[:, 0] - gt.box.cx, flat[:, 1] - gt.box.cy)
        take = inside & (dist < best)
        owner[take] = k
        best[take] = dist[take]
    return owner.reshape(shape)


def build_assignment(occ: OccupancyGrid, gts: Sequence[GroundTruth], C: float, encoding,
                     config: GridConfig, num_classes: int) -> AssignmentMap:
    if num_classes <= 0:
        raise ConfigError(f"number of classes must be positive, got {num_classes}")
    if not C > 0:
        raise ConfigError(f"C must be positive, got {C}")
    encoding = Encoding(encoding)
    for gt in gts:
        if gt.class_id >= num_classes:
            raise ConfigError(f"class_id {gt.class_id} outside [0, {num_classes})")
    shape = config.output_shape
    if occ.shape != shape:
        raise ValueError(f"occupancy shape {occ.shape} does not match grid {shape}")

    owner_all = resolve_ownership(gts, config)
    centers = cell_centers(config)
    state = np.where(owner_all >= 0, IGNORED, NEGATIVE).astype(np.int8)
    class_id = np.full(shape, -1, dtype=np.int64)
    owner = np.full(shape, -1, dtype=np.int64)
    box_targets = np.zeros(shape + (8,))
    relation = np.zeros(shape + (encoding.size,))

    for k, gt in enumerate(gts):
        spots = [(int(i), int(j)) for i, j in zip(*np.nonzero((owner_all == k) & occ.occupied))]
        for i, j in select_hotspots(spots, gt, C, config):
            state[i, j] = HOTSPOT
            class_id[i, j] = gt.class_id
            owner[i, j] = k
            center = (float(centers[i, j, 0]), float(centers[i, j, 1]))
            box_targets[i, j] = encode_box(gt.box, center)
            relation[i, j] = spatial_relation_label(center, gt.box, encoding).label
    return AssignmentMap(state, class_id, owner, box_targets, relation, encoding, num_classes)
