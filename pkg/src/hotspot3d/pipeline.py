"""Per-scene glue between the stages; used by the CLI and the end-to-end checks."""
from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .assignment import AssignmentMap, Encoding, GroundTruth, build_assignment
from .codec import HeadOutput, RegressionSpecs, write_targets
from .config import RunConfig
from .inference import Detection, detect
from .synth import SceneBundle
from .voxelizer import GridConfig, OccupancyGrid, bev_occupancy, cell_centers, voxelize

# Per-rank score decrement for encoded ground truth; the best hotspot of
# every object scores 1.0 so it always survives top-k.
RANK_DECAY = 0.01
MIN_ENCODED_SCORE = 0.31


def scene_occupancy(bundle: SceneBundle, grid: GridConfig) -> OccupancyGrid:
    return bev_occupancy(voxelize(bundle.points, grid, bundle.seed), grid)


def assign_scene(bundle: SceneBundle, cfg: RunConfig) -> AssignmentMap:
    occ = scene_occupancy(bundle, cfg.grid)
    return build_assignment(occ, bundle.gts, cfg.C, cfg.encoding, cfg.grid, cfg.num_classes)


def head_from_assignment(amap: AssignmentMap, gts: Sequence[GroundTruth], specs: RegressionSpecs,
                         grid: GridConfig, mode: str = "interpolate") -> HeadOutput:
    """HeadOutput that a perfect detector would emit for this assignment.

    Hotspot cells fire their owner's class, with the score decreasing by
    distance rank to the object center, and regression channels that decode
    exactly to the owner's box. Relation channels carry the assignment labels.
    """
    head = HeadOutput.zeros(amap.shape, amap.num_classes, specs, max(amap.encoding.size, 1))
    centers = cell_centers(grid)
    cls_sl, rel_sl = head.index("cls"), head.index("rel")
    for k, gt in enumerate(gts):
        cells = amap.hotspot_cells(k)
        if not cells:
            continue
        rows = np.array([c[0] for c in cells])
        cols = np.array([c[1] for c in cells])
        c = centers[rows, cols]
        dist = np.hypot(c[:, 0] - gt.box.cx, c[:, 1] - gt.box.cy)
        for rank, idx in enumerate(np.lexsort((cols, rows, dist))):
            i, j = int(rows[idx]), int(cols[idx])
            scores = np.zeros(amap.num_classes)
            scores[gt.class_id] = max(MIN_ENCODED_SCORE, 1.0 - RANK_DECAY * rank)
            head.data[i, j, cls_sl] = scores
            write_targets(head, i, j, amap.box_targets[i, j], specs, mode)
            if amap.encoding is not Encoding.NONE:
                head.data[i, j, rel_sl] = amap.relation[i, j]
    return head


def encode_scene(bundle: SceneBundle, cfg: RunConfig) -> HeadOutput:
    amap = assign_scene(bundle, cfg)
    return head_from_assignment(amap, bundle.gts, cfg.specs, cfg.grid)


def detect_scene(head: HeadOutput, cfg: RunConfig) -> List[Detection]:
    return detect(head, cfg.inference, cfg.grid, cfg.specs)
