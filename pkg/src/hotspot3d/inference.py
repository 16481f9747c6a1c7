"""Turning head outputs into detections: score filter, top-k, rotated NMS."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .codec import HeadOutput, RegressionSpecs, decode_boxes
from .geometry import Box3D, rotated_iou_bev
from .voxelizer import GridConfig


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: Box3D
    cell: Optional[Tuple[int, int]] = None

    def sort_key(self):
        cell = self.cell if self.cell is not None else (-1, -1)
        return (-self.score, cell[0], cell[1], self.class_id, tuple(self.box.as_array()))


@dataclass(frozen=True)
class InferenceConfig:
    score_threshold: float = 0.3
    pre_nms_top_k: int = 100
    nms_iou_threshold: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must lie in [0, 1]")
        if not 0.0 <= self.nms_iou_threshold <= 1.0:
            raise ValueError("nms_iou_threshold must lie in [0, 1]")
        if self.pre_nms_top_k < 1:
            raise ValueError("pre_nms_top_k must be >= 1")


def extract_candidates(head: HeadOutput, cfg: InferenceConfig, grid: GridConfig,
                       specs: RegressionSpecs) -> List[Detection]:
    """Per cell take the best class; keep cells at or above threshold, best ``top_k`` overall."""
    scores = head.group("cls")
    best = np.argmax(scores, axis=-1)
    best_score = np.take_along_axis(scores, best[..., None], axis=-1)[..., 0]
    rows, cols = np.nonzero(best_score >= cfg.score_threshold)
    # Row-major nonzero order plus a stable sort gives the (row, col) tie-break.
    order = np.argsort(-best_score[rows, cols], kind="stable")
    rows, cols = rows[order], cols[order]
    boxes, valid = decode_boxes(head, rows, cols, grid, specs)
    dets = []
    for r, c, b, ok in zip(rows, cols, boxes, valid):
        if not ok:
            continue
        dets.append(Detection(int(best[r, c]), float(best_score[r, c]), Box3D.from_array(b),
                              (int(r), int(c))))
        if len(dets) == cfg.pre_nms_top_k:
            break
    return dets


def rotated_nms(dets: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """Greedy per-class NMS on BEV rotated IoU."""
    kept: List[Detection] = []
    for det in sorted(dets, key=Detection.sort_key):
        if all(k.class_id != det.class_id or rotated_iou_bev(k.box, det.box) <= iou_threshold
               for k in kept):
            kept.append(det)
    return kept


def detect(head: HeadOutput, cfg: InferenceConfig, grid: GridConfig,
           specs: RegressionSpecs) -> List[Detection]:
    return rotated_nms(extract_candidates(head, cfg, grid, specs), cfg.nms_iou_threshold)
