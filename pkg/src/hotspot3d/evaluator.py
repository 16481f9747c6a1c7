"""KITTI-style evaluation: greedy matching, AP on 40 recall points, recall by point count."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import GroundTruth
from .geometry import iou_3d, rotated_iou_bev
from .inference import Detection

RECALL_POINTS = 40
DEFAULT_IOU = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
POINT_BUCKETS = ((1, 10), (11, 50), (51, 200), (201, None))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: Tuple[float, ...] = (0.7, 0.5, 0.5)
    mode: str = "3d"
    difficulty: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("bev", "3d"):
            raise ValueError(f"mode must be 'bev' or '3d', got {self.mode!r}")
        if not all(0.0 < t <= 1.0 for t in self.iou_thresholds):
            raise ValueError("IoU thresholds must lie in (0, 1]")


@dataclass
class MatchResult:
    det_tp: List[bool]
    det_gt: List[int]
    gt_matched: List[bool]
    scores: List[float] = field(default_factory=list)


def pair_iou(det_box, gt_box, mode: str) -> float:
    return rotated_iou_bev(det_box, gt_box) if mode == "bev" else iou_3d(det_box, gt_box)


def match(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float,
          mode: str = "3d") -> MatchResult:
    """Greedy score-ordered matching for one scene and one class.

    Each detection, best score first, takes the still-unmatched ground truth
    with the highest IoU at or above ``iou_threshold`` (lowest index on ties).
    Results are reported in the sorted detection order.
    """
    dets = sorted(dets, key=Detection.sort_key)
    gt_matched = [False] * len(gts)
    det_tp, det_gt = [], []
    for det in dets:
        best, best_iou = -1, -1.0
        for g, gt in enumerate(gts):
            if gt_matched[g]:
                continue
            iou = pair_iou(det.box, gt.box, mode)
            if iou >= iou_threshold and iou > best_iou:
                best, best_iou = g, iou
        if best >= 0:
            gt_matched[best] = True
        det_tp.append(best >= 0)
        det_gt.append(best)
    return MatchResult(det_tp, det_gt, gt_matched, [d.score for d in dets])


def ap40(scores: Sequence[float], tp: Sequence[bool], num_gt: int) -> Optional[float]:
    """Interpolated average precision sampled at recall k/40, k = 1..40.

    Returns ``None`` when there is no ground truth.
    """
    if num_gt <= 0:
        return None
    scores = np.asarray(scores, dtype=np.float64)
    tp = np.asarray(tp, dtype=bool)
    # Stable sort keeps caller order among equal scores.
    order = np.argsort(-scores, kind="stable")
    tp = tp[order]
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    total = 0.0
    for k in range(1, RECALL_POINTS + 1):
        # recall >= k/40, compared in integers
        reach = ctp * RECALL_POINTS >= k * num_gt
        total += float(np.max(precision[reach])) if np.any(reach) else 0.0
    return total / RECALL_POINTS


def _filter_difficulty(gts, difficulty):
    """Split GTs into evaluated ones and ones to ignore for a difficulty tier."""
    if difficulty is None:
        return list(gts), []
    keep = [g for g in gts if g.difficulty is not None and g.difficulty <= difficulty]
    skip = [g for g in gts if g.difficulty is None or g.difficulty > difficulty]
    return keep, skip


def evaluate_class(scenes: Sequence[Tuple[Sequence[Detection], Sequence[GroundTruth]]],
                   class_id: int, iou_threshold: float, mode: str = "3d",
                   difficulty: Optional[int] = None) -> Optional[float]:
    """AP40 for one class accumulated over scenes given as (detections, gts) pairs.

    With a difficulty tier, ground truths outside the tier are excluded and
    detections matching them are dropped rather than counted as false
    positives.
    """
    scores, flags, num_gt = [], [], 0
    for s_idx, (dets, gts) in enumerate(scenes):
        d = [x for x in dets if x.class_id == class_id]
        g = [x for x in gts if x.class_id == class_id]
        keep, skip = _filter_difficulty(g, difficulty)
        num_gt += len(keep)
        res = match(d, keep + skip, iou_threshold, mode)
        for score, gi in zip(res.scores, res.det_gt):
            if gi >= len(keep):
                continue
            scores.append((-score, s_idx, len(scores)))
            flags.append(gi >= 0)
    # Merge across scenes with a total order: score, then scene, then rank.
    order = sorted(range(len(scores)), key=lambda k: scores[k])
    return ap40([-scores[k][0] for k in order], [flags[k] for k in order], num_gt)


def evaluate(scenes, class_names: Sequence[str], cfg: EvalConfig) -> Dict[str, Optional[float]]:
    out = {}
    for c, name in enumerate(class_names):
        thr = cfg.iou_thresholds[c] if c < len(cfg.iou_thresholds) else cfg.iou_thresholds[-1]
        out[name] = evaluate_class(scenes, c, thr, cfg.mode, cfg.difficulty)
    return out


def bucket_label(bucket) -> str:
    lo, hi = bucket
    return f"{lo}+" if hi is None else f"{lo}-{hi}"


def recall_by_points(gt_matched: Sequence[bool], num_points: Sequence[int],
                     buckets=POINT_BUCKETS) -> Dict[str, Optional[float]]:
    """Recall restricted to ground truths whose point count falls in each (lo, hi) bucket.

    ``hi=None`` is unbounded. Empty buckets map to ``None``.
    """
    matched = np.asarray(gt_matched, dtype=bool)
    pts = np.asarray(num_points, dtype=np.int64)
    out = {}
    for lo, hi in buckets:
        sel = (pts >= lo) & (pts <= (hi if hi is not None else np.iinfo(np.int64).max))
        n = int(sel.sum())
        out[bucket_label((lo, hi))] = float(matched[sel].sum()) / n if n else None
    return out


def scene_recall_inputs(scenes, iou_thresholds: Sequence[float], mode: str = "3d"):
    """Flatten per-GT matched flags and point counts over scenes and classes."""
    matched, points = [], []
    for dets, gts in scenes:
        for c in sorted({g.class_id for g in gts}):
            g = [x for x in gts if x.class_id == c]
            thr = iou_thresholds[c] if c < len(iou_thresholds) else iou_thresholds[-1]
            res = match([d for d in dets if d.class_id == c], g, thr, mode)
            matched += res.gt_matched
            points += [x.num_points for x in g]
    return matched, points


def kitti_difficulty(truncation: float, occlusion: int, bbox_height: float) -> Optional[int]:
    """KITTI tier: 0 easy, 1 moderate, 2 hard, None if outside all tiers."""
    tiers = ((40.0, 0, 0.15), (25.0, 1, 0.30), (25.0, 2, 0.50))
    for k, (min_h, max_occ, max_trunc) in enumerate(tiers):
        if bbox_height >= min_h and occlusion <= max_occ and truncation <= max_trunc:
            return k
    return None


def format_metrics(metrics: Dict[str, Optional[float]], mode: str, difficulty: Optional[int]) -> List[str]:
    tier = {None: "all", 0: "easy", 1: "moderate", 2: "hard"}[difficulty]
    lines = []
    for name, ap in metrics.items():
        val = "absent" if ap is None or (isinstance(ap, float) and math.isnan(ap)) else f"{ap:.4f}"
        lines.append(f"{name} {tier} {mode} {val}")
    return lines
