"""Training losses with analytic gradients.

Classification uses focal loss on per-class probabilities with IGNORED cells
masked out; regression applies smooth L1 to the decoded targets of hotspot
cells; the spatial-relation branch uses binary cross-entropy on hotspots.
Gradients are returned with respect to the probabilities / logits / raw
values stored in :class:`~hotspot3d.codec.HeadOutput`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .assignment import AssignmentMap, Encoding
from .codec import TARGET_NAMES, HeadOutput, RegressionSpecs, softargmin, softargmin_grad

EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class LossWeights:
    delta: float = 1.0
    beta: float = 1.0
    zeta: float = 1.0

    def __post_init__(self):
        w = (self.delta, self.beta, self.zeta)
        if min(w) < 0 or max(w) == 0:
            raise ValueError(f"loss weights must be nonnegative and not all zero, got {w}")


def _clamp(p):
    """Clamp probabilities to [EPS, 1 - EPS]; also return d(clamped)/dp."""
    p = np.asarray(p, dtype=np.float64)
    inside = (p >= EPS) & (p <= 1.0 - EPS)
    return np.clip(p, EPS, 1.0 - EPS), inside.astype(np.float64)


def focal_loss(p, is_hotspot, fp: FocalParams = FocalParams()):
    """Elementwise focal loss ``-alpha (1 - q)^gamma log q`` and its derivative in ``p``.

    ``q = p`` for hotspots and ``1 - p`` otherwise.
    """
    pc, dclamp = _clamp(p)
    pos = np.asarray(is_hotspot, dtype=bool)
    q = np.where(pos, pc, 1.0 - pc)
    one_m_q = 1.0 - q
    logq = np.log(q)
    mod = one_m_q ** fp.gamma
    loss = -fp.alpha * mod * logq
    if fp.gamma == 0:
        dmod = np.zeros_like(q)
    else:
        dmod = -fp.gamma * one_m_q ** (fp.gamma - 1.0)
    dl_dq = -fp.alpha * (dmod * logq + mod / q)
    grad = np.where(pos, dl_dq, -dl_dq) * dclamp
    if np.ndim(loss) == 0:
        return float(loss), float(grad)
    return loss, grad


def classification_loss(scores, amap: AssignmentMap, fp: FocalParams = FocalParams()):
    """Mean focal loss over non-IGNORED cells (summed over classes).

    ``scores`` is (rows, cols, K). IGNORED cells contribute nothing and get an
    exactly-zero gradient. Returns ``(loss, grad)`` with ``grad`` shaped like
    ``scores``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    k = scores.shape[-1]
    if scores.shape[:2] != amap.shape:
        raise ValueError(f"score map {scores.shape[:2]} does not match assignment {amap.shape}")
    keep = ~amap.ignored_mask
    n = int(keep.sum())
    grad = np.zeros_like(scores)
    if n == 0:
        return 0.0, grad
    target = amap.class_id[keep][:, None] == np.arange(k)[None, :]
    loss, g = focal_loss(scores[keep], target, fp)
    grad[keep] = g / n
    return float(np.sum(loss) / n), grad


def smooth_l1(x):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    small = ax < 1.0
    loss = np.where(small, 0.5 * x * x, ax - 0.5)
    grad = np.where(small, x, np.sign(x))
    if np.ndim(loss) == 0:
        return float(loss), float(grad)
    return loss, grad


def regression_loss(head: HeadOutput, amap: AssignmentMap, specs: RegressionSpecs):
    """Smooth L1 over the 8 decoded targets, averaged over hotspot cells.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``head.data``; only
    regression channels at hotspot cells are nonzero.
    """
    if head.shape != amap.shape:
        raise ValueError(f"head shape {head.shape} does not match assignment {amap.shape}")
    grad = np.zeros_like(head.data)
    rows, cols = np.nonzero(amap.hotspot_mask)
    n = len(rows)
    if n == 0:
        return 0.0, grad
    total = np.zeros(n)
    for t, name in enumerate(TARGET_NAMES):
        sl = head.index(name)
        vals = head.data[rows, cols, sl]
        spec = specs.get(name)
        pred = vals[:, 0] if spec is None else softargmin(vals, spec)
        loss, dl = smooth_l1(pred - amap.box_targets[rows, cols, t])
        total += loss
        if spec is None:
            grad[rows, cols, sl] = (dl / n)[:, None]
        else:
            grad[rows, cols, sl] = softargmin_grad(vals, spec) * (dl / n)[:, None]
    return float(np.sum(total) / n), grad


def quadrant_loss(scores, amap: AssignmentMap):
    """Spatial-relation loss averaged over hotspot cells.

    Categorical encodings (quadrant, left/right, front/back, 8 directions) use
    summed binary cross-entropy on clamped probabilities; the deviation
    encoding uses smooth L1 on the two normalized offsets. ``scores`` is
    (rows, cols, encoding size).
    """
    scores = np.asarray(scores, dtype=np.float64)
    grad = np.zeros_like(scores)
    if amap.encoding is Encoding.NONE:
        return 0.0, grad
    mask = amap.hotspot_mask
    n = int(mask.sum())
    if n == 0:
        return 0.0, grad
    q = amap.relation[mask]
    if amap.encoding is Encoding.DEVIATION:
        loss, g = smooth_l1(scores[mask] - q)
    else:
        p, dclamp = _clamp(scores[mask])
        loss = -(q * np.log(p) + (1.0 - q) * np.log(1.0 - p))
        g = (-q / p + (1.0 - q) / (1.0 - p)) * dclamp
    grad[mask] = g / n
    return float(np.sum(loss) / n), grad


def total_loss(cls: float, loc: float, q: float, w: LossWeights = LossWeights()) -> float:
    return w.delta * cls + w.beta * loc + w.zeta * q


def composite_loss(head: HeadOutput, amap: AssignmentMap, specs: RegressionSpecs,
                   fp: FocalParams = FocalParams(), w: LossWeights = LossWeights()) -> Tuple[dict, np.ndarray]:
    """Weighted sum of all branches; returns component dict and full head gradient."""
    cls, g_cls = classification_loss(head.group("cls"), amap, fp)
    loc, g_loc = regression_loss(head, amap, specs)
    grad = w.beta * g_loc
    if head.has("rel"):
        q, g_q = quadrant_loss(head.group("rel"), amap)
        grad[:, :, head.index("rel")] += w.zeta * g_q
    else:
        q = 0.0
    grad[:, :, head.index("cls")] += w.delta * g_cls
    parts = {"cls": cls, "loc": loc, "q": q, "total": total_loss(cls, loc, q, w)}
    return parts, grad
