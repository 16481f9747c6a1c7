"""Independent reference implementations used to cross-check the fast paths.

Nothing here calls the routines it checks: boxes are rasterized from their
own corner arithmetic, polygon overlap comes from shapely, precision/recall is
done in exact fractions, and gradients come from central differences.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable, List, Sequence, Tuple

import numpy as np
from shapely.geometry import Polygon

# -- geometry ---------------------------------------------------------------

def corners_ref(box) -> List[Tuple[float, float]]:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = []
    for u, v in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
        lx, ly = u * box.l / 2, v * box.w / 2
        out.append((box.cx + c * lx - s * ly, box.cy + s * lx + c * ly))
    return out


def inside_ref(x: float, y: float, box) -> bool:
    """Containment by projecting onto the box axes (boundary inclusive)."""
    hx, hy = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy = x - box.cx, y - box.cy
    along = dx * hx + dy * hy
    across = -dx * hy + dy * hx
    return abs(along) <= box.l / 2 and abs(across) <= box.w / 2


def shapely_iou(a, b) -> float:
    pa, pb = Polygon(corners_ref(a)), Polygon(corners_ref(b))
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return inter / union if union > 0 else 0.0


def shapely_iou_3d(a, b) -> float:
    pa, pb = Polygon(corners_ref(a)), Polygon(corners_ref(b))
    zo = max(0.0, min(a.cz + a.h / 2, b.cz + b.h / 2) - max(a.cz - a.h / 2, b.cz - b.h / 2))
    inter = pa.intersection(pb).area * zo
    return inter / (a.l * a.w * a.h + b.l * b.w * b.h - inter)


def monte_carlo_iou(a, b, n: int = 10_000_000, rng=None, chunk: int = 2_000_000) -> float:
    """BEV IoU estimated by sampling uniformly inside box ``a``.

    The fraction of samples that also fall in ``b`` estimates
    intersection / area(a).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    ca, sa = math.cos(a.yaw), math.sin(a.yaw)
    cb, sb = math.cos(b.yaw), math.sin(b.yaw)
    hits = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        u = rng.uniform(-a.l / 2, a.l / 2, size=m)
        v = rng.uniform(-a.w / 2, a.w / 2, size=m)
        x = a.cx + ca * u - sa * v - b.cx
        y = a.cy + sa * u + ca * v - b.cy
        hits += int(np.count_nonzero((np.abs(cb * x + sb * y) <= b.l / 2)
                                     & (np.abs(-sb * x + cb * y) <= b.w / 2)))
        done += m
    area_a, area_b = a.l * a.w, b.l * b.w
    inter = area_a * hits / n
    return inter / (area_a + area_b - inter)


# -- voxels / assignment ----------------------------------------------------

def cell_center_ref(i: int, j: int, grid) -> Tuple[float, float]:
    rows, cols = grid.output_shape
    (x0, x1), (y0, y1) = grid.x_range, grid.y_range
    return ((j + 0.5) / cols * (x1 - x0) + x0, (i + 0.5) / rows * (y1 - y0) + y0)


def occupancy_ref(points: np.ndarray, grid) -> np.ndarray:
    """Cell occupied iff some in-range point lies in its BEV column."""
    rows, cols = grid.output_shape
    x0, y0, z0 = grid.x_range[0], grid.y_range[0], grid.z_range[0]
    vx, vy, vz = grid.voxel_size
    nx, ny, nz = grid.grid_shape
    pts = np.asarray(points, dtype=np.float64)
    occ = np.zeros((rows, cols), dtype=bool)
    for x, y, z in pts[:, :3]:
        ix, iy, iz = math.floor((x - x0) / vx), math.floor((y - y0) / vy), math.floor((z - z0) / vz)
        if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz:
            occ[iy // grid.downsample, ix // grid.downsample] = True
    return occ


def assignment_ref(occupied: np.ndarray, gts, C: float, grid):
    """Brute-force assignment: double loop over cells and boxes, then full sorts.

    Returns ``(state, owner)`` arrays with state 1 = hotspot, -1 = ignored,
    0 = negative.
    """
    rows, cols = grid.output_shape
    owner_all = np.full((rows, cols), -1, dtype=np.int64)
    for i in range(rows):
        for j in range(cols):
            x, y = cell_center_ref(i, j, grid)
            best = None
            for k, gt in enumerate(gts):
                if inside_ref(x, y, gt.box):
                    d = math.hypot(x - gt.box.cx, y - gt.box.cy)
                    if best is None or d < best[0]:
                        best = (d, k)
            if best is not None:
                owner_all[i, j] = best[1]
    state = np.where(owner_all >= 0, -1, 0)
    owner = np.full((rows, cols), -1, dtype=np.int64)
    for k, gt in enumerate(gts):
        spots = []
        for i in range(rows):
            for j in range(cols):
                if occupied[i, j] and owner_all[i, j] == k:
                    x, y = cell_center_ref(i, j, grid)
                    spots.append((math.hypot(x - gt.box.cx, y - gt.box.cy), i, j))
        spots.sort()
        vol = gt.box.l * gt.box.w * gt.box.h
        m = len(spots) if math.isinf(C) else max(1, math.floor(C / vol))
        for _, i, j in spots[:m]:
            state[i, j] = 1
            owner[i, j] = k
    return state, owner


def spots_ref(occupied: np.ndarray, gt, grid) -> List[Tuple[int, int]]:
    rows, cols = grid.output_shape
    return [(i, j) for i in range(rows) for j in range(cols)
            if occupied[i, j] and inside_ref(*cell_center_ref(i, j, grid), gt.box)]


# -- inference / evaluation -------------------------------------------------

def nms_ref(dets, threshold: float):
    """Textbook NMS: repeatedly take the best remaining box and drop its overlaps."""
    def rank(d):
        cell = d.cell if d.cell is not None else (-1, -1)
        return (-d.score, cell[0], cell[1], d.class_id, tuple(d.box.as_array()))

    remaining = sorted(dets, key=rank)
    kept = []
    while remaining:
        top = remaining.pop(0)
        kept.append(top)
        remaining = [d for d in remaining
                     if d.class_id != top.class_id or shapely_iou(top.box, d.box) <= threshold]
    return kept


def match_ref(dets, gts, threshold: float, mode: str = "3d"):
    """Greedy matching over a precomputed IoU matrix (shapely overlaps)."""
    def rank(d):
        cell = d.cell if d.cell is not None else (-1, -1)
        return (-d.score, cell[0], cell[1], d.class_id, tuple(d.box.as_array()))

    dets = sorted(dets, key=rank)
    iou = shapely_iou if mode == "bev" else shapely_iou_3d
    mat = np.array([[iou(d.box, g.box) for g in gts] for d in dets]).reshape(len(dets), len(gts))
    taken = set()
    flags = []
    for r in range(len(dets)):
        cands = [(mat[r, g], -g) for g in range(len(gts)) if g not in taken and mat[r, g] >= threshold]
        if cands:
            g = -max(cands)[1]
            taken.add(g)
            flags.append(True)
        else:
            flags.append(False)
    return flags, [g in taken for g in range(len(gts))]


def ap40_ref(tp_flags: Sequence[bool], num_gt: int) -> float:
    """Exact-fraction AP over 40 recall points for an already score-sorted list."""
    tp = 0
    curve = []
    for n, hit in enumerate(tp_flags, 1):
        tp += bool(hit)
        curve.append((Fraction(tp, num_gt), Fraction(tp, n)))
    total = Fraction(0)
    for k in range(1, 41):
        r = Fraction(k, 40)
        ps = [p for rr, p in curve if rr >= r]
        total += max(ps) if ps else 0
    return float(total / 40)


def recall_count_ref(matched, num_points, lo, hi):
    hits = total = 0
    for m, n in zip(matched, num_points):
        if n >= lo and (hi is None or n <= hi):
            total += 1
            hits += bool(m)
    return None if total == 0 else hits / total


# -- gradients --------------------------------------------------------------

def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6,
                       indices=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (optionally at a subset of flat indices)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    grad = np.zeros(flat.size)
    for k in idx:
        old = flat[k]
        flat[k] = old + step
        fp = f(x)
        flat[k] = old - step
        fm = f(x)
        flat[k] = old
        grad[k] = (fp - fm) / (2 * step)
    return grad.reshape(x.shape)


def gradient_close(analytic, numeric, rel: float = 1e-4, abs_tol: float = 1e-7) -> bool:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return bool(np.all((err <= abs_tol) | (err <= rel * scale)))
