"""Cross-check suites pairing each fast path with its reference in :mod:`.oracles`.

Each check returns ``(passed, detail)``. ``quick=True`` shrinks the sample
counts so ``hotspot3d oracle-check`` finishes in seconds; the full sizes are
what the acceptance tests run.
"""
from __future__ import annotations

import logging
import math
import time
from typing import Callable, List, Tuple

import numpy as np

from . import oracles
from .assignment import Encoding, GroundTruth, build_assignment, find_spots
from .codec import (HeadOutput, SoftArgminSpec, decode_boxes, default_specs, encode_box,
                    layout_channels, softargmin, softargmin_grad, write_targets)
from .config import RunConfig
from .evaluator import ap40, evaluate, match, recall_by_points, scene_recall_inputs, POINT_BUCKETS
from .geometry import Box3D, point_in_box_bev, rotated_iou_bev
from .inference import Detection, rotated_nms
from .loss import (FocalParams, LossWeights, classification_loss, composite_loss, focal_loss,
                   quadrant_loss, smooth_l1)
from .pipeline import assign_scene, detect_scene, head_from_assignment
from .synth import SynthSpec, simulate_detector, synth_scene
from .voxelizer import GridConfig, OccupancyGrid, bev_occupancy, cell_centers, voxelize

log = logging.getLogger(__name__)

Result = Tuple[bool, str]

# 40 x 40 map of 0.8 m cells: small enough for a pure-Python reference.
ASSIGN_GRID = GridConfig(x_range=(0.0, 32.0), y_range=(-16.0, 16.0), z_range=(-3.0, 1.0),
                         voxel_size=(0.2, 0.2, 0.2), max_points_per_voxel=5, downsample=4)
# 200 x 200 map of 0.2 m cells: fine enough that every synthetic object gets hotspots.
E2E_GRID = GridConfig(x_range=(0.0, 40.0), y_range=(-20.0, 20.0), z_range=(-3.0, 1.0),
                      voxel_size=(0.05, 0.05, 0.1), max_points_per_voxel=5, downsample=4)


def random_box(rng, center_scale: float = 10.0, size=(0.5, 5.0)) -> Box3D:
    return Box3D(rng.uniform(-center_scale, center_scale), rng.uniform(-center_scale, center_scale),
                 rng.uniform(-2, 0), rng.uniform(*size), rng.uniform(*size), rng.uniform(0.5, 2.5),
                 rng.uniform(-math.pi, math.pi))


# -- criterion 1 ------------------------------------------------------------

def _rel_ok(analytic, numeric, rel=1e-4, abs_tol=1e-7):
    return oracles.gradient_close(analytic, numeric, rel, abs_tol)


def _tiny_scene(rng, grid: GridConfig, encoding: Encoding, num_classes: int = 3):
    rows, cols = grid.output_shape
    occ = rng.uniform(size=(rows, cols)) < 0.6
    centers = cell_centers(grid)
    gts = []
    for _ in range(int(rng.integers(1, 3))):
        c = centers[int(rng.integers(rows)), int(rng.integers(cols))]
        gts.append(GroundTruth(int(rng.integers(num_classes)),
                               Box3D(c[0] + rng.uniform(-0.3, 0.3), c[1] + rng.uniform(-0.3, 0.3),
                                     rng.uniform(-2, 0), rng.uniform(1.0, 3.0), rng.uniform(0.8, 2.0),
                                     rng.uniform(0.8, 2.0), rng.uniform(-math.pi, math.pi))))
    amap = build_assignment(OccupancyGrid(occ, occ.astype(np.int64)), gts, float(rng.uniform(2, 20)),
                            encoding, grid, num_classes)
    return amap, gts


def check_gradients(configs: int = 100, seed: int = 0, time_limit: float = 10.0) -> Result:
    """Analytic gradients of every loss vs central differences."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    fails = []
    grid = GridConfig(x_range=(0.0, 3.2), y_range=(-1.6, 1.6), z_range=(-3.0, 1.0),
                      voxel_size=(0.2, 0.2, 0.2), max_points_per_voxel=5, downsample=4)
    specs = default_specs(grid)
    for trial in range(configs):
        fp = FocalParams(float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.0, 4.0)))
        # focal loss, elementwise in p
        p = rng.uniform(0.01, 0.99, size=8)
        hot = rng.uniform(size=8) < 0.5
        _, g = focal_loss(p, hot, fp)
        num = oracles.central_difference(lambda x: float(np.sum(focal_loss(x, hot, fp)[0])), p, 1e-6)
        if not _rel_ok(g, num):
            fails.append(f"focal#{trial}")
        # smooth L1 away from the kink
        x = rng.uniform(-3, 3, size=8)
        x = x[np.abs(np.abs(x) - 1.0) > 1e-3]
        _, g = smooth_l1(x)
        num = oracles.central_difference(lambda v: float(np.sum(smooth_l1(v)[0])), x, 1e-6)
        if not _rel_ok(g, num):
            fails.append(f"smooth_l1#{trial}")
        # soft-argmin
        spec = SoftArgminSpec(float(rng.uniform(-5, 0)), float(rng.uniform(0.5, 5)), int(rng.integers(2, 20)))
        logits = rng.normal(0, 2, size=spec.n)
        num = oracles.central_difference(lambda v: softargmin(v, spec), logits, 1e-6)
        if not _rel_ok(softargmin_grad(logits, spec), num, 1e-6, 1e-9):
            fails.append(f"softargmin#{trial}")
        # composite (BCE quadrant branch included) on a tiny scene
        encoding = [Encoding.QUADRANT, Encoding.EIGHT_DIR, Encoding.DEVIATION, Encoding.LEFT_RIGHT][trial % 4]
        amap, _ = _tiny_scene(rng, grid, encoding)
        channels = layout_channels(3, specs, encoding.size)
        data = rng.normal(0, 1.5, size=amap.shape + (len(channels),))
        head = HeadOutput(data, channels)
        for name in ("cls", "rel"):
            if name == "rel" and encoding is Encoding.DEVIATION:
                head.data[:, :, head.index(name)] = rng.uniform(-0.6, 0.6, size=amap.shape + (encoding.size,))
            else:
                head.data[:, :, head.index(name)] = rng.uniform(0.02, 0.98, size=amap.shape + (head.group(name).shape[-1],))
        w = LossWeights(*rng.uniform(0.1, 2.0, size=3))
        _, g_bce = quadrant_loss(head.group("rel"), amap)
        num_bce = oracles.central_difference(
            lambda v: quadrant_loss(v, amap)[0], head.group("rel").copy(), 1e-6)
        if not _rel_ok(g_bce, num_bce):
            fails.append(f"bce#{trial}")
        _, grad = composite_loss(head, amap, specs, fp, w)

        def f(d):
            return composite_loss(HeadOutput(d, channels), amap, specs, fp, w)[0]["total"]
        hot_idx = np.flatnonzero(np.repeat(amap.hotspot_mask.reshape(-1), len(channels)))
        picks = rng.choice(data.size, size=12, replace=False)
        if len(hot_idx):
            picks = np.r_[picks, rng.choice(hot_idx, size=min(12, len(hot_idx)), replace=False)]
        num = oracles.central_difference(f, head.data, 1e-6, indices=picks)
        if not _rel_ok(grad.reshape(-1)[picks], num.reshape(-1)[picks]):
            fails.append(f"composite#{trial}")
    elapsed = time.perf_counter() - t0
    log.info("gradients: %d configs in %.2fs", configs, elapsed)
    fast = elapsed < time_limit
    return not fails and fast, f"configs={configs} failures={fails[:5]} within_{time_limit:g}s={fast}"


# -- criterion 2 ------------------------------------------------------------

def _assign_scene_spec(rng_seed: int, k: int) -> SynthSpec:
    return SynthSpec(num_objects=k, points_per_object=(1, 400), clutter_points=300,
                     x_range=ASSIGN_GRID.x_range, y_range=ASSIGN_GRID.y_range, seed=rng_seed)


def check_assignment(scenes: int = 1000, seed: int = 0) -> Result:
    """build_assignment vs the brute-force reference, plus budget and C = inf checks."""
    rng = np.random.default_rng(seed)
    mismatches, over_budget, inf_fail = 0, 0, 0
    Cs = [32.0, 64.0, 128.0, 256.0, math.inf]
    for s in range(scenes):
        bundle = synth_scene(_assign_scene_spec(int(rng.integers(2**31)), int(rng.integers(0, 7))))
        occ = bev_occupancy(voxelize(bundle.points, ASSIGN_GRID, bundle.seed), ASSIGN_GRID)
        C = Cs[s % len(Cs)]
        amap = build_assignment(occ, bundle.gts, C, Encoding.QUADRANT, ASSIGN_GRID, 3)
        ref_state, ref_owner = oracles.assignment_ref(occ.occupied, bundle.gts, C, ASSIGN_GRID)
        if not (np.array_equal(amap.state, ref_state) and np.array_equal(amap.owner, ref_owner)):
            mismatches += 1
        counts = amap.hotspot_counts(len(bundle.gts))
        for gt, n in zip(bundle.gts, counts):
            budget = math.inf if math.isinf(C) else max(1, math.floor(C / gt.box.volume))
            if n > budget:
                over_budget += 1
        if math.isinf(C):
            spots = set()
            for gt in bundle.gts:
                spots |= set(oracles.spots_ref(occ.occupied, gt, ASSIGN_GRID))
            if spots != set(amap.hotspot_cells()):
                inf_fail += 1
    ok = mismatches == 0 and over_budget == 0 and inf_fail == 0
    return ok, f"scenes={scenes} mismatches={mismatches} over_budget={over_budget} inf_mismatch={inf_fail}"


# -- criterion 3 ------------------------------------------------------------

def check_rotated_iou(pairs: int = 200, samples: int = 10_000_000, tol: float = 2e-3,
                      seed: int = 0) -> Result:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        a = random_box(rng, 1.0, (0.5, 4.0))
        b = random_box(rng, 1.0, (0.5, 4.0))
        mc = oracles.monte_carlo_iou(a, b, samples, rng)
        worst = max(worst, abs(rotated_iou_bev(a, b) - mc))
    sq = Box3D(0, 0, 0, 1, 1, 1, 0)
    sq45 = Box3D(0, 0, 0, 1, 1, 1, math.pi / 4)
    v = rotated_iou_bev(sq, sq45)
    ok = worst <= tol and abs(v - 0.7071) <= 1e-3
    return ok, f"pairs={pairs} samples={samples} max_abs_err={worst:.2e} iou45={v:.6f}"


# -- criterion 4 ------------------------------------------------------------

def check_codec_roundtrip(boxes: int = 10_000, seed: int = 0) -> Result:
    rng = np.random.default_rng(seed)
    grid = GridConfig()
    specs = default_specs(grid)
    rows, cols = grid.output_shape
    centers = cell_centers(grid)
    n = boxes
    ri, ci = rng.integers(rows, size=n), rng.integers(cols, size=n)
    head = HeadOutput(np.zeros((1, n, len(layout_channels(1, specs)))), layout_channels(1, specs))
    truth = []
    for k in range(n):
        ctr = centers[ri[k], ci[k]]
        box = Box3D(ctr[0] + rng.uniform(-3.99, 3.99), ctr[1] + rng.uniform(-3.99, 3.99),
                    rng.uniform(-2.99, 0.99), *np.exp(rng.uniform(-1.5, 2.0, size=3)),
                    rng.uniform(-math.pi, math.pi))
        truth.append(box)
        write_targets(head, 0, k, encode_box(box, ctr), specs, mode="saturate")
    dec, valid = decode_boxes(head, np.zeros(n, np.int64), np.arange(n), grid, specs,
                              centers=centers[ri, ci])
    ref = np.array([b.as_array() for b in truth])
    worst_c = np.max(np.abs(dec[:, :3] - ref[:, :3]), axis=0)
    worst_size = float(np.max(np.abs(dec[:, 3:6] - ref[:, 3:6])))
    dyaw = (dec[:, 6] - ref[:, 6] + math.pi) % (2 * math.pi) - math.pi
    worst_yaw = float(np.max(np.abs(dyaw)))
    ok_valid = bool(np.all(valid))
    half = np.array([specs["dx"].bin_width, specs["dy"].bin_width, specs["z"].bin_width]) / 2
    ok = ok_valid and bool(np.all(worst_c <= half + 1e-12)) and worst_size <= 1e-9 and worst_yaw <= 1e-9
    return ok, (f"boxes={n} center_err={np.round(worst_c, 6).tolist()} half_bins={half.tolist()} "
                f"size_err={worst_size:.1e} yaw_err={worst_yaw:.1e}")


# -- criterion 5 ------------------------------------------------------------

def e2e_config() -> RunConfig:
    return RunConfig(grid=E2E_GRID)


def e2e_scene(seed: int, index: int) -> "SynthSpec":
    return SynthSpec(num_objects=8, points_per_object=(60, 1500), clutter_points=400,
                     x_range=E2E_GRID.x_range, y_range=E2E_GRID.y_range,
                     seed=seed * 100_003 + index)


def check_end_to_end(scenes: int = 100, seed: int = 0, time_limit: float = 30.0) -> Result:
    cfg = e2e_config()
    t0 = time.perf_counter()
    pairs = []
    missing = 0
    for s in range(scenes):
        bundle = synth_scene(e2e_scene(seed, s), f"{s:06d}")
        amap = assign_scene(bundle, cfg)
        missing += sum(1 for c in amap.hotspot_counts(len(bundle.gts)) if c == 0)
        head = head_from_assignment(amap, bundle.gts, cfg.specs, cfg.grid)
        pairs.append((detect_scene(head, cfg), bundle.gts))
    aps = evaluate(pairs, cfg.class_names, cfg.eval)
    elapsed = time.perf_counter() - t0
    present = {k: v for k, v in aps.items() if v is not None}
    log.info("end_to_end: %d scenes in %.2fs", scenes, elapsed)
    fast = elapsed < time_limit
    ok = bool(present) and all(v == 1.0 for v in present.values()) and fast
    return ok, (f"scenes={scenes} ap40={ {k: round(v, 4) for k, v in present.items()} } "
                f"objects_without_hotspots={missing} within_{time_limit:g}s={fast}")


# -- criterion 6 ------------------------------------------------------------

def check_masking(trials: int = 50, seed: int = 0) -> Result:
    rng = np.random.default_rng(seed)
    grid = GridConfig(x_range=(0.0, 6.4), y_range=(-3.2, 3.2), z_range=(-3.0, 1.0),
                      voxel_size=(0.2, 0.2, 0.2), max_points_per_voxel=5, downsample=4)
    specs = default_specs(grid)
    bad = 0
    ignored_total = 0
    for _ in range(trials):
        amap, _ = _tiny_scene(rng, grid, Encoding.QUADRANT)
        ign = amap.ignored_mask
        ignored_total += int(ign.sum())
        channels = layout_channels(3, specs, 4)
        head = HeadOutput(rng.normal(size=amap.shape + (len(channels),)), channels)
        head.data[:, :, head.index("cls")] = rng.uniform(0.01, 0.99, size=amap.shape + (3,))
        head.data[:, :, head.index("rel")] = rng.uniform(0.01, 0.99, size=amap.shape + (4,))
        other = head.copy()
        other.data[ign, head.index("cls")] = rng.uniform(0.0, 1.0, size=(int(ign.sum()), 3))
        l1, g1 = classification_loss(head.group("cls"), amap)
        l2, g2 = classification_loss(other.group("cls"), amap)
        p1, G1 = composite_loss(head, amap, specs)
        p2, G2 = composite_loss(other, amap, specs)
        same = (l1 == l2 and np.array_equal(g1, g2) and p1 == p2 and np.array_equal(G1, G2)
                and not np.any(g1[ign]))
        bad += not same
    return bad == 0, f"trials={trials} ignored_cells={ignored_total} differing={bad}"


# -- criterion 7 ------------------------------------------------------------

def check_evaluator(instances: int = 500, seed: int = 0) -> Result:
    hand = ap40([0.9, 0.8, 0.7], [True, False, True], 2)
    rng = np.random.default_rng(seed)
    bad_match = bad_ap = 0
    for _ in range(instances):
        ng, nd = int(rng.integers(1, 6)), int(rng.integers(0, 11))
        gts = [GroundTruth(0, random_box(rng, 6.0, (1.0, 4.0))) for _ in range(ng)]
        dets = []
        for _ in range(nd):
            if rng.uniform() < 0.7:
                g = gts[int(rng.integers(ng))].box
                box = Box3D(g.cx + rng.normal(0, 0.3), g.cy + rng.normal(0, 0.3), g.cz + rng.normal(0, 0.1),
                            g.l * rng.uniform(0.8, 1.2), g.w * rng.uniform(0.8, 1.2), g.h, g.yaw + rng.normal(0, 0.2))
            else:
                box = random_box(rng, 6.0, (1.0, 4.0))
            dets.append(Detection(0, float(np.round(rng.uniform(0.3, 1.0), 2)), box))
        mode = "bev" if rng.uniform() < 0.5 else "3d"
        thr = float(rng.choice([0.3, 0.5, 0.7]))
        res = match(dets, gts, thr, mode)
        ref_flags, ref_gt = oracles.match_ref(dets, gts, thr, mode)
        if res.det_tp != ref_flags or res.gt_matched != ref_gt:
            bad_match += 1
        if abs(ap40(res.scores, res.det_tp, ng) - oracles.ap40_ref(ref_flags, ng)) > 1e-12:
            bad_ap += 1
    ok = abs(hand - 5 / 6) <= 1e-12 and bad_match == 0 and bad_ap == 0
    return ok, f"hand_ap={hand:.6f} instances={instances} match_mismatch={bad_match} ap_mismatch={bad_ap}"


# -- criterion 8 ------------------------------------------------------------

def check_sparsity_harness(scenes: int = 200, seed: int = 0) -> Result:
    rng = np.random.default_rng(seed)
    pairs = []
    for s in range(scenes):
        spec = SynthSpec(num_objects=6, points_per_object=(1, 2000), clutter_points=50, seed=seed * 7919 + s)
        bundle = synth_scene(spec)
        pairs.append((simulate_detector(bundle.gts, rng), bundle.gts))
    matched, points = scene_recall_inputs(pairs, (0.7, 0.5, 0.5), "3d")
    report = recall_by_points(matched, points, POINT_BUCKETS)
    expected = {lbl: oracles.recall_count_ref(matched, points, lo, hi)
                for lbl, (lo, hi) in zip(report, POINT_BUCKETS)}
    ok = report == expected and all(v is not None for v in report.values())
    shown = {k: (None if v is None else round(v, 3)) for k, v in report.items()}
    return ok, f"gts={len(points)} recall={shown}"


# -- geometry / misc oracles --------------------------------------------------

def check_iou_shapely(pairs: int = 2000, seed: int = 0) -> Result:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        a, b = random_box(rng, 2.0), random_box(rng, 2.0)
        worst = max(worst, abs(rotated_iou_bev(a, b) - oracles.shapely_iou(a, b)))
    return worst <= 1e-9, f"pairs={pairs} max_abs_err={worst:.1e}"


def check_point_in_box(samples: int = 100_000, seed: int = 0) -> Result:
    rng = np.random.default_rng(seed)
    bad = 0
    per = 1000
    for _ in range(samples // per):
        box = random_box(rng, 2.0)
        pts = rng.uniform(-6, 6, size=(per, 2))
        fast = point_in_box_bev(pts, box)
        corners = oracles.corners_ref(box)
        for p, f in zip(pts, fast):
            inside = all((corners[(k + 1) % 4][0] - corners[k][0]) * (p[1] - corners[k][1])
                         - (corners[(k + 1) % 4][1] - corners[k][1]) * (p[0] - corners[k][0]) >= 0
                         for k in range(4))
            bad += inside != bool(f)
    return bad == 0, f"samples={samples} disagreements={bad}"


def check_occupancy(clouds: int = 20, seed: int = 0) -> Result:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(clouds):
        pts = np.column_stack([rng.uniform(-2, 34, 1000), rng.uniform(-18, 18, 1000),
                               rng.uniform(-3.5, 1.5, 1000), rng.uniform(0, 1, 1000)])
        occ = bev_occupancy(voxelize(pts, ASSIGN_GRID, int(rng.integers(1000))), ASSIGN_GRID)
        bad += not np.array_equal(occ.occupied, oracles.occupancy_ref(pts, ASSIGN_GRID))
    return bad == 0, f"clouds={clouds} mismatches={bad}"


def check_nms(trials: int = 100, seed: int = 0) -> Result:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(1, 51))
        dets = [Detection(int(rng.integers(2)), float(np.round(rng.uniform(0.3, 1), 2)),
                          random_box(rng, 4.0, (0.5, 3.0)), (int(rng.integers(20)), int(rng.integers(20))))
                for _ in range(n)]
        thr = float(rng.choice([0.01, 0.1, 0.5]))
        bad += rotated_nms(dets, thr) != oracles.nms_ref(dets, thr)
    return bad == 0, f"trials={trials} mismatches={bad}"


def check_spots(scenes: int = 50, seed: int = 0) -> Result:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(scenes):
        bundle = synth_scene(_assign_scene_spec(int(rng.integers(2**31)), 4))
        occ = bev_occupancy(voxelize(bundle.points, ASSIGN_GRID, 0), ASSIGN_GRID)
        for gt in bundle.gts:
            bad += find_spots(occ, gt, ASSIGN_GRID) != oracles.spots_ref(occ.occupied, gt, ASSIGN_GRID)
    return bad == 0, f"scenes={scenes} mismatches={bad}"


CRITERIA: List[Tuple[str, Callable[..., Result], dict, dict]] = [
    ("gradients", check_gradients, {"configs": 20}, {"configs": 100}),
    ("assignment", check_assignment, {"scenes": 30}, {"scenes": 1000}),
    ("rotated_iou", check_rotated_iou, {"pairs": 10, "samples": 1_000_000, "tol": 5e-3},
     {"pairs": 200, "samples": 10_000_000, "tol": 2e-3}),
    ("codec_roundtrip", check_codec_roundtrip, {"boxes": 1000}, {"boxes": 10_000}),
    ("end_to_end", check_end_to_end, {"scenes": 10}, {"scenes": 100}),
    ("masking", check_masking, {"trials": 10}, {"trials": 50}),
    ("evaluator", check_evaluator, {"instances": 100}, {"instances": 500}),
    ("sparsity_harness", check_sparsity_harness, {"scenes": 60}, {"scenes": 200}),
    ("iou_vs_shapely", check_iou_shapely, {"pairs": 300}, {"pairs": 2000}),
    ("point_in_box", check_point_in_box, {"samples": 20_000}, {"samples": 100_000}),
    ("occupancy", check_occupancy, {"clouds": 5}, {"clouds": 20}),
    ("nms", check_nms, {"trials": 30}, {"trials": 100}),
    ("spots", check_spots, {"scenes": 10}, {"scenes": 50}),
]


def run_all(seed: int = 0, quick: bool = True):
    results = []
    for name, fn, small, full in CRITERIA:
        ok, detail = fn(seed=seed, **(small if quick else full))
        results.append((name, ok, detail))
    return results
