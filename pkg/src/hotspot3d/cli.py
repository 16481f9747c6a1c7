"""Command-line entry point: ``hotspot3d <subcommand> [options]``.

Every subcommand loads one JSON run config (``--config``), applies flag
overrides, writes the fully resolved config to ``<output-dir>/config.resolved.json``
and processes scenes in scene-id order regardless of ``--jobs``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, List, Sequence

import numpy as np

from . import io as hio
from .assignment import HOTSPOT, IGNORED, Encoding, max_hotspots
from .codec import HeadOutput
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .evaluator import POINT_BUCKETS, evaluate, format_metrics, recall_by_points, scene_recall_inputs
from .inference import Detection
from .loss import composite_loss
from .pipeline import assign_scene, detect_scene, head_from_assignment, scene_occupancy
from .synth import SynthSpec, synth_scene

log = logging.getLogger("hotspot3d")


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _run_parallel(fn: Callable, items: Sequence, jobs: int) -> List:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- per-scene workers (top level so they pickle) ---------------------------

def _synth_one(args):
    cfg, index, out = args
    s = cfg.synth
    spec = SynthSpec(num_objects=s.num_objects, class_names=cfg.class_names,
                     points_per_object=s.points_per_object, noise_sigma=s.noise_sigma,
                     clutter_points=s.clutter_points, x_range=cfg.grid.x_range,
                     y_range=cfg.grid.y_range, seed=scene_seed(cfg.seed, index))
    bundle = synth_scene(spec, f"{index:06d}")
    hio.write_scene(out, bundle, cfg.class_names)
    return {"scene": bundle.scene_id, "objects": len(bundle.gts), "points": len(bundle.points),
            "num_points": [g.num_points for g in bundle.gts]}


def _voxelize_one(args):
    cfg, scenes, sid, out = args
    bundle = hio.read_scene(scenes, sid, cfg.class_names)
    occ = scene_occupancy(bundle, cfg.grid)
    rows, cols = np.nonzero(occ.occupied)
    records = [{"cell": [int(i), int(j)], "count": int(occ.counts[i, j])} for i, j in zip(rows, cols)]
    hio.write_report(Path(out) / f"{sid}.jsonl", "occupancy", records)
    return {"scene": sid, "occupied": len(records), "shape": list(occ.shape)}


def _assign_one(args):
    cfg, scenes, sid, out = args
    bundle = hio.read_scene(scenes, sid, cfg.class_names)
    amap = assign_scene(bundle, cfg)
    counts = amap.hotspot_counts(len(bundle.gts))
    records = []
    for k, gt in enumerate(bundle.gts):
        m = max_hotspots(gt, cfg.C)
        records.append({"type": "object", "object": k, "class_id": gt.class_id,
                        "hotspots": counts[k], "max_hotspots": None if math.isinf(cfg.C) else m,
                        "num_points": gt.num_points})
    for i, j in amap.hotspot_cells():
        records.append({"type": "hotspot", "cell": [i, j], "object": int(amap.owner[i, j]),
                        "class_id": int(amap.class_id[i, j]),
                        "targets": amap.box_targets[i, j].tolist(),
                        "relation": amap.relation[i, j].tolist()})
    records.append({"type": "summary", "hotspot": int((amap.state == HOTSPOT).sum()),
                    "ignored": int((amap.state == IGNORED).sum()),
                    "negative": int((amap.state == 0).sum())})
    hio.write_report(Path(out) / f"{sid}.jsonl", "assignment", records)
    return {"scene": sid, "hotspots": counts,
            "within_budget": all(c <= max_hotspots(g, cfg.C) for c, g in zip(counts, bundle.gts))}


def _encode_one(args):
    cfg, scenes, sid, out = args
    bundle = hio.read_scene(scenes, sid, cfg.class_names)
    amap = assign_scene(bundle, cfg)
    head = head_from_assignment(amap, bundle.gts, cfg.specs, cfg.grid)
    hio.write_head(Path(out) / "heads" / f"{sid}.head", head)
    records = [{"cell": [i, j], "object": int(amap.owner[i, j]),
                "targets": dict(zip(("dx", "dy", "z", "log_l", "log_w", "log_h", "cos_r", "sin_r"),
                                    amap.box_targets[i, j].tolist()))}
               for i, j in amap.hotspot_cells()]
    hio.write_report(Path(out) / "targets" / f"{sid}.jsonl", "targets", records)
    return {"scene": sid, "hotspots": len(records)}


def _losses_one(args):
    cfg, scenes, heads, sid, out = args
    bundle = hio.read_scene(scenes, sid, cfg.class_names)
    amap = assign_scene(bundle, cfg)
    head = hio.read_head(Path(heads) / f"{sid}.head")
    parts, grad = composite_loss(head, amap, cfg.specs, cfg.focal, cfg.weights)
    if out is not None:
        hio.write_head(Path(out) / f"{sid}.grad", HeadOutput(grad, head.channels))
    return {"scene": sid, **parts, "grad_l2": float(np.sqrt(np.sum(grad * grad))),
            "hotspots": int(amap.hotspot_mask.sum()), "ignored": int(amap.ignored_mask.sum())}


def _detect_one(args):
    cfg, heads, sid, out = args
    head = hio.read_head(Path(heads) / f"{sid}.head")
    dets = detect_scene(head, cfg)
    hio.write_report(Path(out) / f"{sid}.jsonl", "detections",
                     [hio.detection_record(d, sid) for d in dets])
    return {"scene": sid, "detections": len(dets)}


# -- subcommands ------------------------------------------------------------

def _scene_ids(path) -> List[str]:
    ids = hio.list_scenes(path)
    if not ids:
        raise ConfigError(f"no scenes found in {path}")
    return ids


def cmd_synth(cfg: RunConfig, a, out: Path):
    n = a.num_scenes if a.num_scenes is not None else cfg.synth.num_scenes
    scenes = out / "scenes"
    res = _run_parallel(_synth_one, [(cfg, k, scenes) for k in range(n)], a.jobs)
    hio.write_report(out / "synth.jsonl", "synth", res)
    for r in res:
        print(f"scene {r['scene']} objects={r['objects']} points={r['points']}")
    return 0


def cmd_voxelize(cfg, a, out):
    ids = _scene_ids(a.scenes)
    dest = out / "occupancy"
    dest.mkdir(parents=True, exist_ok=True)
    res = _run_parallel(_voxelize_one, [(cfg, a.scenes, s, dest) for s in ids], a.jobs)
    for r in res:
        print(f"scene {r['scene']} occupied_cells={r['occupied']}")
    return 0


def cmd_assign(cfg, a, out):
    ids = _scene_ids(a.scenes)
    dest = out / "assign"
    dest.mkdir(parents=True, exist_ok=True)
    res = _run_parallel(_assign_one, [(cfg, a.scenes, s, dest) for s in ids], a.jobs)
    ok = True
    for r in res:
        ok &= r["within_budget"]
        print(f"scene {r['scene']} hotspots={r['hotspots']} within_budget={r['within_budget']}")
    return 0 if ok else 1


def cmd_encode(cfg, a, out):
    ids = _scene_ids(a.scenes)
    (out / "heads").mkdir(parents=True, exist_ok=True)
    (out / "targets").mkdir(parents=True, exist_ok=True)
    res = _run_parallel(_encode_one, [(cfg, a.scenes, s, out) for s in ids], a.jobs)
    for r in res:
        print(f"scene {r['scene']} encoded_hotspots={r['hotspots']}")
    return 0


def cmd_losses(cfg, a, out):
    ids = _scene_ids(a.scenes)
    grads = None
    if a.save_grads:
        grads = out / "grads"
        grads.mkdir(parents=True, exist_ok=True)
    res = _run_parallel(_losses_one, [(cfg, a.scenes, a.heads, s, grads) for s in ids], a.jobs)
    hio.write_report(out / "losses.jsonl", "losses", res)
    for r in res:
        print(f"scene {r['scene']} cls={r['cls']:.6g} loc={r['loc']:.6g} q={r['q']:.6g} "
              f"total={r['total']:.6g}")
    return 0


def cmd_detect(cfg, a, out):
    ids = sorted(p.stem for p in Path(a.heads).glob("*.head"))
    if not ids:
        raise ConfigError(f"no head files found in {a.heads}")
    dest = out / "detections"
    dest.mkdir(parents=True, exist_ok=True)
    res = _run_parallel(_detect_one, [(cfg, a.heads, s, dest) for s in ids], a.jobs)
    for r in res:
        print(f"scene {r['scene']} detections={r['detections']}")
    return 0


def cmd_eval(cfg, a, out):
    ids = _scene_ids(a.scenes)
    pairs = []
    for sid in ids:
        bundle = hio.read_scene(a.scenes, sid, cfg.class_names)
        if a.detections is None:
            # Ground truth as detections: the identity experiment.
            dets = [Detection(g.class_id, 1.0, g.box) for g in bundle.gts]
        else:
            path = Path(a.detections) / f"{sid}.jsonl"
            dets = [hio.detection_from_record(r) for r in hio.read_report(path, "detections")]
        pairs.append((dets, bundle.gts))
    metrics = evaluate(pairs, cfg.class_names, cfg.eval)
    lines = format_metrics(metrics, cfg.eval.mode, cfg.eval.difficulty)
    matched, points = scene_recall_inputs(pairs, cfg.eval.iou_thresholds, cfg.eval.mode)
    recall = recall_by_points(matched, points, POINT_BUCKETS)
    records = [{"type": "ap40", "class": k, "mode": cfg.eval.mode, "difficulty": cfg.eval.difficulty,
                "ap": v} for k, v in metrics.items()]
    records += [{"type": "recall_by_points", "bucket": k, "recall": v} for k, v in recall.items()]
    hio.write_report(out / "metrics.jsonl", "metrics", records)
    for line in lines:
        print(line)
    for k, v in recall.items():
        print(f"recall points={k} {'absent' if v is None else f'{v:.4f}'}")
    return 0


def cmd_oracle_check(cfg, a, out):
    from .checks import run_all
    results = run_all(seed=cfg.seed, quick=not a.full)
    hio.write_report(out / "oracle_check.jsonl", "oracle-check",
                     [{"check": name, "passed": ok, "detail": detail} for name, ok, detail in results])
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


COMMANDS = {
    "synth": cmd_synth, "voxelize": cmd_voxelize, "assign": cmd_assign, "encode": cmd_encode,
    "losses": cmd_losses, "detect": cmd_detect, "eval": cmd_eval, "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--output-dir", default="out")
    common.add_argument("--class-names", help="comma-separated class names")
    common.add_argument("--encoding", choices=[e.value for e in Encoding])
    common.add_argument("--C", dest="C", help="hotspot budget constant (number or 'inf')")
    common.add_argument("--downsample", type=int)
    common.add_argument("--error-format", choices=("text", "json"), default="text")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hotspot3d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="generate synthetic scenes")
    p.add_argument("--num-scenes", type=int)
    for name, helptext in (("voxelize", "BEV occupancy per scene"), ("assign", "hotspot assignment"),
                           ("encode", "regression targets and ground-truth head tensors")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--scenes", required=True)
    p = sub.add_parser("losses", parents=[common], help="losses and gradients for head tensors")
    p.add_argument("--scenes", required=True)
    p.add_argument("--heads", required=True)
    p.add_argument("--save-grads", action="store_true")
    p = sub.add_parser("detect", parents=[common], help="decode head tensors into detections")
    p.add_argument("--heads", required=True)
    p = sub.add_parser("eval", parents=[common], help="AP40 and recall by point count")
    p.add_argument("--scenes", required=True)
    p.add_argument("--detections", help="detection reports (default: ground truth)")
    p = sub.add_parser("oracle-check", parents=[common], help="run the reference cross-checks")
    p.add_argument("--full", action="store_true", help="full-size suites")
    return parser


def resolve_config(a) -> RunConfig:
    cfg = load_config(a.config) if a.config else RunConfig()
    data = cfg.to_dict()
    if a.seed is not None:
        data["seed"] = a.seed
    if a.class_names:
        data["class_names"] = [c.strip() for c in a.class_names.split(",") if c.strip()]
    if a.encoding:
        data["encoding"] = a.encoding
    if a.C is not None:
        data["C"] = a.C
    if a.downsample is not None:
        data["grid"]["downsample"] = a.downsample
    return config_from_dict(data)


def _report_error(a, exc: Exception) -> None:
    if getattr(a, "error_format", "text") == "json":
        rec = {"error": type(exc).__name__, "message": str(exc)}
        line = getattr(exc, "line", None)
        if line is not None:
            rec["line"] = line
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(a)
        out = Path(a.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        return COMMANDS[a.command](cfg, a, out)
    except (ConfigError, hio.FormatError, ValueError, OSError) as exc:
        _report_error(a, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
