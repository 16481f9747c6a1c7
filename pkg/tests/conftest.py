import contextlib
import io
import json
from pathlib import Path

import pytest

from hotspot3d.cli import main

# 200 x 200 map of 0.2 m cells over a 40 m square; keeps CLI runs fast.
SMALL_CONFIG = {
    "grid": {"x_range": [0.0, 40.0], "y_range": [-20.0, 20.0], "z_range": [-3.0, 1.0],
             "voxel_size": [0.05, 0.05, 0.1], "max_points_per_voxel": 5, "downsample": 4},
    "seed": 7,
    "synth": {"num_scenes": 3, "num_objects": 5, "points_per_object": [60, 1500], "clutter_points": 300},
}


def run_cli(*argv):
    """Run the CLI in-process; returns (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def tree_bytes(root) -> dict:
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def run_pipeline(workdir, config_path, jobs: int) -> dict:
    """Every subcommand in order; returns {name: (code, stdout, output files)}."""
    w = Path(workdir)
    common = ["--config", config_path, "--jobs", jobs]
    scenes = w / "synth" / "scenes"
    steps = [
        ("synth", ["synth", *common, "--output-dir", w / "synth"]),
        ("voxelize", ["voxelize", *common, "--scenes", scenes, "--output-dir", w / "voxelize"]),
        ("assign", ["assign", *common, "--scenes", scenes, "--output-dir", w / "assign"]),
        ("encode", ["encode", *common, "--scenes", scenes, "--output-dir", w / "encode"]),
        ("losses", ["losses", *common, "--scenes", scenes, "--heads", w / "encode" / "heads",
                    "--save-grads", "--output-dir", w / "losses"]),
        ("detect", ["detect", *common, "--heads", w / "encode" / "heads", "--output-dir", w / "detect"]),
        ("eval", ["eval", *common, "--scenes", scenes, "--detections", w / "detect" / "detections",
                  "--output-dir", w / "eval"]),
        ("oracle-check", ["oracle-check", *common, "--output-dir", w / "oracle-check"]),
    ]
    results = {}
    for name, argv in steps:
        code, stdout, _ = run_cli(*argv)
        results[name] = (code, stdout, tree_bytes(argv[argv.index("--output-dir") + 1]))
    return results


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return path
