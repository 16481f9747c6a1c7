"""File formats: KITTI velodyne points, label files, head tensors and reports.

Label files in the native sensor frame hold one object per line::

    <class> cx cy cz l w h yaw [num_points]

Reports are JSON lines: a header record carrying the schema name, version and
record kind, followed by one record per line.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import GroundTruth
from .codec import HeadOutput
from .evaluator import kitti_difficulty
from .geometry import Box3D
from .inference import Detection
from .synth import SceneBundle

REPORT_SCHEMA = "hotspot3d.report"
REPORT_VERSION = 1
HEAD_MAGIC = b"HS3DHEAD"


class FormatError(ValueError):
    """Malformed input; ``line`` is 1-based when known."""

    def __init__(self, path, message, line: Optional[int] = None):
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


class Frame(str, enum.Enum):
    SENSOR = "sensor"
    KITTI_CAMERA = "kitti_camera"


# -- points -----------------------------------------------------------------

def read_point_bin(path) -> np.ndarray:
    """Read (N, 4) float32 points (x, y, z, intensity) from a KITTI .bin file."""
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(path, f"size {len(raw)} is not a multiple of 16 bytes")
    return np.frombuffer(raw, dtype="<f4").reshape(-1, 4).copy()


def write_point_bin(path, points) -> None:
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise ValueError(f"points must be (N, 4), got {pts.shape}")
    Path(path).write_bytes(pts.astype("<f4").tobytes())


# -- labels -----------------------------------------------------------------

def read_calib(path) -> Dict[str, np.ndarray]:
    """Parse a KITTI calib file into R0_rect (3x3) and Tr_velo_to_cam (3x4)."""
    calib = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        key, _, vals = line.partition(":")
        try:
            calib[key.strip()] = np.array([float(v) for v in vals.split()])
        except ValueError as exc:
            raise FormatError(path, f"bad calibration values ({exc})", n) from None
    try:
        return {"R0_rect": calib["R0_rect"].reshape(3, 3),
                "Tr_velo_to_cam": calib["Tr_velo_to_cam"].reshape(3, 4)}
    except (KeyError, ValueError) as exc:
        raise FormatError(path, f"missing or malformed calibration entry: {exc}") from None


def camera_to_sensor(x, y, z, h, w, l, ry, calib: Optional[Dict[str, np.ndarray]] = None) -> Box3D:
    """KITTI camera-frame label (bottom-center location, rotation_y) to a sensor-frame box."""
    bottom = np.array([x, y, z])
    if calib is None:
        # Canonical axes: camera (right, down, forward) -> sensor (forward, left, up).
        cx, cy, cz = bottom[2], -bottom[0], -bottom[1]
    else:
        tr = np.vstack([calib["Tr_velo_to_cam"], [0, 0, 0, 1]])
        r0 = np.eye(4)
        r0[:3, :3] = calib["R0_rect"]
        velo = np.linalg.solve(r0 @ tr, np.r_[bottom, 1.0])
        cx, cy, cz = velo[:3]
    return Box3D(cx, cy, cz + h / 2.0, l, w, h, -ry - math.pi / 2.0)


def sensor_to_camera(box: Box3D) -> Tuple[float, ...]:
    """Inverse of :func:`camera_to_sensor` for canonical axes: (x, y, z, h, w, l, ry)."""
    ry = -box.yaw - math.pi / 2.0
    ry = (ry + math.pi) % (2 * math.pi) - math.pi
    return (-box.cy, -(box.cz - box.h / 2.0), box.cx, box.h, box.w, box.l, ry)


def read_labels(path, class_names: Sequence[str], frame=Frame.SENSOR,
                calib: Optional[Dict[str, np.ndarray]] = None) -> List[GroundTruth]:
    frame = Frame(frame)
    index = {n: k for k, n in enumerate(class_names)}
    gts = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if frame is Frame.SENSOR:
                if len(parts) not in (8, 9):
                    raise FormatError(path, f"expected 8 or 9 fields, got {len(parts)}", n)
                if parts[0] not in index:
                    raise FormatError(path, f"unknown class {parts[0]!r}", n)
                vals = [float(v) for v in parts[1:8]]
                num_points = int(parts[8]) if len(parts) == 9 else 0
                gts.append(GroundTruth(index[parts[0]], Box3D(*vals), num_points))
            else:
                if len(parts) not in (15, 16):
                    raise FormatError(path, f"expected 15 or 16 KITTI fields, got {len(parts)}", n)
                vals = [float(v) for v in parts[1:15]]
                if parts[0] not in index:
                    continue  # DontCare and classes not evaluated
                trunc, occ = vals[0], int(vals[1])
                bbox_h = vals[6] - vals[4]
                h, w, l, x, y, z, ry = vals[7:14]
                gts.append(GroundTruth(index[parts[0]], camera_to_sensor(x, y, z, h, w, l, ry, calib),
                                       0, kitti_difficulty(trunc, occ, bbox_h)))
        except FormatError:
            raise
        except ValueError as exc:
            raise FormatError(path, str(exc), n) from None
    return gts


def format_label(gt: GroundTruth, class_names: Sequence[str]) -> str:
    b = gt.box
    vals = " ".join(repr(float(v)) for v in (b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw))
    return f"{class_names[gt.class_id]} {vals} {gt.num_points}"


def write_labels(path, gts: Iterable[GroundTruth], class_names: Sequence[str]) -> None:
    Path(path).write_text("".join(format_label(g, class_names) + "\n" for g in gts))


# -- scenes -----------------------------------------------------------------

def write_scene(directory, bundle: SceneBundle, class_names: Sequence[str]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_point_bin(d / f"{bundle.scene_id}.bin", bundle.points)
    write_labels(d / f"{bundle.scene_id}.txt", bundle.gts, class_names)
    meta = {"scene_id": bundle.scene_id, "seed": bundle.seed, **bundle.meta}
    (d / f"{bundle.scene_id}.json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def read_scene(directory, scene_id: str, class_names: Sequence[str]) -> SceneBundle:
    d = Path(directory)
    meta_path = d / f"{scene_id}.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    points = read_point_bin(d / f"{scene_id}.bin")
    gts = read_labels(d / f"{scene_id}.txt", class_names)
    seed = int(meta.pop("seed", 0))
    meta.pop("scene_id", None)
    return SceneBundle(points, gts, scene_id, seed, meta)


def list_scenes(directory) -> List[str]:
    return sorted(p.stem for p in Path(directory).glob("*.bin"))


# -- head tensors -----------------------------------------------------------

def write_head(path, head: HeadOutput) -> None:
    """Dense row-major little-endian float64 tensor behind a JSON header."""
    header = json.dumps({"shape": list(head.data.shape), "channels": head.channels,
                         "dtype": "<f8"}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(HEAD_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(np.ascontiguousarray(head.data, dtype="<f8").tobytes())


def read_head(path) -> HeadOutput:
    raw = Path(path).read_bytes()
    if raw[:8] != HEAD_MAGIC:
        raise FormatError(path, "not a head tensor file (bad magic)")
    if len(raw) < 12:
        raise FormatError(path, "truncated header")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + n])
        shape = tuple(int(v) for v in header["shape"])
        channels = list(header["channels"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(path, f"bad header: {exc}") from None
    body = raw[12 + n:]
    expected = int(np.prod(shape)) * 8
    if len(body) != expected:
        raise FormatError(path, f"payload is {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype=header.get("dtype", "<f8")).reshape(shape).astype(np.float64)
    return HeadOutput(data, channels)


# -- reports ----------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def dumps_record(record) -> str:
    return json.dumps(_plain(record), sort_keys=True, allow_nan=False, separators=(",", ":"))


def write_report(path, kind: str, records: Iterable[dict]) -> None:
    header = {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, "kind": kind}
    with open(path, "w") as f:
        f.write(dumps_record(header) + "\n")
        for rec in records:
            f.write(dumps_record(rec) + "\n")


def read_report(path, kind: Optional[str] = None) -> List[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatError(path, "empty report (missing header)", 1)
    try:
        header = json.loads(lines[0])
    except ValueError:
        raise FormatError(path, "header is not JSON", 1) from None
    if header.get("schema") != REPORT_SCHEMA or header.get("version") != REPORT_VERSION:
        raise FormatError(path, f"schema mismatch: {header.get('schema')} v{header.get('version')}", 1)
    if kind is not None and header.get("kind") != kind:
        raise FormatError(path, f"expected {kind!r} report, found {header.get('kind')!r}", 1)
    records = []
    for n, line in enumerate(lines[1:], 2):
        try:
            records.append(json.loads(line))
        except ValueError:
            raise FormatError(path, "record is not JSON", n) from None
    return records


def report_checksum(records: Iterable[dict]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(dumps_record(rec).encode())
        h.update(b"\n")
    return h.hexdigest()


def box_record(box: Box3D) -> dict:
    return {"cx": box.cx, "cy": box.cy, "cz": box.cz, "l": box.l, "w": box.w, "h": box.h, "yaw": box.yaw}


def box_from_record(rec: dict) -> Box3D:
    return Box3D(rec["cx"], rec["cy"], rec["cz"], rec["l"], rec["w"], rec["h"], rec["yaw"])


def detection_record(det: Detection, scene_id: str) -> dict:
    rec = {"scene": scene_id, "class_id": det.class_id, "score": det.score, "box": box_record(det.box)}
    if det.cell is not None:
        rec["cell"] = list(det.cell)
    return rec


def detection_from_record(rec: dict) -> Detection:
    cell = tuple(rec["cell"]) if "cell" in rec else None
    return Detection(int(rec["class_id"]), float(rec["score"]), box_from_record(rec["box"]), cell)
