import math
from dataclasses import replace

import numpy as np
import pytest

from hotspot3d import io as hio
from hotspot3d.assignment import GroundTruth
from hotspot3d.codec import HeadOutput, default_specs
from hotspot3d.geometry import Box3D, rotated_iou_bev
from hotspot3d.inference import Detection
from hotspot3d.synth import SceneError, SynthSpec, synth_scene
from hotspot3d.voxelizer import GridConfig

NAMES = ["Car", "Pedestrian", "Cyclist"]


# -- points -----------------------------------------------------------------

def test_point_bin_empty_and_single(tmp_path):
    p = tmp_path / "empty.bin"
    p.write_bytes(b"")
    assert hio.read_point_bin(p).shape == (0, 4)
    one = tmp_path / "one.bin"
    one.write_bytes(np.array([1, 2, 3, 0.5], dtype="<f4").tobytes())
    assert len(one.read_bytes()) == 16
    assert hio.read_point_bin(one).tolist() == [[1.0, 2.0, 3.0, 0.5]]


def test_point_bin_round_trip_bit_identical(tmp_path):
    pts = np.random.default_rng(0).normal(0, 30, (10_000, 4)).astype(np.float32)
    path = tmp_path / "pts.bin"
    hio.write_point_bin(path, pts)
    back = hio.read_point_bin(path)
    assert back.dtype == np.float32
    assert back.tobytes() == pts.tobytes()


def test_point_bin_rejects_bad_length(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"\x00" * 17)
    with pytest.raises(hio.FormatError, match="multiple of 16"):
        hio.read_point_bin(p)
    with pytest.raises(ValueError):
        hio.write_point_bin(tmp_path / "x.bin", np.zeros((3, 3)))


# -- labels -----------------------------------------------------------------

def test_sensor_labels_round_trip(tmp_path):
    gts = [GroundTruth(0, Box3D(10.5, -2.25, -0.8, 3.9, 1.6, 1.56, 0.123456789), 42),
           GroundTruth(2, Box3D(1e-3, 7.0, -1.0, 1.76, 0.6, 1.73, -3.0), 0)]
    path = tmp_path / "l.txt"
    hio.write_labels(path, gts, NAMES)
    assert hio.read_labels(path, NAMES) == gts


def test_labels_empty_file(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("")
    assert hio.read_labels(p, NAMES) == []
    assert hio.read_labels(p, NAMES, frame="kitti_camera") == []


def test_labels_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("Car 1 2 3 4 5 6 0\nCar 1 2 three 4 5 6 0\n")
    with pytest.raises(hio.FormatError) as info:
        hio.read_labels(p, NAMES)
    assert info.value.line == 2 and ":2:" in str(info.value)
    p.write_text("Car 1 2 3\n")
    with pytest.raises(hio.FormatError) as info:
        hio.read_labels(p, NAMES)
    assert info.value.line == 1
    p.write_text("Truck 1 2 3 4 5 6 0\n")
    with pytest.raises(hio.FormatError, match="unknown class"):
        hio.read_labels(p, NAMES)
    p.write_text("Car 1 2 3 -4 5 6 0\n")
    with pytest.raises(hio.FormatError):
        hio.read_labels(p, NAMES)


KITTI_CAR = "Car 0.00 0 -1.58 587.0 173.3 614.1 200.1 1.65 1.67 3.64 -0.65 1.71 46.70 0.00\n"


def test_kitti_label_conversion(tmp_path):
    p = tmp_path / "k.txt"
    p.write_text(KITTI_CAR + "DontCare -1 -1 -10 503 169 590 190 -1 -1 -1 -1000 -1000 -1000 -10\n")
    (gt,) = hio.read_labels(p, NAMES, frame="kitti_camera")
    b = gt.box
    assert b.yaw == pytest.approx(-math.pi / 2)
    assert (b.cx, b.cy) == pytest.approx((46.70, 0.65))
    assert b.cz == pytest.approx(-1.71 + 1.65 / 2)
    assert (b.l, b.w, b.h) == pytest.approx((3.64, 1.67, 1.65))
    assert gt.difficulty == 1  # bbox height 26.8 px, unoccluded


def test_camera_sensor_inverse():
    rng = np.random.default_rng(1)
    for _ in range(100):
        cam = (*rng.uniform(-20, 20, 3), *rng.uniform(0.5, 4, 3), rng.uniform(-math.pi, math.pi))
        back = hio.sensor_to_camera(hio.camera_to_sensor(*cam))
        assert back[:6] == pytest.approx(cam[:6])
        assert math.remainder(back[6] - cam[6], 2 * math.pi) == pytest.approx(0, abs=1e-12)


def test_calibrated_conversion_matches_canonical(tmp_path):
    calib = tmp_path / "calib.txt"
    # Tr_velo_to_cam as the pure axis permutation, identity rectification.
    calib.write_text("P0: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n"
                     "Tr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 0\n")
    c = hio.read_calib(calib)
    args = (1.0, 1.5, 20.0, 1.5, 1.6, 3.9, 0.3)
    assert hio.camera_to_sensor(*args, calib=c).as_array() == pytest.approx(
        hio.camera_to_sensor(*args).as_array())
    calib.write_text("R0_rect: 1 0 0\n")
    with pytest.raises(hio.FormatError):
        hio.read_calib(calib)


# -- reports ----------------------------------------------------------------

def test_report_round_trip(tmp_path):
    p = tmp_path / "r.jsonl"
    hio.write_report(p, "detections", [])
    assert hio.read_report(p, "detections") == []
    recs = [{"a": 1, "b": [1.5, None], "c": {"x": "y"}}, {"a": np.int64(2), "v": np.float64(0.1)}]
    hio.write_report(p, "misc", recs)
    back = hio.read_report(p)
    assert back == [{"a": 1, "b": [1.5, None], "c": {"x": "y"}}, {"a": 2, "v": 0.1}]


def test_report_schema_errors(tmp_path):
    p = tmp_path / "r.jsonl"
    p.write_text('{"schema": "other", "version": 1, "kind": "x"}\n')
    with pytest.raises(hio.FormatError, match="schema"):
        hio.read_report(p)
    hio.write_report(p, "metrics", [{"a": 1}])
    with pytest.raises(hio.FormatError, match="expected"):
        hio.read_report(p, "detections")
    p.write_text(p.read_text() + "{not json\n")
    with pytest.raises(hio.FormatError) as info:
        hio.read_report(p)
    assert info.value.line == 3
    p.write_text("")
    with pytest.raises(hio.FormatError):
        hio.read_report(p)


def test_large_report_checksum(tmp_path):
    rng = np.random.default_rng(2)
    vals = rng.normal(size=(100_000, 2))
    recs = [{"i": i, "x": float(a), "y": float(b)} for i, (a, b) in enumerate(vals)]
    p = tmp_path / "big.jsonl"
    hio.write_report(p, "big", recs)
    assert hio.report_checksum(hio.read_report(p, "big")) == hio.report_checksum(recs)


def test_detection_records_round_trip():
    d = Detection(1, 0.75, Box3D(1.0, 2.0, -1.0, 0.8, 0.6, 1.73, 0.1), (3, 4))
    assert hio.detection_from_record(hio.detection_record(d, "000001")) == d
    bare = Detection(0, 0.5, Box3D(1.0, 2.0, -1.0, 0.8, 0.6, 1.73, 0.1))
    assert hio.detection_from_record(hio.detection_record(bare, "x")) == bare


# -- head tensors -----------------------------------------------------------

def test_head_round_trip(tmp_path):
    grid = GridConfig(x_range=(0, 4), y_range=(0, 4), z_range=(0, 1), voxel_size=(1, 1, 1), downsample=1)
    head = HeadOutput.zeros((4, 4), 3, default_specs(grid))
    head.data[:] = np.random.default_rng(3).normal(size=head.data.shape)
    p = tmp_path / "h.head"
    hio.write_head(p, head)
    back = hio.read_head(p)
    assert back.channels == head.channels
    assert np.array_equal(back.data, head.data)


def test_head_rejects_corruption(tmp_path):
    p = tmp_path / "h.head"
    p.write_bytes(b"NOTAHEAD")
    with pytest.raises(hio.FormatError, match="magic"):
        hio.read_head(p)
    head = HeadOutput(np.ones((2, 2, 1)), ["cls:0"])
    hio.write_head(p, head)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(hio.FormatError, match="payload"):
        hio.read_head(p)


# -- synthetic scenes -------------------------------------------------------

def test_synth_deterministic():
    spec = SynthSpec(num_objects=5, seed=11)
    a, b = synth_scene(spec), synth_scene(spec)
    assert np.array_equal(a.points, b.points)
    assert a.gts == b.gts
    c = synth_scene(replace(spec, seed=12))
    assert not np.array_equal(a.points, c.points)


def test_synth_exact_point_counts():
    for n in (1, 7, 250):
        bundle = synth_scene(SynthSpec(num_objects=6, points_per_object=n, clutter_points=300, seed=n))
        assert [g.num_points for g in bundle.gts] == [n] * 6


def test_synth_zero_objects_is_clutter_only():
    bundle = synth_scene(SynthSpec(num_objects=0, clutter_points=123, seed=1))
    assert bundle.gts == []
    assert len(bundle.points) == 123


def test_synth_boxes_do_not_overlap():
    for seed in range(10):
        gts = synth_scene(SynthSpec(num_objects=15, seed=seed)).gts
        for i, a in enumerate(gts):
            for b in gts[i + 1:]:
                assert rotated_iou_bev(a.box, b.box) == 0.0


def test_synth_sparsity_range():
    counts = []
    for seed in range(20):
        counts += [g.num_points for g in synth_scene(SynthSpec(num_objects=8, seed=seed)).gts]
    assert min(counts) <= 10 and max(counts) > 200


def test_synth_placement_failure():
    spec = SynthSpec(num_objects=50, x_range=(0, 5), y_range=(0, 5), max_retries=20)
    with pytest.raises(SceneError):
        synth_scene(spec)


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(num_objects=-1)
    with pytest.raises(ValueError):
        SynthSpec(points_per_object=(5, 2))
    with pytest.raises(ValueError):
        SynthSpec(class_names=("Bus",))


def test_scene_files_round_trip(tmp_path):
    bundle = synth_scene(SynthSpec(num_objects=4, seed=3), "000007")
    hio.write_scene(tmp_path, bundle, NAMES)
    assert hio.list_scenes(tmp_path) == ["000007"]
    back = hio.read_scene(tmp_path, "000007", NAMES)
    assert back.gts == bundle.gts
    assert np.array_equal(back.points, bundle.points.astype(np.float32))
    assert back.seed == 3
