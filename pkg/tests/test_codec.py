import math

import numpy as np
import pytest

from hotspot3d import oracles
from hotspot3d.codec import (TARGET_NAMES, HeadOutput, SoftArgminSpec, decode_box, decode_boxes,
                             default_specs, encode_box, interpolating_logits, saturated_logits,
                             softargmin, softargmin_grad, write_targets)
from hotspot3d.geometry import Box3D
from hotspot3d.voxelizer import GridConfig, cell_center

GRID = GridConfig(x_range=(0.0, 8.0), y_range=(-4.0, 4.0), z_range=(-3.0, 1.0),
                  voxel_size=(0.25, 0.25, 0.5), max_points_per_voxel=5, downsample=2)
SPEC = SoftArgminSpec(-4.0, 4.0, 16)


def test_encode_examples():
    t = encode_box(Box3D(5.0, -2.0, 0.3, math.e, 1.0, math.e ** 2, 0.0), (4.3, -1.6))
    assert t.dx == pytest.approx(0.7) and t.dy == pytest.approx(-0.4)
    assert (t.log_l, t.log_w, t.log_h) == pytest.approx((1.0, 0.0, 2.0))
    assert (t.cos_r, t.sin_r) == (1.0, 0.0)
    at = encode_box(Box3D(1, 2, 0, 1, 1, 1, 0), (1, 2))
    assert at.dx == 0 and at.dy == 0


def test_spec_validation():
    with pytest.raises(ValueError):
        SoftArgminSpec(1.0, 1.0, 4)
    with pytest.raises(ValueError):
        SoftArgminSpec(0.0, 1.0, 1)
    np.testing.assert_allclose(SoftArgminSpec(0, 4, 2).centers, [1, 3])


def test_softargmin_examples():
    assert softargmin(np.zeros(16), SPEC) == pytest.approx(0.0, abs=1e-12)
    for i in (0, 5, 15):
        logits = np.zeros(16)
        logits[i] = 40.0
        assert softargmin(logits, SPEC) == pytest.approx(SPEC.centers[i], abs=1e-12)
    assert softargmin(np.array([0.0, math.log(3)]), SoftArgminSpec(0, 4, 2)) == pytest.approx(2.5, abs=1e-12)


def test_softargmin_shift_invariant_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(200):
        z = rng.normal(0, 5, 16)
        t = softargmin(z, SPEC)
        assert softargmin(z + rng.uniform(-100, 100), SPEC) == pytest.approx(t, abs=1e-12)
        assert SPEC.a < t < SPEC.b


def test_softargmin_monotone_under_mass_shift():
    rng = np.random.default_rng(5)
    for _ in range(100):
        probs = rng.dirichlet(np.ones(16))
        lo, hi = sorted(rng.choice(16, 2, replace=False))
        prev = softargmin(np.log(probs), SPEC)
        for _ in range(5):
            moved = probs[lo] / 2
            probs[lo] -= moved
            probs[hi] += moved
            cur = softargmin(np.log(probs), SPEC)
            assert cur > prev
            prev = cur
    # raising a logit moves t toward that bin's center
    z = rng.normal(0, 2, 16)
    t = softargmin(z, SPEC)
    for k in range(16):
        up = z.copy()
        up[k] += 0.1
        assert (softargmin(up, SPEC) - t) * (SPEC.centers[k] - t) > 0


def test_softargmin_batched():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(5, 3, 16))
    t = softargmin(z, SPEC)
    assert t.shape == (5, 3)
    assert t[2, 1] == pytest.approx(softargmin(z[2, 1], SPEC))


def test_gradient_properties():
    saturated = saturated_logits(1.3, SPEC)
    assert np.max(np.abs(softargmin_grad(saturated, SPEC))) < 1e-12
    g = softargmin_grad(np.zeros(16), SPEC)
    np.testing.assert_allclose(g, -g[::-1], atol=1e-15)
    assert abs(g.sum()) < 1e-15
    rng = np.random.default_rng(2)
    for _ in range(50):
        z = rng.normal(0, 3, 16)
        g = softargmin_grad(z, SPEC)
        assert abs(g.sum()) < 1e-12
        fd = oracles.central_difference(lambda v: softargmin(v, SPEC), z, step=1e-6)
        assert oracles.gradient_close(g, fd, rel=1e-6, abs_tol=1e-9)


def test_saturated_logits_pick_containing_bin():
    assert np.argmax(saturated_logits(-3.9, SPEC)) == 0
    assert np.argmax(saturated_logits(0.1, SPEC)) == 8
    assert np.argmax(saturated_logits(100.0, SPEC)) == 15


def test_interpolating_logits_exact():
    rng = np.random.default_rng(3)
    for v in rng.uniform(SPEC.centers[0], SPEC.centers[-1], 500):
        assert softargmin(interpolating_logits(v, SPEC), SPEC) == pytest.approx(v, abs=1e-12)
    assert softargmin(interpolating_logits(-9.0, SPEC), SPEC) == pytest.approx(SPEC.centers[0])


def test_head_layout():
    specs = default_specs(GRID)
    head = HeadOutput.zeros(GRID.output_shape, 3, specs)
    assert head.num_classes == 3
    assert head.group("dx").shape == (16, 16, 16)
    assert head.group("log_l").shape == (16, 16, 1)
    assert head.group("rel").shape == (16, 16, 4)
    assert head.data.shape[2] == 3 + 16 * 3 + 5 + 4
    with pytest.raises(ValueError):
        HeadOutput(np.zeros((2, 2, 2)), ["a", "a"])


def test_decode_unnormalized_yaw():
    specs = {name: None for name in TARGET_NAMES}
    head = HeadOutput.zeros((2, 2), 1, specs)
    head.data[1, 0, head.index("cos_r")] = 0.7
    head.data[1, 0, head.index("sin_r")] = 0.7
    grid = GridConfig(x_range=(0, 2), y_range=(0, 2), z_range=(0, 1), voxel_size=(1, 1, 1), downsample=1)
    box = decode_box((1, 0), head, grid, specs)
    assert box.yaw == pytest.approx(math.pi / 4)
    assert (box.cx, box.cy) == (0.5, 1.5)
    assert (box.l, box.w, box.h) == (1.0, 1.0, 1.0)
    with pytest.raises(IndexError):
        decode_box((2, 0), head, grid, specs)


def test_decode_rejects_non_finite():
    specs = {name: None for name in TARGET_NAMES}
    head = HeadOutput.zeros((1, 1), 1, specs)
    head.data[0, 0, head.index("log_w")] = 1e6
    grid = GridConfig(x_range=(0, 1), y_range=(0, 1), z_range=(0, 1), voxel_size=(1, 1, 1), downsample=1)
    _, valid = decode_boxes(head, [0], [0], grid, specs)
    assert not valid[0]
    with pytest.raises(ValueError):
        decode_box((0, 0), head, grid, specs)


def _random_box(rng, center):
    return Box3D(center[0] + rng.uniform(-3, 3), center[1] + rng.uniform(-3, 3), rng.uniform(-2.5, 0.5),
                 *np.exp(rng.uniform(-1, 1.5, 3)), rng.uniform(-math.pi, math.pi))


@pytest.mark.parametrize("mode", ["saturate", "interpolate"])
def test_round_trip(mode):
    rng = np.random.default_rng(4)
    specs = default_specs(GRID)
    head = HeadOutput.zeros(GRID.output_shape, 1, specs)
    half = {name: specs[name].bin_width / 2 for name in ("dx", "dy", "z")}
    for _ in range(300):
        i, j = (int(v) for v in rng.integers(0, 16, 2))
        box = _random_box(rng, cell_center(i, j, GRID))
        write_targets(head, i, j, encode_box(box, cell_center(i, j, GRID)), specs, mode=mode)
        got = decode_box((i, j), head, GRID, specs)
        tol = 1e-9 if mode == "interpolate" else None
        assert abs(got.cx - box.cx) <= (tol or half["dx"] + 1e-12)
        assert abs(got.cy - box.cy) <= (tol or half["dy"] + 1e-12)
        assert abs(got.cz - box.cz) <= (tol or half["z"] + 1e-12)
        np.testing.assert_allclose((got.l, got.w, got.h), (box.l, box.w, box.h), rtol=1e-9)
        assert abs(math.remainder(got.yaw - box.yaw, 2 * math.pi)) < 1e-9


def test_round_trip_exact_at_bin_centers():
    specs = default_specs(GRID)
    head = HeadOutput.zeros(GRID.output_shape, 1, specs)
    c = cell_center(3, 4, GRID)
    box = Box3D(c[0] + specs["dx"].centers[9], c[1] + specs["dy"].centers[2], specs["z"].centers[5],
                2.0, 1.0, 1.5, 0.3)
    write_targets(head, 3, 4, encode_box(box, c), specs, mode="saturate")
    got = decode_box((3, 4), head, GRID, specs)
    assert got.as_array() == pytest.approx(box.as_array(), abs=1e-12)


def test_write_targets_rejects_unknown_mode():
    specs = default_specs(GRID)
    head = HeadOutput.zeros(GRID.output_shape, 1, specs)
    with pytest.raises(ValueError):
        write_targets(head, 0, 0, encode_box(Box3D(1, 1, 0, 1, 1, 1, 0), (1, 1)), specs, mode="nearest")
