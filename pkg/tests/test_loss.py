import math

import numpy as np
import pytest

from hotspot3d import oracles
from hotspot3d.assignment import GroundTruth, build_assignment
from hotspot3d.codec import HeadOutput, default_specs, encode_box, write_targets
from hotspot3d.geometry import Box3D
from hotspot3d.loss import (EPS, FocalParams, LossWeights, classification_loss, composite_loss,
                            focal_loss, quadrant_loss, regression_loss, smooth_l1, total_loss)
from hotspot3d.voxelizer import GridConfig, OccupancyGrid, cell_center

GRID = GridConfig(x_range=(0.0, 4.0), y_range=(-2.0, 2.0), z_range=(-3.0, 1.0),
                  voxel_size=(0.25, 0.25, 0.5), max_points_per_voxel=5, downsample=2)  # 8 x 8
TINY = GridConfig(x_range=(0.0, 2.0), y_range=(0.0, 2.0), z_range=(0.0, 1.0),
                  voxel_size=(1.0, 1.0, 1.0), max_points_per_voxel=5, downsample=1)  # 2 x 2


def occ(shape, density=1.0, rng=None):
    mask = np.ones(shape, dtype=bool) if rng is None else rng.uniform(size=shape) < density
    return OccupancyGrid(mask, mask.astype(np.int64))


def scene(rng, encoding="quadrant", C=4.0):
    gts = [GroundTruth(int(rng.integers(2)), Box3D(rng.uniform(1, 3), rng.uniform(-1, 1), -1.0,
                                                   rng.uniform(1, 2.5), rng.uniform(0.6, 1.5), 1.5,
                                                   rng.uniform(-math.pi, math.pi)))
           for _ in range(2)]
    return build_assignment(occ(GRID.output_shape, 0.7, rng), gts, C, encoding, GRID, 2), gts


def test_focal_examples():
    loss, _ = focal_loss(0.5, True)
    assert loss == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-12)
    assert loss == pytest.approx(0.043322, abs=1e-6)
    assert focal_loss(1.0, True)[0] < 1e-12
    assert focal_loss(0.0, False)[0] < 1e-12
    assert focal_loss(0.5, False)[0] == pytest.approx(loss)


def test_focal_gradient_and_gamma_zero():
    for fp in (FocalParams(), FocalParams(0.4, 0.0), FocalParams(0.1, 3.5)):
        for pos in (True, False):
            for p in (0.05, 0.3, 0.77, 0.99):
                _, g = focal_loss(p, pos, fp)
                fd = (focal_loss(p + 1e-6, pos, fp)[0] - focal_loss(p - 1e-6, pos, fp)[0]) / 2e-6
                assert g == pytest.approx(fd, rel=1e-5)
    assert focal_loss(0.5, True, FocalParams(0.5, 0.0))[0] == pytest.approx(0.5 * math.log(2))


def test_focal_params_validation():
    with pytest.raises(ValueError):
        FocalParams(alpha=1.0)
    with pytest.raises(ValueError):
        FocalParams(gamma=-1.0)
    with pytest.raises(ValueError):
        LossWeights(0, 0, 0)


def test_smooth_l1_examples():
    assert smooth_l1(0.0) == (0.0, 0.0)
    assert smooth_l1(0.5) == (0.125, 0.5)
    assert smooth_l1(2.0) == (1.5, 1.0)
    assert smooth_l1(-2.0) == (1.5, -1.0)


def test_classification_all_negative_near_zero():
    amap = build_assignment(occ(GRID.output_shape), [], 64, "quadrant", GRID, 3)
    loss, _ = classification_loss(np.full((8, 8, 3), EPS), amap)
    assert loss < 1e-12


def test_classification_matches_scalar_oracle():
    gt = GroundTruth(1, Box3D(0.5, 0.5, 0.5, 0.8, 0.8, 1, 0))
    amap = build_assignment(occ((2, 2)), [gt], math.inf, "quadrant", TINY, 2)
    assert amap.hotspot_cells() == [(0, 0)]
    scores = np.array([[[0.2, 0.7], [0.6, 0.1]], [[0.3, 0.4], [0.05, 0.9]]])
    fp = FocalParams()
    expect = 0.0
    for i in range(2):
        for j in range(2):
            for k in range(2):
                p = scores[i, j, k]
                pos = (i, j) == (0, 0) and k == 1
                q = p if pos else 1 - p
                expect += -fp.alpha * (1 - q) ** fp.gamma * math.log(q)
    loss, _ = classification_loss(scores, amap, fp)
    assert loss == pytest.approx(expect / 4, abs=1e-12)


def test_ignored_cells_are_masked():
    rng = np.random.default_rng(0)
    amap, _ = scene(rng, C=1.0)
    assert amap.ignored_mask.any()
    scores = rng.uniform(0.01, 0.99, (8, 8, 2))
    loss, grad = classification_loss(scores, amap)
    assert np.all(grad[amap.ignored_mask] == 0.0)
    other = scores.copy()
    other[amap.ignored_mask] = rng.uniform(0.01, 0.99, other[amap.ignored_mask].shape)
    loss2, grad2 = classification_loss(other, amap)
    assert loss2 == loss
    assert np.array_equal(grad, grad2)


def test_classification_gradient_and_monotonicity():
    rng = np.random.default_rng(1)
    amap, _ = scene(rng)
    scores = rng.uniform(0.05, 0.95, (8, 8, 2))
    loss, grad = classification_loss(scores, amap)
    fd = oracles.central_difference(lambda s: classification_loss(s, amap)[0], scores, step=1e-6)
    assert oracles.gradient_close(grad, fd)
    i, j = amap.hotspot_cells()[0]
    k = amap.class_id[i, j]
    up = scores.copy()
    up[i, j, k] += 0.02
    assert classification_loss(up, amap)[0] < loss


def _exact_head(amap, gts, specs):
    head = HeadOutput.zeros(GRID.output_shape, 2, specs)
    for i, j in amap.hotspot_cells():
        box = gts[amap.owner[i, j]].box
        write_targets(head, i, j, encode_box(box, cell_center(i, j, GRID)), specs)
    return head


def test_regression_exact_and_offset():
    rng = np.random.default_rng(2)
    specs = default_specs(GRID)
    amap, gts = scene(rng, C=math.inf)
    head = _exact_head(amap, gts, specs)
    loss, _ = regression_loss(head, amap, specs)
    assert loss < 1e-18
    raw = {name: None for name in specs}
    one = build_assignment(occ(GRID.output_shape), [GroundTruth(0, Box3D(2.1, 0.1, -1, 0.3, 0.3, 1, 0))],
                           1e9, "quadrant", GRID, 2)
    assert len(one.hotspot_cells()) == 1
    head = _exact_head(one, [GroundTruth(0, Box3D(2.1, 0.1, -1, 0.3, 0.3, 1, 0))], raw)
    i, j = one.hotspot_cells()[0]
    head.data[i, j, head.index("log_h")] += 2.0
    assert regression_loss(head, one, raw)[0] == pytest.approx(1.5)


def test_regression_zero_hotspots():
    specs = default_specs(GRID)
    amap = build_assignment(occ(GRID.output_shape), [], 64, "quadrant", GRID, 2)
    head = HeadOutput.zeros(GRID.output_shape, 2, specs)
    loss, grad = regression_loss(head, amap, specs)
    assert loss == 0.0 and not grad.any()


def test_regression_gradient_and_non_hotspot_invariance():
    rng = np.random.default_rng(3)
    specs = default_specs(GRID)
    amap, _ = scene(rng)
    head = HeadOutput.zeros(GRID.output_shape, 2, specs)
    head.data[:] = rng.normal(0, 1, head.data.shape)
    loss, grad = regression_loss(head, amap, specs)
    rows, cols = np.nonzero(amap.hotspot_mask)
    flat = np.ravel_multi_index((rows, cols), amap.shape)
    nch = head.data.shape[2]
    idx = (flat[:, None] * nch + np.arange(nch)).ravel()

    def f(data):
        return regression_loss(HeadOutput(data, head.channels), amap, specs)[0]

    fd = oracles.central_difference(f, head.data, step=1e-5, indices=idx)
    assert oracles.gradient_close(grad.reshape(-1)[idx], fd.reshape(-1)[idx])
    assert not np.delete(grad.reshape(-1, nch), flat, axis=0).any()
    other = head.copy()
    other.data[~amap.hotspot_mask] = rng.normal(0, 5, other.data[~amap.hotspot_mask].shape)
    assert regression_loss(other, amap, specs)[0] == loss


def test_quadrant_examples():
    rng = np.random.default_rng(4)
    amap, _ = scene(rng)
    n = int(amap.hotspot_mask.sum())
    assert n > 0
    loss, grad = quadrant_loss(np.full((8, 8, 4), 0.5), amap)
    assert loss == pytest.approx(4 * math.log(2), abs=1e-12)
    assert not grad[~amap.hotspot_mask].any()
    perfect = np.where(amap.relation > 0.5, 1.0, 0.0)
    assert quadrant_loss(perfect, amap)[0] < 1e-5
    s =rng.uniform(0.05, 0.95, (8, 8, 4))
    fd = oracles.central_difference(lambda v: quadrant_loss(v, amap)[0], s, step=1e-6)
    assert oracles.gradient_close(quadrant_loss(s, amap)[1], fd)


@pytest.mark.parametrize("encoding", ["none", "lr", "fb", "8dir", "deviation"])
def test_relation_encodings(encoding):
    rng = np.random.default_rng(5)
    amap, _ = scene(rng, encoding=encoding)
    size = max(amap.relation.shape[2], 1)
    s = rng.uniform(0.05, 0.95, (8, 8, size))
    loss, grad = quadrant_loss(s, amap)
    if encoding == "none":
        assert loss == 0.0
        return
    assert loss > 0
    fd = oracles.central_difference(lambda v: quadrant_loss(v, amap)[0], s, step=1e-6)
    assert oracles.gradient_close(grad, fd)


def test_total_loss_weights():
    assert total_loss(1.0, 2.0, 3.0) == 6.0
    assert total_loss(1.0, 2.0, 3.0, LossWeights(1, 0.25, 0.25)) == pytest.approx(2.25)
    assert total_loss(0, 0, 0) == 0


def test_composite_gradient():
    rng = np.random.default_rng(6)
    specs = default_specs(GRID)
    amap, _ = scene(rng)
    head = HeadOutput.zeros(GRID.output_shape, 2, specs)
    head.data[:] = rng.normal(0, 1, head.data.shape)
    head.data[:, :, head.index("cls")] = rng.uniform(0.05, 0.95, (8, 8, 2))
    head.data[:, :, head.index("rel")] = rng.uniform(0.05, 0.95, (8, 8, 4))
    w = LossWeights(1.0, 0.25, 0.5)
    parts, grad = composite_loss(head, amap, specs, w=w)
    assert parts["total"] == pytest.approx(parts["cls"] + 0.25 * parts["loc"] + 0.5 * parts["q"])
    assert min(parts.values()) >= 0
    i, j = amap.hotspot_cells()[0]
    nch = head.data.shape[2]
    idx = [(i * 8 + j) * nch + c for c in range(nch)] + [c for c in range(nch)]

    def f(data):
        return composite_loss(HeadOutput(data, head.channels), amap, specs, w=w)[0]["total"]

    fd = oracles.central_difference(f, head.data, step=1e-6, indices=idx)
    assert oracles.gradient_close(grad.reshape(-1)[idx], fd.reshape(-1)[idx])
