"""Point binning into the input voxel grid and the BEV occupancy map.

Output cells are indexed ``(i, j) = (row, col)`` with rows along y and columns
along x; an output cell covers ``downsample x downsample`` input voxels in BEV.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

_INTEGRAL_TOL = 1e-6


def _axis_count(lo: float, hi: float, size: float, axis: str) -> int:
    if not hi > lo:
        raise ValueError(f"{axis} range must be nonempty, got [{lo}, {hi}]")
    if size <= 0:
        raise ValueError(f"{axis} voxel size must be positive, got {size}")
    n = (hi - lo) / size
    if abs(n - round(n)) > _INTEGRAL_TOL * max(1.0, n):
        raise ValueError(f"{axis} range {hi - lo} is not a multiple of voxel size {size}")
    return int(round(n))


@dataclass(frozen=True)
class GridConfig:
    x_range: Tuple[float, float] = (0.0, 70.4)
    y_range: Tuple[float, float] = (-40.0, 40.0)
    z_range: Tuple[float, float] = (-3.0, 1.0)
    voxel_size: Tuple[float, float, float] = (0.025, 0.025, 0.05)
    max_points_per_voxel: int = 5
    downsample: int = 8

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range", "voxel_size"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.max_points_per_voxel < 1:
            raise ValueError("max_points_per_voxel must be >= 1")
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")
        nx, ny, _ = self.grid_shape
        if nx % self.downsample or ny % self.downsample:
            raise ValueError(f"downsample {self.downsample} does not divide BEV grid ({nx}, {ny})")

    @property
    def grid_shape(self) -> Tuple[int, int, int]:
        """Input voxel counts (nx, ny, nz)."""
        vx, vy, vz = self.voxel_size
        return (_axis_count(*self.x_range, vx, "x"),
                _axis_count(*self.y_range, vy, "y"),
                _axis_count(*self.z_range, vz, "z"))

    @property
    def output_shape(self) -> Tuple[int, int]:
        """BEV map shape (W_out rows along y, L_out cols along x)."""
        nx, ny, _ = self.grid_shape
        return ny // self.downsample, nx // self.downsample

    @property
    def cell_size(self) -> Tuple[float, float]:
        """Output cell pitch (dx, dy) in meters."""
        rows, cols = self.output_shape
        return ((self.x_range[1] - self.x_range[0]) / cols,
                (self.y_range[1] - self.y_range[0]) / rows)

    def to_dict(self) -> dict:
        return {
            "x_range": list(self.x_range), "y_range": list(self.y_range),
            "z_range": list(self.z_range), "voxel_size": list(self.voxel_size),
            "max_points_per_voxel": self.max_points_per_voxel, "downsample": self.downsample,
        }


@dataclass
class VoxelGrid:
    """Sparse voxels sorted by linear index.

    ``coords`` holds (ix, iy, iz), ``counts`` the retained point count and
    ``features`` the mean (x, y, z, intensity) of the retained points.
    """
    coords: np.ndarray
    counts: np.ndarray
    features: np.ndarray
    points: np.ndarray = field(repr=False, default=None)
    point_voxel: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.counts)

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in c): (int(n), tuple(float(v) for v in f))
                for c, n, f in zip(self.coords, self.counts, self.features)}


@dataclass
class OccupancyGrid:
    occupied: np.ndarray
    counts: np.ndarray

    @property
    def shape(self):
        return self.occupied.shape


def voxel_indices(points: np.ndarray, config: GridConfig):
    """Integer voxel coordinates for each point plus an in-range mask."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    lo = np.array([config.x_range[0], config.y_range[0], config.z_range[0]])
    size = np.array(config.voxel_size)
    dims = np.array(config.grid_shape)
    with np.errstate(invalid="ignore"):
        idx = np.floor((pts[:, :3] - lo) / size)
    valid = np.all(np.isfinite(pts), axis=1) & np.all((idx >= 0) & (idx < dims), axis=1)
    idx = np.where(valid[:, None], idx, 0).astype(np.int64)
    return idx, valid


def voxelize(points, config: GridConfig, seed: int = 0) -> VoxelGrid:
    """Bin points into voxels, keeping at most ``max_points_per_voxel`` per voxel.

    Out-of-range points are dropped. The retained subset is picked by a seeded
    shuffle; within a voxel the mean is taken over the retained points sorted
    by value, so features do not depend on input order unless a voxel
    overflows.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    idx, valid = voxel_indices(pts, config)
    pts, idx = pts[valid], idx[valid]
    nx, ny, nz = config.grid_shape
    if len(pts) == 0:
        return VoxelGrid(np.zeros((0, 3), np.int64), np.zeros(0, np.int64), np.zeros((0, 4)),
                         np.zeros((0, 4)), np.zeros(0, np.int64))

    linear = (idx[:, 2] * ny + idx[:, 1]) * nx + idx[:, 0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(pts))
    order = perm[np.argsort(linear[perm], kind="stable")]
    lin_sorted = linear[order]
    starts = np.flatnonzero(np.r_[True, lin_sorted[1:] != lin_sorted[:-1]])
    rank = np.arange(len(order)) - np.repeat(starts, np.diff(np.r_[starts, len(order)]))
    keep = order[rank < config.max_points_per_voxel]

    kept_pts, kept_lin = pts[keep], linear[keep]
    canon = np.lexsort((kept_pts[:, 3], kept_pts[:, 2], kept_pts[:, 1], kept_pts[:, 0], kept_lin))
    kept_pts, kept_lin, keep = kept_pts[canon], kept_lin[canon], keep[canon]
    vstarts = np.flatnonzero(np.r_[True, kept_lin[1:] != kept_lin[:-1]])
    counts = np.diff(np.r_[vstarts, len(kept_lin)])
    sums = np.add.reduceat(kept_pts, vstarts, axis=0)
    lin_u = kept_lin[vstarts]
    coords = np.stack([lin_u % nx, (lin_u // nx) % ny, lin_u // (nx * ny)], axis=1)
    point_voxel = np.repeat(np.arange(len(counts)), counts)
    return VoxelGrid(coords, counts, sums / counts[:, None], kept_pts, point_voxel)


def bev_occupancy(grid: VoxelGrid, config: GridConfig) -> OccupancyGrid:
    rows, cols = config.output_shape
    counts = np.zeros((rows, cols), dtype=np.int64)
    if len(grid):
        i = grid.coords[:, 1] // config.downsample
        j = grid.coords[:, 0] // config.downsample
        np.add.at(counts, (i, j), grid.counts)
    return OccupancyGrid(counts > 0, counts)


def occupancy_from_points(points, config: GridConfig, seed: int = 0) -> OccupancyGrid:
    return bev_occupancy(voxelize(points, config, seed), config)


def cell_center(i: int, j: int, config: GridConfig) -> Tuple[float, float]:
    rows, cols = config.output_shape
    if not (0 <= i < rows and 0 <= j < cols):
        raise IndexError(f"cell ({i}, {j}) outside output grid {rows}x{cols}")
    (x_min, x_max), (y_min, y_max) = config.x_range, config.y_range
    return ((j + 0.5) / cols * (x_max - x_min) + x_min,
            (i + 0.5) / rows * (y_max - y_min) + y_min)


def cell_centers(config: GridConfig) -> np.ndarray:
    """All cell centers as a (rows, cols, 2) array, same arithmetic as :func:`cell_center`."""
    rows, cols = config.output_shape
    (x_min, x_max), (y_min, y_max) = config.x_range, config.y_range
    xs = (np.arange(cols) + 0.5) / cols * (x_max - x_min) + x_min
    ys = (np.arange(rows) + 0.5) / rows * (y_max - y_min) + y_min
    return np.stack(np.broadcast_arrays(xs[None, :], ys[:, None]), axis=-1)
