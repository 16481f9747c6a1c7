"""Box target encoding, soft-argmin binned regression and decoding.

Regression targets per hotspot are ``[dx, dy, z, log_l, log_w, log_h, cos_r, sin_r]``
where ``(dx, dy)`` points from the hotspot cell center to the object centroid.
Any of these channels may be carried as soft-argmin logits over a bin spec
instead of a raw value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .geometry import Box3D
from .voxelizer import GridConfig, cell_center, cell_centers

TARGET_NAMES = ("dx", "dy", "z", "log_l", "log_w", "log_h", "cos_r", "sin_r")


class BoxTargets(NamedTuple):
    dx: float
    dy: float
    z: float
    log_l: float
    log_w: float
    log_h: float
    cos_r: float
    sin_r: float


@dataclass(frozen=True)
class SoftArgminSpec:
    a: float
    b: float
    n: int

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"soft-argmin segment must satisfy a < b, got [{self.a}, {self.b}]")
        if self.n < 2:
            raise ValueError(f"soft-argmin needs at least 2 bins, got {self.n}")

    @property
    def bin_width(self) -> float:
        return (self.b - self.a) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.a + (np.arange(self.n) + 0.5) * (self.b - self.a) / self.n


RegressionSpecs = Dict[str, Optional[SoftArgminSpec]]


def default_specs(config: GridConfig, offset_range=(-4.0, 4.0), bins: int = 16) -> RegressionSpecs:
    """dx/dy over ``offset_range`` and z over the grid's vertical range; the rest raw."""
    specs: RegressionSpecs = {name: None for name in TARGET_NAMES}
    specs["dx"] = SoftArgminSpec(offset_range[0], offset_range[1], bins)
    specs["dy"] = SoftArgminSpec(offset_range[0], offset_range[1], bins)
    specs["z"] = SoftArgminSpec(config.z_range[0], config.z_range[1], bins)
    return specs


def encode_box(box: Box3D, hotspot_center) -> BoxTargets:
    if not (box.l > 0 and box.w > 0 and box.h > 0):
        raise ValueError("box sizes must be positive")
    x_h, y_h = hotspot_center
    return BoxTargets(box.cx - x_h, box.cy - y_h, box.cz, math.log(box.l), math.log(box.w),
                      math.log(box.h), math.cos(box.yaw), math.sin(box.yaw))


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softargmin(logits, spec: SoftArgminSpec):
    """Expected bin center under softmax(logits); vectorized over leading axes."""
    s = softmax(logits)
    t = s @ spec.centers
    return float(t) if np.ndim(t) == 0 else t


def softargmin_grad(logits, spec: SoftArgminSpec) -> np.ndarray:
    """d t / d logit_i = S_i (C_i - t)."""
    s = softmax(logits)
    t = s @ spec.centers
    return s * (spec.centers - np.asarray(t)[..., None])


def saturated_logits(value: float, spec: SoftArgminSpec, magnitude: float = 40.0) -> np.ndarray:
    """One-hot logits at the bin containing ``value`` (clamped to the segment)."""
    k = int(np.clip(math.floor((value - spec.a) / spec.bin_width), 0, spec.n - 1))
    logits = np.zeros(spec.n)
    logits[k] = magnitude
    return logits


def interpolating_logits(value: float, spec: SoftArgminSpec, floor: float = -1e3) -> np.ndarray:
    """Logits whose soft-argmin reproduces ``value`` by splitting mass between two bins.

    Values outside the span of bin centers are clamped to the end centers.
    """
    centers = spec.centers
    value = min(max(value, centers[0]), centers[-1])
    k = int(np.clip(np.searchsorted(centers, value, side="right") - 1, 0, spec.n - 2))
    frac = (value - centers[k]) / (centers[k + 1] - centers[k])
    logits = np.full(spec.n, floor)
    with np.errstate(divide="ignore"):
        logits[k] = math.log(1.0 - frac) if frac < 1.0 else floor
        logits[k + 1] = math.log(frac) if frac > 0.0 else floor
    return logits


class HeadOutput:
    """Dense per-cell network outputs, ``data[row, col, channel]``.

    Channel names are ``cls:<k>`` for class probabilities, ``rel:<k>`` for
    spatial-relation outputs, and for each regression target either the bare
    name (raw value) or ``<name>:<bin>`` (soft-argmin logits).
    """

    def __init__(self, data: np.ndarray, channels: Sequence[str]):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != len(channels):
            raise ValueError(f"data shape {data.shape} does not match {len(channels)} channels")
        if len(set(channels)) != len(channels):
            raise ValueError("duplicate channel names")
        self.data = data
        self.channels = list(channels)
        self._groups: Dict[str, List[int]] = {}
        for k, name in enumerate(self.channels):
            self._groups.setdefault(name.split(":")[0], []).append(k)

    @classmethod
    def zeros(cls, shape, num_classes: int, specs: RegressionSpecs, relation_size: int = 4):
        channels = layout_channels(num_classes, specs, relation_size)
        return cls(np.zeros((shape[0], shape[1], len(channels))), channels)

    @property
    def shape(self):
        return self.data.shape[:2]

    @property
    def num_classes(self) -> int:
        return len(self._groups.get("cls", []))

    def has(self, group: str) -> bool:
        return group in self._groups

    def index(self, group: str):
        """Channel slice for a group (groups occupy contiguous channels)."""
        idx = self._groups[group]
        return slice(idx[0], idx[-1] + 1)

    def group(self, group: str) -> np.ndarray:
        return self.data[:, :, self.index(group)]

    def copy(self) -> "HeadOutput":
        return HeadOutput(self.data.copy(), self.channels)


def layout_channels(num_classes: int, specs: RegressionSpecs, relation_size: int = 4) -> List[str]:
    channels = [f"cls:{k}" for k in range(num_classes)]
    for name in TARGET_NAMES:
        spec = specs.get(name)
        channels += [f"{name}:{b}" for b in range(spec.n)] if spec else [name]
    channels += [f"rel:{k}" for k in range(relation_size)]
    return channels


def _decode_channel(values: np.ndarray, spec: Optional[SoftArgminSpec]) -> np.ndarray:
    if spec is None:
        return values[..., 0]
    return softargmin(values, spec)


def decode_targets(head: HeadOutput, rows, cols, specs: RegressionSpecs) -> np.ndarray:
    """Decoded target vectors (n, 8) at the given cells."""
    out = np.empty((len(rows), len(TARGET_NAMES)))
    for t, name in enumerate(TARGET_NAMES):
        vals = head.data[rows, cols, head.index(name)]
        out[:, t] = _decode_channel(vals, specs.get(name))
    return out


def decode_boxes(head: HeadOutput, rows, cols, config: GridConfig, specs: RegressionSpecs,
                 centers=None):
    """Decode boxes at cells into an (n, 7) array plus a validity mask.

    ``centers`` optionally supplies the hotspot centers (n, 2) instead of
    deriving them from ``(rows, cols)`` (e.g. when the head holds a batch of
    cells laid out differently). Cells whose decoded sizes are not finite and
    positive are flagged invalid.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    t = decode_targets(head, rows, cols, specs)
    if centers is None:
        centers = cell_centers(config)[rows, cols]
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    with np.errstate(over="ignore", invalid="ignore"):
        sizes = np.exp(t[:, 3:6])
    boxes = np.column_stack([centers[:, 0] + t[:, 0], centers[:, 1] + t[:, 1], t[:, 2], sizes,
                             np.arctan2(t[:, 7], t[:, 6])])
    valid = np.all(np.isfinite(boxes), axis=1) & np.all(sizes > 0, axis=1)
    return boxes, valid


def decode_box(cell, head: HeadOutput, config: GridConfig, specs: RegressionSpecs) -> Box3D:
    i, j = cell
    cell_center(i, j, config)  # range check
    boxes, valid = decode_boxes(head, [i], [j], config, specs)
    if not valid[0]:
        raise ValueError(f"cell ({i}, {j}) decodes to a non-finite box")
    return Box3D.from_array(boxes[0])


def write_targets(head: HeadOutput, i: int, j: int, targets: BoxTargets, specs: RegressionSpecs,
                  mode: str = "interpolate") -> None:
    """Write regression channels at one cell so they decode to ``targets``.

    ``mode`` selects how binned channels are filled: ``"interpolate"`` (exact
    two-bin mixture) or ``"saturate"`` (one-hot at the containing bin).
    """
    for name, value in zip(TARGET_NAMES, targets):
        spec = specs.get(name)
        if spec is None:
            head.data[i, j, head.index(name)] = value
        elif mode == "saturate":
            head.data[i, j, head.index(name)] = saturated_logits(value, spec)
        elif mode == "interpolate":
            head.data[i, j, head.index(name)] = interpolating_logits(value, spec)
        else:
            raise ValueError(f"unknown mode {mode!r}")
