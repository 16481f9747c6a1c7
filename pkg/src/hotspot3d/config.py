"""Run configuration: every hyperparameter of a pipeline run in one JSON file."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from .assignment import Encoding
from .codec import TARGET_NAMES, RegressionSpecs, SoftArgminSpec, default_specs
from .evaluator import EvalConfig
from .inference import InferenceConfig
from .loss import FocalParams, LossWeights
from .voxelizer import GridConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    num_scenes: int = 4
    num_objects: int = 6
    points_per_object: Tuple[int, int] = (1, 2000)
    noise_sigma: float = 0.02
    clutter_points: int = 500


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    C: float = 64.0
    focal: FocalParams = field(default_factory=FocalParams)
    weights: LossWeights = field(default_factory=LossWeights)
    soft_argmin: Optional[Dict[str, Optional[SoftArgminSpec]]] = None
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    encoding: Encoding = Encoding.QUADRANT
    seed: int = 0
    class_names: Tuple[str, ...] = ("Car", "Pedestrian", "Cyclist")
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        self.encoding = Encoding(self.encoding)
        self.class_names = tuple(self.class_names)
        if not self.class_names:
            raise ConfigError("class_names must not be empty")
        if not self.C > 0:
            raise ConfigError(f"C must be positive, got {self.C}")
        if self.soft_argmin is None:
            self.soft_argmin = default_specs(self.grid)
        unknown = set(self.soft_argmin) - set(TARGET_NAMES)
        if unknown:
            raise ConfigError(f"unknown regression channels {sorted(unknown)}")
        for name in ("cos_r", "sin_r"):
            if self.soft_argmin.get(name) is not None:
                raise ConfigError(f"{name} cannot be soft-argmin encoded")

    @property
    def specs(self) -> RegressionSpecs:
        return {name: self.soft_argmin.get(name) for name in TARGET_NAMES}

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "C": "inf" if math.isinf(self.C) else self.C,
            "focal": dataclasses.asdict(self.focal),
            "weights": dataclasses.asdict(self.weights),
            "soft_argmin": {k: (None if v is None else {"a": v.a, "b": v.b, "n": v.n})
                            for k, v in self.specs.items()},
            "inference": dataclasses.asdict(self.inference),
            "eval": {"iou_thresholds": list(self.eval.iou_thresholds), "mode": self.eval.mode,
                     "difficulty": self.eval.difficulty},
            "encoding": self.encoding.value,
            "seed": self.seed,
            "class_names": list(self.class_names),
            "synth": {**dataclasses.asdict(self.synth),
                      "points_per_object": _ppo_out(self.synth.points_per_object)},
        }


def _ppo_out(v):
    return list(v) if isinstance(v, (tuple, list)) else v


def _build(cls, data, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r}: {exc}") from None


def _parse_C(v) -> float:
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"C must be a number or 'inf', got {v!r}") from None


def config_from_dict(data: dict) -> RunConfig:
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kw = {}
    if "grid" in data:
        kw["grid"] = _build(GridConfig, data["grid"], "grid")
    if "C" in data:
        kw["C"] = _parse_C(data["C"])
    if "focal" in data:
        kw["focal"] = _build(FocalParams, data["focal"], "focal")
    if "weights" in data:
        kw["weights"] = _build(LossWeights, data["weights"], "weights")
    if "soft_argmin" in data:
        sa = data["soft_argmin"]
        if not isinstance(sa, dict):
            raise ConfigError("section 'soft_argmin' must be an object")
        # Listed channels override the defaults; null makes a channel raw.
        merged = default_specs(kw.get("grid", GridConfig()))
        merged.update({k: None if v is None else _build(SoftArgminSpec, v, f"soft_argmin.{k}")
                       for k, v in sa.items()})
        kw["soft_argmin"] = merged
    if "inference" in data:
        kw["inference"] = _build(InferenceConfig, data["inference"], "inference")
    if "eval" in data:
        kw["eval"] = _build(EvalConfig, data["eval"], "eval")
    if "synth" in data:
        kw["synth"] = _build(SynthConfig, data["synth"], "synth")
    for key in ("encoding", "seed", "class_names"):
        if key in data:
            kw[key] = data[key]
    try:
        return RunConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except ValueError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data)
