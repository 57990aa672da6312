"""Experiment configuration and deterministic JSON output."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .adaptation import AdaptConfig
from .backbones import EncoderConfig
from .self_training import BASELINES, selftrain_defaults
from .synth import ShiftConfig
from .training import TrainConfig

OUTPUT_ROOT_ENV = "CASP_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    source_dir: str = "data/source"
    target_dir: str = "data/target"
    output_dir: str = "runs/default"
    synth: ShiftConfig = field(default_factory=ShiftConfig)
    backbone: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: TrainConfig = field(default_factory=TrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    lam: float = 95.0
    selftrain: TrainConfig = field(default_factory=selftrain_defaults)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    baselines: list[str] = field(default_factory=lambda: list(BASELINES))
    reuse_pretrain: bool = False
    label_rescale: bool = False
    eval_split: str = "test"

    def validate(self) -> None:
        for name, sub in (("synth", self.synth), ("backbone", self.backbone), ("pretrain", self.pretrain),
                          ("adapt", self.adapt), ("selftrain", self.selftrain)):
            try:
                sub.validate()
            except ValueError as e:
                raise ConfigError(f"{name}: {e}") from e
        if not 0 < self.lam < 100:
            raise ConfigError("lam: must be in (0, 100)")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: must be a non-empty list of distinct integers")
        bad = [b for b in self.baselines if b not in BASELINES]
        if bad:
            raise ConfigError(f"baselines: unknown baseline(s) {bad}; expected a subset of {BASELINES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synth"] = self.synth.to_dict()
        return d

    def path(self, name: str) -> Path:
        """Resolve a path field, relative paths against ``$CASP_OUTPUT_ROOT`` when set."""
        p = Path(getattr(self, name))
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return p if p.is_absolute() or not root else Path(root) / p


def benchmark_config(**overrides) -> RunConfig:
    """The shifted synthetic benchmark: rotated features plus an audio/video offset, late fusion."""
    synth = ShiftConfig(
        rotation={"audio": 0.9, "video": 0.9, "text": 0.9},
        offset={"audio": 0.5, "video": 0.5, "text": 0.0},
    )
    return RunConfig(synth=synth, backbone=EncoderConfig(fusion="late"), **overrides)


_SECTIONS = {
    "synth": ShiftConfig,
    "backbone": EncoderConfig,
    "pretrain": TrainConfig,
    "adapt": AdaptConfig,
    "selftrain": TrainConfig,
}


def config_from_dict(d: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    defaults = RunConfig()
    for key, value in d.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            base = getattr(defaults, key)
            merged = {**(base.to_dict() if hasattr(base, "to_dict") else asdict(base)), **value}
            try:
                kwargs[key] = _SECTIONS[key].from_dict(merged)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{key}: {e}") from e
        else:
            kwargs[key] = value
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    cfg.validate()
    return cfg


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values parse as JSON when possible."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
        node[parts[-1]] = value
    return d


def load_config(path: str | os.PathLike | None, overrides: list[str] | None = None) -> RunConfig:
    d: dict = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file {path} not found") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if overrides:
        d = apply_overrides(d, overrides)
    return config_from_dict(d)


def _round(obj):
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"cannot serialise non-finite float {obj}")
        return float(f"{obj:.6g}")
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalars
        return _round(obj.item())
    return obj


def dumps(obj) -> str:
    """JSON with floats rounded to 6 significant digits (stable across reruns)."""
    return json.dumps(_round(obj), indent=1, allow_nan=False)


def write_json(path: str | os.PathLike, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n", encoding="utf-8")
    return path
