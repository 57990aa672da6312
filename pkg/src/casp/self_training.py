"""Stage 2 self-training plus the ST and Norm baselines."""

from __future__ import annotations

import copy
from dataclasses import replace

from .adaptation import snapshot_predictions
from .backbones import FusionModel
from .data import DomainDataset, collate
from .training import TrainConfig, fit_l1

BASELINES = ("ST", "Norm")


def selftrain_defaults(**overrides) -> TrainConfig:
    """Stage-2 optimiser settings: lr 5e-4 for 5 epochs, otherwise as pre-training."""
    return replace(TrainConfig(learning_rate=5e-4, epochs=5), **overrides)


def self_train(model: FusionModel, train_set: DomainDataset, cfg: TrainConfig) -> tuple[FusionModel, list[dict]]:
    """L1 training of a copy of ``model`` on a pseudo-labeled set (last epoch kept)."""
    samples = train_set.split("train")
    if not samples:
        raise ValueError("self-training set is empty")
    labels = train_set.labels("train")
    return fit_l1(copy.deepcopy(model), collate(samples), labels, cfg)


def run_baseline(
    kind: str, source_model: FusionModel, target: DomainDataset, cfg: TrainConfig, split: str = "train"
) -> tuple[FusionModel, list[dict]]:
    """Self-train on the source model's own predictions for every target sample.

    ``ST`` updates all parameters, ``Norm`` only layer-norm affine parameters.
    """
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    samples = target.split(split)
    if not samples:
        raise ValueError("target split is empty")
    batch = collate(samples)
    pseudo = snapshot_predictions(source_model, batch).astype("float64")
    cfg = replace(cfg, parameter_scope="all" if kind == "ST" else "norm_only")
    return fit_l1(copy.deepcopy(source_model), batch, pseudo, cfg)
