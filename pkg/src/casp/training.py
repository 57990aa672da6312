"""Supervised L1 training shared by source pre-training and self-training."""

from __future__ import annotations

import contextlib
import copy
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator, Sequence

import numpy as np
import torch

from .backbones import FusionModel, partition_parameters
from .data import Batch, DomainDataset, MultimodalSample, collate, iter_batches
from .losses import l1_loss

logger = logging.getLogger(__name__)

SCOPES = ("all", "norm_only")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 24
    grad_clip_norm: float | None = 0.8
    step_size: int = 10
    gamma: float = 0.1
    seed: int = 0
    parameter_scope: str = "all"

    def validate(self) -> None:
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ValueError("grad_clip_norm must be > 0 when set")
        if self.step_size < 1 or not self.gamma > 0:
            raise ValueError("step scheduler needs step_size >= 1 and gamma > 0")
        if self.parameter_scope not in SCOPES:
            raise ValueError(f"parameter_scope must be one of {SCOPES}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown TrainConfig field(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def scheduled_lr(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate in effect during 0-based ``epoch``."""
    return cfg.learning_rate * cfg.gamma ** (epoch // cfg.step_size)


@contextlib.contextmanager
def trainable_scope(model: FusionModel, scope: str) -> Iterator[list[torch.nn.Parameter]]:
    """Restrict ``requires_grad`` to the chosen partition for the duration."""
    norm, other = partition_parameters(model)
    if scope == "all":
        active = list(norm.values()) + list(other.values())
    elif scope == "norm_only":
        active = list(norm.values())
    else:
        raise ValueError(f"unknown parameter scope {scope!r}")
    prev = {id(p): p.requires_grad for p in model.parameters()}
    active_ids = {id(p) for p in active}
    for p in model.parameters():
        p.requires_grad_(id(p) in active_ids)
    try:
        yield [p for _, p in model.named_parameters() if id(p) in active_ids]
    finally:
        for p in model.parameters():
            p.requires_grad_(prev[id(p)])


def make_optimizer(params: Sequence[torch.nn.Parameter], cfg: TrainConfig):
    opt = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.step_size, gamma=cfg.gamma)
    return opt, sched


def clip_and_measure(params: Sequence[torch.nn.Parameter], max_norm: float | None) -> float:
    """Clip the global gradient norm and return the norm actually applied."""
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    if max_norm is not None:
        torch.nn.utils.clip_grad_norm_(params, max_norm)
    return float(torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(g) for g in grads])))


@torch.no_grad()
def predict_batch(model: FusionModel, batch: Batch, batch_size: int = 256) -> np.ndarray:
    """Evaluation-mode predictions in batch order."""
    was_training = model.training
    model.eval()
    try:
        out = [model(b).double().numpy() for _, b in iter_batches(batch, batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(out)


def predict_samples(model: FusionModel, samples: Sequence[MultimodalSample], batch_size: int = 256) -> np.ndarray:
    return predict_batch(model, collate(samples), batch_size)


def fit_l1(
    model: FusionModel,
    batch: Batch,
    labels: np.ndarray,
    cfg: TrainConfig,
    valid: tuple[Batch, np.ndarray] | None = None,
    keep_best: bool = False,
) -> tuple[FusionModel, list[dict]]:
    """Mini-batch L1 regression on ``model`` in place.

    Each epoch record holds ``train_mae`` (running loss in training mode),
    ``valid_mae`` when validation data is given, the epoch's ``lr`` and the
    largest post-clipping gradient norm over its steps.
    """
    cfg.validate()
    y_all = torch.as_tensor(np.asarray(labels, dtype=np.float32))
    if len(y_all) != len(batch):
        raise ValueError("labels and batch have different lengths")
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best_state, best_mae = None, math.inf
    with torch.random.fork_rng(devices=[]), trainable_scope(model, cfg.parameter_scope) as params:
        torch.manual_seed(cfg.seed)
        opt, sched = make_optimizer(params, cfg)
        for epoch in range(cfg.epochs):
            lr = opt.param_groups[0]["lr"]
            model.train()
            total, count, gmax = 0.0, 0, 0.0
            for idx, b in iter_batches(batch, cfg.batch_size, rng):
                opt.zero_grad(set_to_none=True)
                loss = l1_loss(model(b), y_all[idx])
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite L1 loss at epoch {epoch} (lr={lr:g})")
                loss.backward()
                gmax = max(gmax, clip_and_measure(params, cfg.grad_clip_norm))
                opt.step()
                total += float(loss.detach()) * len(idx)
                count += len(idx)
            sched.step()
            rec = {"epoch": epoch, "train_mae": total / count, "lr": lr, "grad_norm_max": gmax}
            if valid is not None:
                vb, vy = valid
                rec["valid_mae"] = float(np.mean(np.abs(predict_batch(model, vb) - vy)))
                if keep_best and rec["valid_mae"] < best_mae:
                    best_mae = rec["valid_mae"]
                    best_state = copy.deepcopy(model.state_dict())
            history.append(rec)
            logger.debug("epoch %d %s", epoch, rec)
    model.eval()
    if keep_best and best_state is not None:
        model.load_state_dict(best_state)
    return model, history


def pretrain(model: FusionModel, source: DomainDataset, cfg: TrainConfig) -> tuple[FusionModel, list[dict]]:
    """Train a copy of ``model`` on the labeled source train split.

    Returns the checkpoint with the best validation MAE (last epoch if the
    source has no valid split) and the per-epoch history.
    """
    train = source.split("train")
    if any(not s.has_label for s in train):
        raise ValueError("source train split has unlabeled samples")
    labels = source.labels("train")
    valid = None
    if source.splits.get("valid"):
        valid = (collate(source.split("valid")), source.labels("valid"))
    model = copy.deepcopy(model)
    return fit_l1(model, collate(train), labels, cfg, valid=valid, keep_best=valid is not None)
