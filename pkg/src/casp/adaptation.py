"""Stage 1: contrastive test-time adaptation with modality random dropout.

Only layer-norm scale/shift parameters move. Predictions on the whole
target adaptation split are recorded before adaptation and after every
``interval``-th epoch.
"""

from __future__ import annotations

import copy
import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .backbones import FusionModel
from .data import MODALITIES, Batch, DomainDataset, collate, iter_batches
from .losses import VARIANTS, ntxent_batch
from .training import TrainConfig, clip_and_measure, make_optimizer, predict_batch, trainable_scope

logger = logging.getLogger(__name__)


@dataclass
class AdaptConfig:
    epochs: int = 15
    interval: int = 3
    n_drop: int = 1
    fill: float = 0.0
    tau: float = 0.5
    ntxent_variant: str = "same_view"
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 24
    grad_clip_norm: float | None = 0.8
    step_size: int = 10
    gamma: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if not self.epochs >= self.interval >= 1:
            raise ValueError(f"need epochs >= interval >= 1, got epochs={self.epochs} interval={self.interval}")
        if not 1 <= self.n_drop <= len(MODALITIES) - 1:
            raise ValueError(f"n_drop must be in [1, {len(MODALITIES) - 1}], got {self.n_drop}")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.ntxent_variant not in VARIANTS:
            raise ValueError(f"ntxent_variant must be one of {VARIANTS}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for a contrastive loss")
        self.train_config().validate()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            batch_size=self.batch_size,
            grad_clip_norm=self.grad_clip_norm,
            step_size=self.step_size,
            gamma=self.gamma,
            seed=self.seed,
            parameter_scope="norm_only",
        )

    @classmethod
    def from_dict(cls, d: dict) -> "AdaptConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown AdaptConfig field(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SnapshotMatrix:
    """Predictions (float32) of every target sample at each checkpoint epoch."""

    epochs: list[int]
    ids: list[str]
    preds: np.ndarray  # (n_checkpoints, n_samples)

    def __post_init__(self):
        self.preds = np.asarray(self.preds, dtype=np.float32)
        if self.preds.shape != (len(self.epochs), len(self.ids)):
            raise ValueError(f"preds shape {self.preds.shape} != ({len(self.epochs)}, {len(self.ids)})")
        if not np.isfinite(self.preds).all():
            raise ValueError("snapshot predictions must be finite")


def snapshot_epochs(epochs: int, interval: int) -> list[int]:
    return [j * interval for j in range(epochs // interval + 1)]


def drop_modality(batch: Batch, n_drop: int, fill: float, rng: np.random.Generator) -> Batch:
    """Replace ``n_drop`` randomly chosen modalities per sample with ``fill``.

    Masks are kept, so a dropped modality stays distinguishable from padding.
    """
    if not 1 <= n_drop < len(MODALITIES):
        raise ValueError(f"n_drop must be in [1, {len(MODALITIES) - 1}], got {n_drop}")
    order = np.argsort(rng.random((len(batch), len(MODALITIES))), axis=1)
    dropped = np.zeros((len(batch), len(MODALITIES)), dtype=bool)
    np.put_along_axis(dropped, order[:, :n_drop], True, axis=1)
    feats = {}
    for j, m in enumerate(MODALITIES):
        x = batch.features[m]
        sel = torch.from_numpy(dropped[:, j])[:, None, None]
        feats[m] = torch.where(sel, torch.full_like(x, fill), x)
    return Batch(feats, dict(batch.masks), batch.ids)


def snapshot_predictions(model: FusionModel, target: DomainDataset | Batch, split: str = "train") -> np.ndarray:
    """Evaluation-mode predictions over the adaptation split, in dataset id order."""
    batch = target if isinstance(target, Batch) else collate(target.split(split))
    return predict_batch(model, batch).astype(np.float32)


def adapt(
    model: FusionModel, target: DomainDataset, cfg: AdaptConfig, split: str = "train"
) -> tuple[FusionModel, SnapshotMatrix, list[dict]]:
    """Contrastively adapt a copy of ``model`` on the unlabeled target split.

    Returns the adapted model, the snapshot matrix and per-epoch records
    (mean NT-Xent loss, learning rate, largest clipped gradient norm).
    """
    cfg.validate()
    samples = target.split(split)
    if len(samples) < 2:
        raise ValueError("adaptation needs at least 2 target samples")
    batch = collate(samples)
    model = copy.deepcopy(model)
    tcfg = cfg.train_config()
    shuffle_rng = np.random.default_rng([cfg.seed, 0])
    drop_rng = np.random.default_rng([cfg.seed, 1])

    rows = [snapshot_predictions(model, batch)]
    history: list[dict] = []
    with torch.random.fork_rng(devices=[]), trainable_scope(model, "norm_only") as params:
        torch.manual_seed(cfg.seed)
        opt, sched = make_optimizer(params, tcfg)
        for epoch in range(cfg.epochs):
            lr = opt.param_groups[0]["lr"]
            model.train()
            losses, gmax = [], 0.0
            for _, b in iter_batches(batch, cfg.batch_size, shuffle_rng, min_size=2):
                opt.zero_grad(set_to_none=True)
                h = model.encode(b)
                h_aug = model.encode(drop_modality(b, cfg.n_drop, cfg.fill, drop_rng))
                loss = ntxent_batch(h, h_aug, cfg.tau, cfg.ntxent_variant)
                if not torch.isfinite(loss):
                    raise FloatingPointError(f"non-finite contrastive loss at adaptation epoch {epoch}")
                loss.backward()
                gmax = max(gmax, clip_and_measure(params, cfg.grad_clip_norm))
                opt.step()
                losses.append(float(loss.detach()))
            sched.step()
            history.append({"epoch": epoch, "ntxent": float(np.mean(losses)), "lr": lr, "grad_norm_max": gmax})
            if (epoch + 1) % cfg.interval == 0:
                rows.append(snapshot_predictions(model, batch))
    model.eval()
    snap = SnapshotMatrix(snapshot_epochs(cfg.epochs, cfg.interval), list(batch.ids), np.stack(rows))
    return model, snap, history


def save_snapshots(snap: SnapshotMatrix, directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"epochs": snap.epochs, "ids": snap.ids, "shape": list(snap.preds.shape), "blob": "snapshots.f32"}
    (directory / "snapshots.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    (directory / "snapshots.f32").write_bytes(snap.preds.astype("<f4").tobytes())
    return directory


def load_snapshots(directory: str | os.PathLike) -> SnapshotMatrix:
    directory = Path(directory)
    meta = json.loads((directory / "snapshots.json").read_text(encoding="utf-8"))
    raw = np.frombuffer((directory / meta.get("blob", "snapshots.f32")).read_bytes(), dtype="<f4")
    shape = tuple(meta["shape"])
    if raw.size != shape[0] * shape[1]:
        raise ValueError(f"snapshot blob holds {raw.size} values, manifest declares shape {shape}")
    return SnapshotMatrix(list(meta["epochs"]), list(meta["ids"]), raw.reshape(shape))
