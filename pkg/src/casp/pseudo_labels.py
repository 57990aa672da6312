"""Stability-based pseudo-label selection from adaptation snapshots."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .adaptation import SnapshotMatrix
from .data import DomainDataset


def _rows(snap: SnapshotMatrix | np.ndarray) -> np.ndarray:
    preds = snap.preds if isinstance(snap, SnapshotMatrix) else snap
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 2:
        raise ValueError("snapshots must be a 2-D (checkpoint, sample) array")
    return preds


def stability(snap: SnapshotMatrix | np.ndarray) -> np.ndarray:
    """Mean absolute change between consecutive checkpoint predictions, per sample."""
    preds = _rows(snap)
    if preds.shape[0] < 2:
        raise ValueError("stability needs at least two checkpoints")
    return np.abs(np.diff(preds, axis=0)).mean(axis=0)


def average_pseudo_labels(snap: SnapshotMatrix | np.ndarray) -> np.ndarray:
    """Mean prediction over all checkpoints, per sample."""
    preds = _rows(snap)
    if preds.shape[0] < 1:
        raise ValueError("no checkpoints")
    return preds.mean(axis=0)


def select_threshold(s: Sequence[float], lam: float) -> float:
    """Nearest-rank ``(100 - lam)``-th percentile of ``s``.

    Keeping ``s <= threshold`` retains the most stable ~``(100 - lam)`` percent,
    e.g. ``lam=95`` keeps the most stable 5%. Rank arithmetic is exact
    (rational), so results do not depend on float rounding of ``lam / 100``.
    """
    s = np.sort(np.asarray(s, dtype=np.float64))
    if s.size == 0:
        raise ValueError("empty stability array")
    if not 0 < lam < 100:
        raise ValueError(f"lambda must be in (0, 100), got {lam}")
    rank = math.ceil((100 - Fraction(lam)) * s.size / 100)
    return float(s[max(rank, 1) - 1])


@dataclass
class StabilityReport:
    ids: list[str]
    s: np.ndarray
    pseudo: np.ndarray
    threshold: float
    selected: np.ndarray
    lam: float | None

    @property
    def n_selected(self) -> int:
        return int(self.selected.sum())

    def to_dict(self) -> dict:
        return {
            "ids": list(self.ids),
            "s": self.s.tolist(),
            "pseudo_labels": self.pseudo.tolist(),
            "threshold": self.threshold,
            "selected": self.selected.tolist(),
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StabilityReport":
        return cls(
            list(d["ids"]),
            np.asarray(d["s"], dtype=np.float64),
            np.asarray(d["pseudo_labels"], dtype=np.float64),
            float(d["threshold"]),
            np.asarray(d["selected"], dtype=bool),
            d.get("lambda"),
        )


def make_report(
    snap: SnapshotMatrix, lam: float | None = 95.0, threshold: float | None = None
) -> StabilityReport:
    """Stability, averaged pseudo labels and selection mask.

    The threshold is the ``lam`` quantile unless given explicitly.
    """
    s = stability(snap)
    pseudo = average_pseudo_labels(snap)
    if threshold is None:
        if lam is None:
            raise ValueError("give either lam or threshold")
        threshold = select_threshold(s, lam)
    return StabilityReport(list(snap.ids), s, pseudo, float(threshold), s <= threshold, lam)


def build_selftrain_set(target: DomainDataset, report: StabilityReport, split: str = "train") -> DomainDataset:
    """Selected target samples relabelled with their averaged pseudo labels."""
    samples = target.split(split)
    if [x.id for x in samples] != list(report.ids):
        raise ValueError("stability report ids do not match the target split")
    if report.n_selected == 0:
        raise ValueError("no samples selected for self-training; lower lambda or raise the threshold")
    chosen = [
        x.with_label(float(y)) for x, y, keep in zip(samples, report.pseudo, report.selected) if keep
    ]
    labels = [x.label for x in chosen]
    lo = min(target.label_range[0], *labels)
    hi = max(target.label_range[1], *labels)
    return DomainDataset(f"{target.name}-pseudo", (lo, hi), dict(target.feat_dims), {"train": chosen})


def save_report(report: StabilityReport, path: str | os.PathLike, dumps=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = (dumps or (lambda o: json.dumps(o, indent=1)))(report.to_dict())
    path.write_text(text + "\n", encoding="utf-8")
    return path
