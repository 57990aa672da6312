"""Binary accuracy, support-weighted F1 and MAE.

A value ``v`` is classed positive when ``v >= 0`` and negative otherwise; the
rule is applied to predictions and labels over all samples.
"""

from __future__ import annotations

import numpy as np
import torch

from .losses import l1_loss


def _pair(pred, y) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if pred.shape != y.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {y.size} labels")
    if pred.size == 0:
        raise ValueError("metrics of empty input")
    return pred, y


def mae(pred, y) -> float:
    pred, y = _pair(pred, y)
    return float(l1_loss(torch.from_numpy(pred), torch.from_numpy(y)))


def binary_accuracy(pred, y) -> float:
    pred, y = _pair(pred, y)
    return float(np.mean((pred >= 0) == (y >= 0)))


def f1(pred, y) -> float:
    """Per-class F1 for {negative, positive}, averaged by true-class support."""
    pred, y = _pair(pred, y)
    p, t = pred >= 0, y >= 0
    score = 0.0
    for cls in (False, True):
        tp = np.sum((p == cls) & (t == cls))
        fp = np.sum((p == cls) & (t != cls))
        fn = np.sum((p != cls) & (t == cls))
        denom = 2 * tp + fp + fn
        score += (2 * tp / denom if denom else 0.0) * np.mean(t == cls)
    return float(score)


def evaluate(pred, y) -> dict:
    pred, y = _pair(pred, y)
    return {"acc": binary_accuracy(pred, y), "f1": f1(pred, y), "mae": mae(pred, y), "n": int(pred.size)}
