"""Core sample and dataset types shared by the whole pipeline.

Feature sequences are stored as read-only float32 numpy arrays of shape
``(seq_len, feat_dim)``. Batches are zero-padded torch tensors with a boolean
validity mask per time step.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import torch

MODALITIES: tuple[str, ...] = ("audio", "video", "text")
SPLITS: tuple[str, ...] = ("train", "valid", "test")


class HiddenLabelError(RuntimeError):
    """Raised when code reads a label that the dataset marks as hidden."""


class _LabelGuard:
    # enabled: plain `.label` access on hidden labels raises.
    # strict: even explicit `reveal_label()` raises (used by tests to prove
    # that adaptation code never touches target ground truth).
    enabled = True
    strict = False


def set_hidden_label_guard(enabled: bool) -> None:
    _LabelGuard.enabled = enabled


@contextlib.contextmanager
def hidden_label_guard(enabled: bool = True, strict: bool = False) -> Iterator[None]:
    """Temporarily change how hidden labels may be accessed."""
    prev = (_LabelGuard.enabled, _LabelGuard.strict)
    _LabelGuard.enabled, _LabelGuard.strict = enabled, strict
    try:
        yield
    finally:
        _LabelGuard.enabled, _LabelGuard.strict = prev


def _as_features(values) -> np.ndarray:
    if isinstance(values, np.ndarray) and values.dtype == np.float32 and not values.flags.writeable:
        return values
    arr = np.array(values, dtype=np.float32, copy=True)
    arr.setflags(write=False)
    return arr


class MultimodalSample:
    """One sample: audio/video/text feature sequences and an optional label.

    A label flagged ``label_hidden`` is ground truth that adaptation code must
    not see. Reading ``.label`` on it raises :class:`HiddenLabelError` while the
    guard is enabled; evaluation code calls :meth:`reveal_label` explicitly.
    """

    __slots__ = ("id", "features", "_label", "label_hidden")

    def __init__(
        self,
        id: str,
        features: Mapping[str, np.ndarray],
        label: float | None = None,
        *,
        label_hidden: bool = False,
    ):
        object.__setattr__(self, "id", str(id))
        object.__setattr__(self, "features", {m: _as_features(v) for m, v in features.items()})
        object.__setattr__(self, "_label", None if label is None else float(label))
        object.__setattr__(self, "label_hidden", bool(label_hidden and label is not None))

    def __setattr__(self, name, value):
        raise AttributeError("MultimodalSample is immutable")

    @property
    def has_label(self) -> bool:
        return self._label is not None

    @property
    def label(self) -> float | None:
        if self.label_hidden and _LabelGuard.enabled:
            raise HiddenLabelError(f"label of sample {self.id!r} is hidden")
        return self._label

    def reveal_label(self) -> float | None:
        """Return the label even if hidden. Evaluation use only."""
        if self.label_hidden and _LabelGuard.strict:
            raise HiddenLabelError(f"label of sample {self.id!r} is hidden (strict guard)")
        return self._label

    def with_label(self, label: float | None, *, label_hidden: bool = False) -> "MultimodalSample":
        return MultimodalSample(self.id, self.features, label, label_hidden=label_hidden)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultimodalSample):
            return NotImplemented
        if (self.id, self._label, self.label_hidden) != (other.id, other._label, other.label_hidden):
            return False
        if self.features.keys() != other.features.keys():
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in ((self.features[m], other.features[m]) for m in self.features)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        shapes = {m: tuple(v.shape) for m, v in self.features.items()}
        return f"MultimodalSample(id={self.id!r}, shapes={shapes}, has_label={self.has_label})"


@dataclass(frozen=True, eq=True)
class DomainDataset:
    name: str
    label_range: tuple[float, float]
    feat_dims: Mapping[str, int]
    splits: Mapping[str, Sequence[MultimodalSample]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "label_range", (float(self.label_range[0]), float(self.label_range[1])))
        object.__setattr__(self, "feat_dims", {m: int(self.feat_dims[m]) for m in self.feat_dims})
        object.__setattr__(self, "splits", {k: tuple(v) for k, v in self.splits.items()})

    def split(self, name: str) -> tuple[MultimodalSample, ...]:
        if name not in self.splits:
            raise KeyError(f"dataset {self.name!r} has no split {name!r}")
        return self.splits[name]

    def ids(self, split: str) -> list[str]:
        return [s.id for s in self.split(split)]

    def ground_truth(self, split: str) -> np.ndarray:
        """All labels of a split, hidden ones included. Evaluation use only."""
        labels = [s.reveal_label() for s in self.split(split)]
        if any(v is None for v in labels):
            raise ValueError(f"split {split!r} of {self.name!r} is not fully labeled")
        return np.asarray(labels, dtype=np.float64)

    def labels(self, split: str) -> np.ndarray:
        """Visible labels of a split; raises on hidden or missing labels."""
        labels = [s.label for s in self.split(split)]
        if any(v is None for v in labels):
            raise ValueError(f"split {split!r} of {self.name!r} has unlabeled samples")
        return np.asarray(labels, dtype=np.float64)


def validate_dataset(ds: DomainDataset) -> list[str]:
    """Return a description of every invariant violation (empty list = valid)."""
    out: list[str] = []
    lo, hi = ds.label_range
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        out.append(f"dataset {ds.name!r}: invalid label_range {ds.label_range}")
    for m in MODALITIES:
        if m not in ds.feat_dims:
            out.append(f"dataset {ds.name!r}: feat_dims missing modality {m!r}")
        elif ds.feat_dims[m] < 1:
            out.append(f"dataset {ds.name!r}: feat_dims[{m!r}] must be >= 1")
    for m in ds.feat_dims:
        if m not in MODALITIES:
            out.append(f"dataset {ds.name!r}: unknown modality {m!r} in feat_dims")
    for split in ds.splits:
        if split not in SPLITS:
            out.append(f"dataset {ds.name!r}: unknown split {split!r}")
    seen: set[str] = set()
    for split, samples in ds.splits.items():
        for s in samples:
            where = f"split {split!r} sample {s.id!r}"
            if s.id in seen:
                out.append(f"{where}: duplicate sample id")
            seen.add(s.id)
            for m in MODALITIES:
                if m not in s.features:
                    out.append(f"{where}: missing modality {m!r}")
                    continue
                arr = s.features[m]
                if arr.ndim != 2:
                    out.append(f"{where}: modality {m!r} must be 2-D, got shape {arr.shape}")
                    continue
                if arr.shape[0] < 1:
                    out.append(f"{where}: modality {m!r} has empty sequence")
                if m in ds.feat_dims and arr.shape[1] != ds.feat_dims[m]:
                    out.append(
                        f"{where}: modality {m!r} feat_dim {arr.shape[1]} != declared {ds.feat_dims[m]}"
                    )
                if not np.isfinite(arr).all():
                    out.append(f"{where}: modality {m!r} has non-finite values")
            for m in s.features:
                if m not in MODALITIES:
                    out.append(f"{where}: unknown modality {m!r}")
            y = s._label
            if y is not None and not (math.isfinite(y) and lo <= y <= hi):
                out.append(f"{where}: label {y} outside label_range [{lo}, {hi}]")
            if split == "test" and y is None:
                out.append(f"{where}: test split must be fully labeled")
    return out


@dataclass(frozen=True)
class Batch:
    """Zero-padded modality tensors ``(B, T, d)`` with validity masks ``(B, T)``."""

    features: Mapping[str, torch.Tensor]
    masks: Mapping[str, torch.Tensor]
    ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.ids)

    def index(self, idx) -> "Batch":
        idx = torch.as_tensor(idx, dtype=torch.long)
        return Batch(
            {m: v[idx] for m, v in self.features.items()},
            {m: v[idx] for m, v in self.masks.items()},
            tuple(self.ids[i] for i in idx.tolist()),
        )

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch({m: v.to(dtype) for m, v in self.features.items()}, self.masks, self.ids)


def collate(samples: Sequence[MultimodalSample], pad_to: Mapping[str, int] | None = None) -> Batch:
    """Stack samples into a padded batch. ``pad_to`` forces a minimum length."""
    if not samples:
        raise ValueError("cannot collate an empty sample list")
    feats, masks = {}, {}
    for m in MODALITIES:
        arrs = [s.features[m] for s in samples]
        t_max = max(a.shape[0] for a in arrs)
        if pad_to and m in pad_to:
            t_max = max(t_max, pad_to[m])
        d = arrs[0].shape[1]
        x = np.zeros((len(arrs), t_max, d), dtype=np.float32)
        mask = np.zeros((len(arrs), t_max), dtype=bool)
        for i, a in enumerate(arrs):
            if a.shape[1] != d:
                raise ValueError(f"inconsistent feat_dim for {m!r} in sample {samples[i].id!r}")
            x[i, : a.shape[0]] = a
            mask[i, : a.shape[0]] = True
        feats[m] = torch.from_numpy(x)
        masks[m] = torch.from_numpy(mask)
    return Batch(feats, masks, tuple(s.id for s in samples))


def batch_indices(n: int, batch_size: int, rng: np.random.Generator | None, min_size: int = 1) -> list[np.ndarray]:
    """Split ``range(n)`` into mini-batches, shuffled when ``rng`` is given.

    A trailing batch smaller than ``min_size`` is merged into the previous one.
    """
    order = rng.permutation(n) if rng is not None else np.arange(n)
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < min_size:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def iter_batches(
    batch: Batch, batch_size: int, rng: np.random.Generator | None = None, min_size: int = 1
) -> Iterable[tuple[np.ndarray, Batch]]:
    for idx in batch_indices(len(batch), batch_size, rng, min_size):
        yield idx, batch.index(idx)
