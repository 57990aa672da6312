"""Synthetic source/target multimodal regression tasks with controllable shift.

Every modality is a fixed random linear map of a latent sentiment ``z`` plus
per-step nuisance latents, with Gaussian noise on top. The target domain reuses
the same maps and then applies, per modality, an orthogonal rotation, extra
noise, a per-sample corruption in a random low-rank subspace and a constant
offset. Target labels are ``label_scale * z``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import MODALITIES, DomainDataset, MultimodalSample


def _per_modality(value: float = 0.0) -> dict[str, float]:
    return dict.fromkeys(MODALITIES, value)


@dataclass
class ShiftConfig:
    n_source: int = 600
    n_target: int = 400
    n_valid: int = 200
    n_test: int = 400
    seq_len: dict[str, int] = field(default_factory=lambda: {"audio": 8, "video": 8, "text": 10})
    variable_length: bool = True
    feat_dims: dict[str, int] = field(default_factory=lambda: {"audio": 8, "video": 12, "text": 16})
    label_range: tuple[float, float] = (-3.0, 3.0)
    n_nuisance: int = 3
    # how strongly each modality encodes z (relative to unit nuisance)
    signal: dict[str, float] = field(default_factory=lambda: {"audio": 0.6, "video": 0.6, "text": 1.0})
    noise_sigma: float = 0.3
    target_noise_sigma: float = 0.0
    rotation: dict[str, float] = field(default_factory=_per_modality)
    corruption: dict[str, float] = field(default_factory=_per_modality)
    offset: dict[str, float] = field(default_factory=_per_modality)
    label_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_source", "n_target", "n_valid", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("seq_len", "feat_dims", "signal", "rotation", "corruption", "offset"):
            d = getattr(self, name)
            if set(d) != set(MODALITIES):
                raise ValueError(f"{name} must have exactly the keys {MODALITIES}")
        for m in MODALITIES:
            if self.seq_len[m] < 1 or self.feat_dims[m] < 1:
                raise ValueError(f"seq_len and feat_dims must be >= 1 (modality {m!r})")
            if self.corruption[m] < 0:
                raise ValueError(f"corruption[{m!r}] must be >= 0")
        if self.noise_sigma < 0 or self.target_noise_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        lo, hi = self.label_range
        if not lo < hi:
            raise ValueError("label_range must satisfy lo < hi")
        if self.label_scale <= 0:
            raise ValueError("label_scale must be > 0")
        if self.n_nuisance < 0:
            raise ValueError("n_nuisance must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label_range"] = list(self.label_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ShiftConfig field(s): {sorted(unknown)}")
        d = dict(d)
        if "label_range" in d:
            d["label_range"] = tuple(d["label_range"])
        return cls(**d)


def rotation_matrix(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix rotating by ``angle`` in ``dim // 2`` random planes."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    c, s = math.cos(angle), math.sin(angle)
    block = np.eye(dim)
    for k in range(dim // 2):
        i, j = 2 * k, 2 * k + 1
        block[i, i], block[i, j], block[j, i], block[j, j] = c, -s, s, c
    return q @ block @ q.T


@dataclass
class _Maps:
    signal_dir: dict[str, np.ndarray]
    nuisance: dict[str, np.ndarray]
    rotation: dict[str, np.ndarray]
    corrupt_basis: dict[str, np.ndarray]
    offset_dir: dict[str, np.ndarray]


def _make_maps(cfg: ShiftConfig, rng: np.random.Generator) -> _Maps:
    sig, nui, rot, cb, off = {}, {}, {}, {}, {}
    for m in MODALITIES:
        d = cfg.feat_dims[m]
        a = rng.standard_normal(d)
        sig[m] = cfg.signal[m] * a / np.linalg.norm(a) * math.sqrt(d)
        nui[m] = rng.standard_normal((d, cfg.n_nuisance)) if cfg.n_nuisance else np.zeros((d, 0))
        rot[m] = rotation_matrix(d, cfg.rotation[m], rng)
        rank = max(1, d // 4)
        cb[m] = rng.standard_normal((d, rank)) / math.sqrt(rank)
        o = rng.standard_normal(d)
        off[m] = o / np.linalg.norm(o)
    return _Maps(sig, nui, rot, cb, off)


def _draw_split(
    cfg: ShiftConfig,
    maps: _Maps,
    n: int,
    rng: np.random.Generator,
    *,
    target: bool,
    prefix: str,
    hidden: bool,
) -> list[MultimodalSample]:
    lo, hi = cfg.label_range
    z = rng.uniform(lo, hi, size=n)
    samples = []
    for i in range(n):
        feats = {}
        for m in MODALITIES:
            t_max, d = cfg.seq_len[m], cfg.feat_dims[m]
            t = int(rng.integers((t_max + 1) // 2, t_max + 1)) if cfg.variable_length else t_max
            u = rng.standard_normal((t, cfg.n_nuisance))
            x = z[i] * maps.signal_dir[m][None, :] + u @ maps.nuisance[m].T
            x = x + cfg.noise_sigma * rng.standard_normal((t, d))
            if target:
                x = x @ maps.rotation[m].T
                x = x + cfg.target_noise_sigma * rng.standard_normal((t, d))
                xi = rng.standard_normal(maps.corrupt_basis[m].shape[1])
                x = x + cfg.corruption[m] * (maps.corrupt_basis[m] @ xi)[None, :]
                x = x + cfg.offset[m] * math.sqrt(d) * maps.offset_dir[m][None, :]
            feats[m] = x.astype(np.float32)
        y = float(z[i] * cfg.label_scale) if target else float(z[i])
        samples.append(MultimodalSample(f"{prefix}-{i:05d}", feats, y, label_hidden=hidden))
    return samples


def generate_task(cfg: ShiftConfig) -> tuple[DomainDataset, DomainDataset]:
    """Return ``(source, target)`` datasets, each with train/valid/test splits.

    Target train and valid labels are stored but hidden; only the target test
    split exposes its labels.
    """
    cfg.validate()
    maps = _make_maps(cfg, np.random.default_rng([cfg.seed, 0]))
    rs = np.random.default_rng([cfg.seed, 1])
    rt = np.random.default_rng([cfg.seed, 2])
    sizes = {"train": (cfg.n_source, cfg.n_target), "valid": (cfg.n_valid, cfg.n_valid), "test": (cfg.n_test, cfg.n_test)}

    src_splits, tgt_splits = {}, {}
    for split, (ns, nt) in sizes.items():
        src_splits[split] = _draw_split(cfg, maps, ns, rs, target=False, prefix=f"src-{split}", hidden=False)
        tgt_splits[split] = _draw_split(
            cfg, maps, nt, rt, target=True, prefix=f"tgt-{split}", hidden=split != "test"
        )
    lo, hi = cfg.label_range
    source = DomainDataset("synth-source", (lo, hi), dict(cfg.feat_dims), src_splits)
    target = DomainDataset(
        "synth-target", (lo * cfg.label_scale, hi * cfg.label_scale), dict(cfg.feat_dims), tgt_splits
    )
    return source, target


def pooled_features(samples) -> np.ndarray:
    """Time-averaged features of all modalities, concatenated: ``(N, sum(feat_dims))``."""
    return np.stack(
        [np.concatenate([s.features[m].mean(axis=0, dtype=np.float64) for m in MODALITIES]) for s in samples]
    )


class LinearProbe:
    """Least-squares regressor on pooled features, used as a shift oracle."""

    def __init__(self, ridge: float = 0.0):
        self.ridge = ridge
        self.coef: np.ndarray | None = None

    def fit(self, samples, y) -> "LinearProbe":
        x = np.hstack([pooled_features(samples), np.ones((len(samples), 1))])
        y = np.asarray(y, dtype=np.float64)
        if self.ridge:
            a = x.T @ x + self.ridge * np.eye(x.shape[1])
            self.coef = np.linalg.solve(a, x.T @ y)
        else:
            self.coef = np.linalg.lstsq(x, y, rcond=None)[0]
        return self

    def predict(self, samples) -> np.ndarray:
        x = np.hstack([pooled_features(samples), np.ones((len(samples), 1))])
        return x @ self.coef
