"""Early- and late-fusion transformer regressors.

The model splits into an encoder producing a pooled representation ``h`` and
a small feed-forward head mapping ``h`` to one scalar. All normalisation is
layer norm; its scale and shift parameters form the ``norm_affine`` partition
that test-time adaptation is allowed to update.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import MODALITIES, Batch


@dataclass
class EncoderConfig:
    fusion: str = "early"
    model_dim: int = 32
    n_layers: int = 2
    n_heads: int = 4
    feedforward_dim: int = 64
    dropout: float = 0.0

    def validate(self) -> None:
        if self.fusion not in ("early", "late"):
            raise ValueError(f"fusion must be 'early' or 'late', got {self.fusion!r}")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.model_dim < 1 or self.n_heads < 1 or self.model_dim % self.n_heads:
            raise ValueError(f"model_dim ({self.model_dim}) must be divisible by n_heads ({self.n_heads})")
        if self.feedforward_dim < 1:
            raise ValueError("feedforward_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown EncoderConfig field(s): {sorted(unknown)}")
        return cls(**d)


def sinusoidal_positions(length: int, dim: int, dtype: torch.dtype) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe.to(dtype)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        hd = d // self.n_heads
        q, k, v = self.qkv(x).view(b, t, 3, self.n_heads, hd).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        y = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(y)


class EncoderBlock(nn.Module):
    """Pre-norm transformer block (two layer norms)."""

    def __init__(self, dim: int, n_heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.GELU(), nn.Dropout(dropout), nn.Linear(ff_dim, dim))
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = x + self.drop(self.attn(self.norm1(x), mask))
        return x + self.drop(self.ff(self.norm2(x)))


class EncoderStack(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.model_dim, cfg.n_heads, cfg.feedforward_dim, cfg.dropout) for _ in range(cfg.n_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.model_dim)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, mask)
        return self.final_norm(x)


class Projection(nn.Module):
    def __init__(self, in_dim: int, dim: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, dim)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(self.linear(x))


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    w = mask.to(x.dtype)[..., None]
    return (x * w).sum(dim=1) / w.sum(dim=1)


class FusionModel(nn.Module):
    """Encoder ``M`` (early or late fusion) followed by a scalar head ``F``."""

    def __init__(self, cfg: EncoderConfig, feat_dims: Mapping[str, int]):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.feat_dims = {m: int(feat_dims[m]) for m in MODALITIES}
        d = cfg.model_dim
        self.proj = nn.ModuleDict({m: Projection(self.feat_dims[m], d) for m in MODALITIES})
        if cfg.fusion == "early":
            self.type_embed = nn.Parameter(torch.zeros(len(MODALITIES), d))
            self.encoder = EncoderStack(cfg)
            self.rep_dim = d
        else:
            self.encoders = nn.ModuleDict({m: EncoderStack(cfg) for m in MODALITIES})
            self.rep_dim = len(MODALITIES) * d
        self.head = nn.Sequential(
            nn.LayerNorm(self.rep_dim), nn.Linear(self.rep_dim, d), nn.GELU(), nn.Linear(d, 1)
        )

    def _check(self, batch: Batch) -> None:
        for m in MODALITIES:
            got = batch.features[m].shape[-1]
            if got != self.feat_dims[m]:
                raise ValueError(f"modality {m!r}: batch feat_dim {got} != model feat_dim {self.feat_dims[m]}")

    def _embed(self, batch: Batch, m: str) -> torch.Tensor:
        x = self.proj[m](batch.features[m])
        return x + sinusoidal_positions(x.shape[1], x.shape[2], x.dtype)

    def encode(self, batch: Batch) -> torch.Tensor:
        self._check(batch)
        if self.cfg.fusion == "early":
            xs = [self._embed(batch, m) + self.type_embed[i] for i, m in enumerate(MODALITIES)]
            x = torch.cat(xs, dim=1)
            mask = torch.cat([batch.masks[m] for m in MODALITIES], dim=1)
            return masked_mean(self.encoder(x, mask), mask)
        pooled = []
        for m in MODALITIES:
            mask = batch.masks[m]
            pooled.append(masked_mean(self.encoders[m](self._embed(batch, m), mask), mask))
        return torch.cat(pooled, dim=-1)

    def head_forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.head(h).squeeze(-1)

    def forward(self, batch: Batch) -> torch.Tensor:
        return self.head_forward(self.encode(batch))


def init_model(cfg: EncoderConfig, feat_dims: Mapping[str, int], seed: int) -> FusionModel:
    """Build a model with deterministic initialisation; global RNG state is untouched."""
    cfg.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = FusionModel(cfg, feat_dims)
        if cfg.fusion == "early":
            nn.init.normal_(model.type_embed, std=0.02)
    return model


def encode(model: FusionModel, batch: Batch) -> torch.Tensor:
    return model.encode(batch)


def predict(model: FusionModel, batch: Batch) -> torch.Tensor:
    return model(batch)


def partition_parameters(model: nn.Module) -> tuple[dict[str, nn.Parameter], dict[str, nn.Parameter]]:
    """Split named parameters into ``(norm_affine, other)``."""
    norm_ids = set()
    for module in model.modules():
        if isinstance(module, (nn.LayerNorm, nn.GroupNorm, nn.modules.batchnorm._NormBase)):
            norm_ids.update(id(p) for p in module.parameters(recurse=False))
    norm, other = {}, {}
    for name, p in model.named_parameters():
        (norm if id(p) in norm_ids else other)[name] = p
    return norm, other


def save_checkpoint(model: FusionModel, directory: str | os.PathLike) -> Path:
    """Write ``checkpoint.json`` (config + parameter table) and ``checkpoint.f32``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table, chunks, offset = [], [], 0
    for name, p in model.state_dict().items():
        arr = p.detach().cpu().numpy().astype("<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.ravel())
        offset += arr.size
    meta = {"encoder": asdict(model.cfg), "feat_dims": model.feat_dims, "params": table}
    (directory / "checkpoint.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    blob = np.concatenate(chunks) if chunks else np.zeros(0, "<f4")
    (directory / "checkpoint.f32").write_bytes(blob.tobytes())
    return directory


def load_checkpoint(directory: str | os.PathLike) -> FusionModel:
    directory = Path(directory)
    meta = json.loads((directory / "checkpoint.json").read_text(encoding="utf-8"))
    model = FusionModel(EncoderConfig.from_dict(meta["encoder"]), meta["feat_dims"])
    blob = np.frombuffer((directory / "checkpoint.f32").read_bytes(), dtype="<f4")
    expected = model.state_dict()
    state = {}
    for entry in meta["params"]:
        name = entry["name"]
        if name not in expected:
            raise ValueError(f"checkpoint parameter {name!r} does not exist in the model")
        end = entry["offset"] + entry["count"]
        if end > blob.size:
            raise ValueError(f"checkpoint parameter {name!r} runs past the end of the blob")
        arr = blob[entry["offset"] : end].reshape(entry["shape"])
        state[name] = torch.from_numpy(arr.astype(np.float32))
    model.load_state_dict(state, strict=True)
    return model
