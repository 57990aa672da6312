"""Regression and contrastive losses.

``ntxent_pair``/``ntxent_batch`` default to the ``"same_view"`` variant: for an
anchor ``h_i`` the positive is its augmented view, and the denominator sums
over the *other* representations of the anchor's own view (``k != i``); the
positive is not part of the denominator, so the loss can be negative. The
``"simclr"`` variant is the usual 2K-1 candidate formulation.
"""

from __future__ import annotations

import warnings

import torch

VARIANTS = ("same_view", "simclr")


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    pred, target = torch.as_tensor(pred), torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.numel() == 0:
        raise ValueError("l1_loss of empty input")
    return (pred - target).abs().mean()


def _normalize(x: torch.Tensor) -> torch.Tensor:
    norms = x.norm(dim=-1, keepdim=True)
    zero = norms == 0
    if bool(zero.any()):
        warnings.warn("zero-norm representation; its cosine similarities are set to 0", RuntimeWarning, stacklevel=3)
        norms = torch.where(zero, torch.ones_like(norms), norms)
    return x / norms


def cosine_sim(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """``u.v / (|u| |v|)``; 0 (with a warning) if either vector is zero."""
    u, v = torch.as_tensor(u), torch.as_tensor(v)
    return (_normalize(u) * _normalize(v)).sum(-1)


def _check(h: torch.Tensor, h_aug: torch.Tensor, tau: float) -> None:
    if h.ndim != 2 or h.shape != h_aug.shape:
        raise ValueError(f"H and H_aug must be equal-shape 2-D, got {tuple(h.shape)} and {tuple(h_aug.shape)}")
    if h.shape[0] < 2:
        raise ValueError("contrastive loss needs at least 2 samples per batch")
    if not tau > 0:
        raise ValueError("temperature must be > 0")


def ntxent_pair(i: int, direction: str, h: torch.Tensor, h_aug: torch.Tensor, tau: float = 0.5) -> torch.Tensor:
    """Loss of one positive pair under the same-view variant.

    ``direction="orig"`` anchors on ``h[i]`` with negatives ``h[k]``;
    ``direction="aug"`` anchors on ``h_aug[i]`` with negatives ``h_aug[k]``.
    """
    _check(h, h_aug, tau)
    if direction == "aug":
        h, h_aug = h_aug, h
    elif direction != "orig":
        raise ValueError(f"direction must be 'orig' or 'aug', got {direction!r}")
    z, za = _normalize(h), _normalize(h_aug)
    pos = (z[i] * za[i]).sum() / tau
    others = torch.cat([z[:i], z[i + 1 :]])
    neg = others @ z[i] / tau
    return torch.logsumexp(neg, dim=0) - pos


def _same_view_terms(z: torch.Tensor, za: torch.Tensor, tau: float) -> torch.Tensor:
    k = z.shape[0]
    pos = (z * za).sum(-1) / tau
    eye = torch.eye(k, dtype=torch.bool, device=z.device)
    neg = (z @ z.T / tau).masked_fill(eye, float("-inf"))
    return torch.logsumexp(neg, dim=1) - pos


def ntxent_batch(h: torch.Tensor, h_aug: torch.Tensor, tau: float = 0.5, variant: str = "same_view") -> torch.Tensor:
    """Mean of both directional pair losses over the batch."""
    _check(h, h_aug, tau)
    z, za = _normalize(h), _normalize(h_aug)
    k = z.shape[0]
    if variant == "same_view":
        return (_same_view_terms(z, za, tau).sum() + _same_view_terms(za, z, tau).sum()) / (2 * k)
    if variant == "simclr":
        allz = torch.cat([z, za])
        sim = (allz @ allz.T / tau).masked_fill(torch.eye(2 * k, dtype=torch.bool, device=z.device), float("-inf"))
        partner = torch.cat([torch.arange(k, 2 * k), torch.arange(0, k)]).to(z.device)
        pos = sim[torch.arange(2 * k, device=z.device), partner]
        return (torch.logsumexp(sim, dim=1) - pos).mean()
    raise ValueError(f"unknown ntxent variant {variant!r}; expected one of {VARIANTS}")
