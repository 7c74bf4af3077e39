"""Feature fusion: element-wise addition, channel concatenation, decision averaging and
symmetric cross-modal attention (CMA)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .backbone import FEATURE_DIM, Predictor
from .data import LogitSequence, ValidationError
from .runtime import as_tensor

FUSION_METHODS = ("add", "concat", "decision", "cma")


@dataclass(frozen=True)
class CmaConfig:
    n_heads: int = 8
    head_dim: int = 8
    model_dim: int = FEATURE_DIM

    def __post_init__(self):
        if self.n_heads * self.head_dim != self.model_dim:
            raise ValidationError(
                f"cma: n_heads*head_dim = {self.n_heads * self.head_dim} != model_dim {self.model_dim}"
            )


def _check_pair(m_r: torch.Tensor, m_i: torch.Tensor, same_channels: bool = True) -> None:
    if m_r.shape[-1] != m_i.shape[-1]:
        raise ValidationError(f"fusion: length mismatch {m_r.shape[-1]} vs {m_i.shape[-1]}")
    if same_channels and m_r.shape != m_i.shape:
        raise ValidationError(f"fusion: shape mismatch {tuple(m_r.shape)} vs {tuple(m_i.shape)}")


def fuse_add(m_r, m_i) -> torch.Tensor:
    m_r, m_i = as_tensor(m_r), as_tensor(m_i)
    _check_pair(m_r, m_i)
    return m_r + m_i


def fuse_concat(m_r, m_i) -> torch.Tensor:
    """Stack channels with the radar features first."""
    m_r, m_i = as_tensor(m_r), as_tensor(m_i)
    _check_pair(m_r, m_i, same_channels=False)
    return torch.cat([m_r, m_i], dim=-2)


def fuse_decision(p_r, p_i):
    """Per-frame mean of two probability sequences."""
    if isinstance(p_r, LogitSequence) or isinstance(p_i, LogitSequence):
        for p in (p_r, p_i):
            if not (isinstance(p, LogitSequence) and p.is_probability):
                raise ValidationError("fuse_decision: inputs must be probability sequences")
        if len(p_r) != len(p_i):
            raise ValidationError(f"fuse_decision: length mismatch {len(p_r)} vs {len(p_i)}")
        return LogitSequence(0.5 * (p_r.values + p_i.values), is_probability=True)
    p_r, p_i = as_tensor(p_r), as_tensor(p_i)
    _check_pair(p_r, p_i)
    return 0.5 * (p_r + p_i)


def attention(q, k, v, n_heads: int, head_dim: int, return_weights: bool = False):
    """Scaled dot-product attention over time.

    ``q``/``k``/``v`` are ``[B, N, n_heads*head_dim]``; softmax runs over keys.
    """
    b, n_q, _ = q.shape
    n_k = k.shape[1]
    q = q.view(b, n_q, n_heads, head_dim).transpose(1, 2)
    k = k.view(b, n_k, n_heads, head_dim).transpose(1, 2)
    v = v.view(b, n_k, n_heads, head_dim).transpose(1, 2)
    if not return_weights:
        # fused kernel: same result, no N x N weight tensor kept for backward
        out = F.scaled_dot_product_attention(q, k, v)
        return out.transpose(1, 2).reshape(b, n_q, n_heads * head_dim)
    weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(head_dim), dim=-1)
    out = (weights @ v).transpose(1, 2).reshape(b, n_q, n_heads * head_dim)
    return out, weights


class CrossAttention(nn.Module):
    """One direction: queries from ``target`` features, keys and values from ``source`` features."""

    def __init__(self, cfg: CmaConfig = CmaConfig()):
        super().__init__()
        self.cfg = cfg
        inner = cfg.n_heads * cfg.head_dim
        self.q = nn.Linear(cfg.model_dim, inner)
        self.k = nn.Linear(cfg.model_dim, inner)
        self.v = nn.Linear(cfg.model_dim, inner)
        self.out = nn.Linear(inner, cfg.model_dim)

    def forward(self, target, source, return_weights: bool = False):
        t, s = target.transpose(1, 2), source.transpose(1, 2)  # [B, N, D]
        res = attention(self.q(t), self.k(s), self.v(s), self.cfg.n_heads, self.cfg.head_dim, return_weights)
        out, weights = res if return_weights else (res, None)
        out = self.out(out).transpose(1, 2)
        return (out, weights) if return_weights else out


class CrossModalAttention(nn.Module):
    """Symmetric CMA: ``concat(att_{I->R}, att_{R->I})`` along channels, ``[B, 2D, N]``."""

    def __init__(self, cfg: CmaConfig = CmaConfig()):
        super().__init__()
        self.cfg = cfg
        self.imu_to_radar = CrossAttention(cfg)  # radar queries attend over IMU keys/values
        self.radar_to_imu = CrossAttention(cfg)

    def forward(self, m_r, m_i):
        _check_pair(m_r, m_i)
        if m_r.shape[1] != self.cfg.model_dim:
            raise ValidationError(f"cma: expected {self.cfg.model_dim} channels, got {m_r.shape[1]}")
        return torch.cat([self.imu_to_radar(m_r, m_i), self.radar_to_imu(m_i, m_r)], dim=1)


def cma_forward(m_r, m_i, params: CrossModalAttention, cfg: CmaConfig | None = None) -> torch.Tensor:
    """Unbatched convenience wrapper: ``[D, N] x [D, N] -> [2D, N]``."""
    if cfg is not None and cfg != params.cfg:
        raise ValidationError(f"cma: config {cfg} does not match parameters {params.cfg}")
    dtype = next(params.parameters()).dtype
    m_r, m_i = as_tensor(m_r, dtype), as_tensor(m_i, dtype)
    unbatched = m_r.dim() == 2
    if unbatched:
        m_r, m_i = m_r.unsqueeze(0), m_i.unsqueeze(0)
    out = params(m_r, m_i)
    return out[0] if unbatched else out


class FusionHead(nn.Module):
    """Fusion module plus multimodal predictor.  ``decision`` has no parameters of its own."""

    def __init__(self, method: str = "cma", cma: CmaConfig = CmaConfig()):
        super().__init__()
        if method not in FUSION_METHODS:
            raise ValidationError(f"fusion: unknown method {method!r}; choose from {FUSION_METHODS}")
        self.method = method
        self.cma = CrossModalAttention(cma) if method == "cma" else None
        width = {"add": cma.model_dim, "concat": 2 * cma.model_dim, "cma": 2 * cma.model_dim}.get(method)
        self.predictor = Predictor(width) if width else None

    def forward(self, m_r, m_i, p_r=None, p_i=None):
        """Fused class probabilities; ``p_r``/``p_i`` are only consulted for ``decision``."""
        if self.method == "decision":
            return fuse_decision(p_r, p_i)
        if self.method == "add":
            fused = fuse_add(m_r, m_i)
        elif self.method == "concat":
            fused = fuse_concat(m_r, m_i)
        else:
            fused = self.cma(m_r, m_i)
        return self.predictor(fused)

