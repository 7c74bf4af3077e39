"""Training objectives: frame-wise cross-entropy, truncated MSE smoothing, feature
alignment and their weighted combinations.

Every function accepts either a single window (``p`` of shape ``[C, N]``) or a
batch (``[B, C, N]``); batched losses are computed per window and averaged with
equal weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import torch

from .data import LabelSequence, LogitSequence, ValidationError
from .runtime import as_tensor

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    tau: float = 4.0
    lam: float = 0.15  # weight of the smoothing term
    beta: float = 0.35  # weight of the classification term inside adaptation losses
    detach_prev: bool = True
    class_weights: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError("loss: tau must be positive")
        if self.lam < 0 or self.beta < 0:
            raise ValidationError("loss: lambda and beta must be non-negative")


def _probs(p) -> torch.Tensor:
    if isinstance(p, LogitSequence):
        p = p.values
    p = as_tensor(p)
    return p.unsqueeze(0) if p.dim() == 2 else p


def _labels(y, like: torch.Tensor) -> torch.Tensor:
    if isinstance(y, LabelSequence):
        y = y.labels
    y = torch.as_tensor(np.array(y) if not isinstance(y, torch.Tensor) else y, dtype=torch.long)
    y = y.unsqueeze(0) if y.dim() == 1 else y
    if y.shape != (like.shape[0], like.shape[2]):
        raise ValidationError(f"loss: labels shape {tuple(y.shape)} does not match predictions {tuple(like.shape)}")
    return y


def _log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(p, min=PROB_FLOOR))


def ce_loss(y, p, class_weights=None) -> torch.Tensor:
    """Mean over frames of ``-log p[y_t, t]``."""
    p = _probs(p)
    y = _labels(y, p)
    nll = -_log(p).gather(1, y.unsqueeze(1)).squeeze(1)  # [B, N]
    if class_weights is not None:
        nll = nll * torch.as_tensor(class_weights, dtype=p.dtype)[y]
    return nll.mean(dim=1).mean()


def tmse_loss(p, tau: float = 4.0, detach_prev: bool = True) -> torch.Tensor:
    """Truncated MSE over adjacent-frame log-probability differences.

    Normalised by ``N * C`` with ``N`` the window length.  With ``detach_prev``
    the previous frame is a constant in the backward pass; the value is the
    same either way.
    """
    p = _probs(p)
    b, c, n = p.shape
    if n < 2:
        raise ValidationError("tmse: needs at least 2 frames")
    logp = _log(p)
    prev = logp[..., :-1].detach() if detach_prev else logp[..., :-1]
    delta = torch.abs(logp[..., 1:] - prev)
    clipped = torch.clamp(delta, max=tau)
    return (clipped.square().sum(dim=(1, 2)) / (n * c)).mean()


def cls_loss(y, p, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    loss = ce_loss(y, p, cfg.class_weights)
    if cfg.lam:
        loss = loss + cfg.lam * tmse_loss(p, cfg.tau, cfg.detach_prev)
    return loss


def align_loss(m_prime, m) -> torch.Tensor:
    """Mean squared error over all ``64 * N`` elements; ``m`` is a fixed target."""
    m_prime, m = as_tensor(m_prime), as_tensor(m)
    if m_prime.shape != m.shape:
        raise ValidationError(f"align: shape mismatch {tuple(m_prime.shape)} vs {tuple(m.shape)}")
    return (m_prime - m.detach()).square().mean()


def adaptation_loss(direction: str, m_prime, m_target, y, predictor, cfg: LossConfig = LossConfig()):
    """Alignment plus ``beta``-weighted classification of the adapted features.

    ``predictor`` is the (frozen) unimodal head of the target modality.
    Returns ``(total, align, cls)``.
    """
    if direction not in ("I2R", "R2I"):
        raise ValidationError(f"adaptation: unknown direction {direction!r}")
    al = align_loss(m_prime, m_target)
    if cfg.beta == 0:
        return al, al, torch.zeros_like(al)
    m_prime = as_tensor(m_prime)
    p = predictor(m_prime if m_prime.dim() == 3 else m_prime.unsqueeze(0))
    cl = cls_loss(y, p, cfg)
    return al + cfg.beta * cl, al, cl


def total_loss(components: Mapping[str, torch.Tensor]) -> torch.Tensor:
    """``cls_fuse + R2I + I2R``."""
    missing = {"cls_fuse", "R2I", "I2R"} - set(components)
    if missing:
        raise ValidationError(f"total_loss: missing components {sorted(missing)}")
    return components["cls_fuse"] + components["R2I"] + components["I2R"]
