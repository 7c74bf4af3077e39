"""Modality-specific feature encoders (1D-TCN for IMU, 3D-TCN for radar) and predictor heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import N_CLASSES, ValidationError
from .runtime import as_tensor

FEATURE_DIM = 64


@dataclass(frozen=True)
class TcnConfig:
    n_blocks: int = 5
    kernel_size: int = 3
    channels: int = FEATURE_DIM
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16)
    causal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if len(self.dilations) != self.n_blocks:
            raise ValidationError(f"tcn: {self.n_blocks} blocks but {len(self.dilations)} dilations")
        if not self.causal and self.kernel_size % 2 == 0:
            raise ValidationError("tcn: non-causal same padding needs an odd kernel")

    @property
    def receptive_field(self) -> int:
        # one dilated convolution per residual block
        return 1 + (self.kernel_size - 1) * sum(self.dilations)


@dataclass(frozen=True)
class Radar3dConfig:
    """3D conv stages as ``(out_channels, kernel, (pool_range, pool_doppler, pool_time))``."""

    stages: tuple = (
        (16, 3, (2, 2, 1)),
        (32, 3, (2, 2, 1)),
        (32, 3, (2, 2, 1)),
        (64, 3, (2, 2, 1)),
    )
    input_pool: tuple[int, int] = (1, 1)
    temporal: TcnConfig = field(default_factory=TcnConfig)

    def __post_init__(self):
        stages = tuple((int(c), int(k), tuple(int(p) for p in pool)) for c, k, pool in self.stages)
        for _, k, pool in stages:
            if k % 2 == 0:
                raise ValidationError("radar3d: kernels must be odd to preserve length")
            if pool[2] != 1:
                raise ValidationError("radar3d: pooling must not touch the time axis")
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "input_pool", tuple(int(p) for p in self.input_pool))
        if isinstance(self.temporal, dict):
            object.__setattr__(self, "temporal", TcnConfig(**self.temporal))


# Light radar stack used for the desk-scale CPU experiment.
DESK_RADAR = Radar3dConfig(stages=((4, 3, (2, 2, 1)), (8, 3, (2, 2, 1)), (16, 3, (2, 2, 1))), input_pool=(4, 4))


class InputNorm(nn.Module):
    """Fixed affine standardisation fitted on training data."""

    def __init__(self, n_channels: int):
        super().__init__()
        self.register_buffer("mean", torch.zeros(n_channels))
        self.register_buffer("std", torch.ones(n_channels))

    @torch.no_grad()
    def fit(self, mean, std):
        self.mean.copy_(as_tensor(mean, self.mean.dtype).reshape(self.mean.shape))
        std = as_tensor(std, self.std.dtype).reshape(self.std.shape)
        self.std.copy_(torch.where(std > 1e-8, std, torch.ones_like(std)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shape = (1, -1) + (1,) * (x.dim() - 2)
        return (x - self.mean.view(shape)) / self.std.view(shape)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, kernel_size: int, dilation: int, causal: bool, bias: bool = True):
        super().__init__()
        self.pad = (dilation * (kernel_size - 1), 0) if causal else (dilation * (kernel_size - 1) // 2,) * 2
        self.conv = nn.Conv1d(channels, channels, kernel_size, dilation=dilation, bias=bias)
        self.pointwise = nn.Conv1d(channels, channels, 1, bias=bias)

    def forward(self, x):
        h = F.relu(self.conv(F.pad(x, self.pad)))
        return x + self.pointwise(h)


class Tcn1d(nn.Module):
    """Pointwise input projection followed by residual dilated blocks; ``[B, C, N] -> [B, 64, N]``."""

    def __init__(self, in_channels: int, cfg: TcnConfig = TcnConfig(), bias: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.cfg = cfg
        self.input_proj = nn.Conv1d(in_channels, cfg.channels, 1, bias=bias)
        self.blocks = nn.ModuleList(
            ResidualBlock(cfg.channels, cfg.kernel_size, d, cfg.causal, bias) for d in cfg.dilations
        )

    def forward(self, x):
        h = self.input_proj(x)
        for block in self.blocks:
            h = block(h)
        return h


class ImuEncoder(nn.Module):
    arch = "tcn1d"

    def __init__(self, in_channels: int = 12, cfg: TcnConfig = TcnConfig(), bias: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.cfg = cfg
        self.norm = InputNorm(in_channels)
        self.tcn = Tcn1d(in_channels, cfg, bias)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValidationError(f"imu encoder expects {self.in_channels} channels, got {x.shape[1]}")
        return self.tcn(self.norm(x))

    def spec(self) -> dict:
        return {"arch": self.arch, "in_channels": self.in_channels, "tcn": asdict(self.cfg)}


class RadarEncoder(nn.Module):
    """Conv3d/ReLU/MaxPool stages over (range, doppler, time), spatial mean, then a temporal TCN."""

    arch = "tcn3d"

    def __init__(self, cfg: Radar3dConfig = Radar3dConfig(), bias: bool = True):
        super().__init__()
        self.cfg = cfg
        self.norm = InputNorm(1)
        convs, c = [], 1
        for out, k, _ in cfg.stages:
            convs.append(nn.Conv3d(c, out, k, padding=k // 2, bias=bias))
            c = out
        self.convs = nn.ModuleList(convs)
        self.tcn = Tcn1d(c, cfg.temporal, bias)

    def forward(self, x):
        if x.dim() != 4:
            raise ValidationError(f"radar encoder expects [B, range, doppler, N], got {tuple(x.shape)}")
        h = self.norm(x.unsqueeze(1))
        if self.cfg.input_pool != (1, 1):
            h = F.avg_pool3d(h, self.cfg.input_pool + (1,))
        for conv, (_, _, pool) in zip(self.convs, self.cfg.stages):
            h = F.relu(conv(h))
            kernel = (min(pool[0], h.shape[2]), min(pool[1], h.shape[3]), 1)
            if kernel != (1, 1, 1):
                h = F.max_pool3d(h, kernel)
        h = h.mean(dim=(2, 3))
        return self.tcn(h)

    def spec(self) -> dict:
        return {"arch": self.arch, "radar3d": asdict(self.cfg)}


class Predictor(nn.Module):
    """Pointwise linear map to class scores with a per-frame softmax."""

    def __init__(self, in_channels: int = FEATURE_DIM, n_classes: int = N_CLASSES, bias: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.proj = nn.Conv1d(in_channels, n_classes, 1, bias=bias)

    def forward(self, m):
        return torch.softmax(self.proj(m), dim=1)

    def spec(self) -> dict:
        return {"arch": "pointwise", "in_channels": self.in_channels}


def _tcn_from_dict(d: dict) -> TcnConfig:
    d = dict(d)
    d["dilations"] = tuple(d["dilations"])
    return TcnConfig(**d)


def _radar_from_dict(d: dict) -> Radar3dConfig:
    stages = tuple((c, k, tuple(p)) for c, k, p in d["stages"])
    return Radar3dConfig(stages=stages, input_pool=tuple(d["input_pool"]), temporal=_tcn_from_dict(d["temporal"]))


ENCODERS = {
    "tcn1d": lambda spec: ImuEncoder(spec["in_channels"], _tcn_from_dict(spec["tcn"])),
    "tcn3d": lambda spec: RadarEncoder(_radar_from_dict(spec["radar3d"])),
}


def build_encoder(spec: dict) -> nn.Module:
    """Rebuild an encoder from its ``spec()`` dict; other backbones register in ``ENCODERS``."""
    try:
        factory = ENCODERS[spec["arch"]]
    except KeyError:
        raise ValidationError(f"unknown encoder architecture {spec.get('arch')!r}") from None
    return factory(spec)


def _unbatched(module: nn.Module, x, expect_rank: int) -> torch.Tensor:
    dtype = next(module.parameters()).dtype
    x = as_tensor(x, dtype)
    if x.dim() == expect_rank:
        x = x.unsqueeze(0)
    return x


def msfe_imu_forward(x, encoder: ImuEncoder) -> torch.Tensor:
    """IMU ``[C, N]`` (or batched) -> features ``[64, N]``."""
    xb = _unbatched(encoder, x, 2)
    out = encoder(xb)
    return out[0] if as_tensor(x).dim() == 2 else out


def msfe_radar_forward(x, encoder: RadarEncoder) -> torch.Tensor:
    """Radar cube ``[32, 64, N]`` (or batched) -> features ``[64, N]``."""
    xb = _unbatched(encoder, x, 3)
    out = encoder(xb)
    return out[0] if as_tensor(x).dim() == 3 else out


def predictor_forward(m, predictor: Predictor) -> torch.Tensor:
    mb = _unbatched(predictor, m, 2)
    out = predictor(mb)
    return out[0] if as_tensor(m).dim() == 2 else out


def fit_imu_norm(encoder: ImuEncoder, arrays) -> None:
    cat = np.concatenate([np.asarray(a, dtype=np.float64) for a in arrays], axis=1)
    encoder.norm.fit(cat.mean(axis=1), cat.std(axis=1))


def fit_radar_norm(encoder: RadarEncoder, arrays) -> None:
    total = count = sq = 0.0
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)
        total += a.sum()
        sq += np.square(a).sum()
        count += a.size
    mean = total / count
    encoder.norm.fit([mean], [np.sqrt(max(sq / count - mean**2, 0.0))])
