"""Modality adaptation encoders: predict one modality's intermediate features from the other's input.

I2R consumes IMU data and imitates the radar encoder's features; R2I consumes
radar cubes and imitates the IMU encoder's features.  Each adapter reuses the
*source* modality's encoder architecture but is freshly initialised.
"""

from __future__ import annotations

from dataclasses import dataclass

from torch import nn

from .backbone import ImuEncoder, Radar3dConfig, RadarEncoder, TcnConfig, build_encoder, msfe_imu_forward, msfe_radar_forward
from .data import ValidationError

DIRECTIONS = ("I2R", "R2I")


@dataclass(frozen=True)
class MaeConfig:
    direction: str
    architecture: TcnConfig | Radar3dConfig
    in_channels: int = 12  # IMU channels, I2R only

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"mae: direction must be one of {DIRECTIONS}")
        expected = TcnConfig if self.direction == "I2R" else Radar3dConfig
        if not isinstance(self.architecture, expected):
            raise ValidationError(f"mae: {self.direction} needs a {expected.__name__}")


def build_mae(cfg: MaeConfig) -> nn.Module:
    if cfg.direction == "I2R":
        return ImuEncoder(cfg.in_channels, cfg.architecture)
    return RadarEncoder(cfg.architecture)


def mae_like(source_encoder: nn.Module) -> nn.Module:
    """Fresh adapter with the same architecture as ``source_encoder`` (weights are not copied)."""
    mae = build_encoder(source_encoder.spec())
    # input statistics describe the source data, not learned weights
    mae.norm.load_state_dict(source_encoder.norm.state_dict())
    return mae


def mae_i2r_forward(x_imu, params: ImuEncoder):
    """IMU ``[C, N]`` -> reconstructed radar features ``[64, N]``."""
    return msfe_imu_forward(x_imu, params)


def mae_r2i_forward(x_radar, params: RadarEncoder):
    """Radar ``[32, 64, N]`` -> reconstructed IMU features ``[64, N]``."""
    return msfe_radar_forward(x_radar, params)
