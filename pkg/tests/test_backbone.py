import numpy as np
import pytest
import torch

from helpers import fd_relative_error
from mmtcn.backbone import (
    DESK_RADAR,
    FEATURE_DIM,
    ImuEncoder,
    Predictor,
    Radar3dConfig,
    RadarEncoder,
    TcnConfig,
    build_encoder,
    fit_imu_norm,
    msfe_imu_forward,
    msfe_radar_forward,
    predictor_forward,
)
from mmtcn.data import ValidationError

TINY_RADAR = Radar3dConfig(stages=((2, 3, (2, 2, 1)), (3, 3, (2, 2, 1))), temporal=TcnConfig(2, 3, 4, (1, 2)))


@pytest.mark.parametrize("n", [1, 7, 1000])
def test_imu_encoder_keeps_length(n):
    enc = ImuEncoder(12)
    assert msfe_imu_forward(torch.randn(12, n), enc).shape == (FEATURE_DIM, n)


@pytest.mark.parametrize("n", [1, 7, 1000])
def test_radar_encoder_keeps_length(n):
    enc = RadarEncoder(DESK_RADAR)
    assert msfe_radar_forward(torch.rand(32, 64, n), enc).shape == (FEATURE_DIM, n)


def test_paper_radar_stack_keeps_length():
    enc = RadarEncoder()
    assert msfe_radar_forward(torch.rand(32, 64, 7), enc).shape == (FEATURE_DIM, 7)


def test_predictor_is_distribution():
    p = predictor_forward(torch.randn(64, 9), Predictor())
    assert p.shape == (3, 9)
    torch.testing.assert_close(p.sum(0), torch.ones(9))
    assert p.min() > 0


def test_receptive_field():
    assert TcnConfig().receptive_field == 1 + 2 * (1 + 2 + 4 + 8 + 16)


def test_receptive_field_is_realised(float64):
    # impulse response of the TCN spans exactly the receptive field
    cfg = TcnConfig(3, 3, 4, (1, 2, 4))
    enc = ImuEncoder(1, cfg)
    with torch.no_grad():
        for p in enc.parameters():
            p.copy_(torch.rand_like(p) + 0.1)
    n = 41
    base = torch.zeros(1, 1, n)
    bumped = base.clone()
    bumped[0, 0, n // 2] = 1.0
    diff = (enc(bumped) - enc(base)).abs().sum(1)[0]
    support = torch.nonzero(diff > 1e-12).flatten()
    assert support.max() - support.min() + 1 == cfg.receptive_field


def test_non_causal_config_needs_odd_kernel():
    with pytest.raises(ValidationError):
        TcnConfig(kernel_size=4)
    with pytest.raises(ValidationError):
        TcnConfig(n_blocks=3)


def test_encoder_rejects_wrong_channels():
    with pytest.raises(ValidationError):
        msfe_imu_forward(torch.randn(6, 10), ImuEncoder(12))
    with pytest.raises(ValidationError):
        RadarEncoder(DESK_RADAR)(torch.rand(32, 64, 5))


def test_build_encoder_round_trip():
    for enc in (ImuEncoder(6), RadarEncoder(DESK_RADAR)):
        rebuilt = build_encoder(enc.spec())
        assert rebuilt.spec() == enc.spec()
        assert [p.shape for p in rebuilt.parameters()] == [p.shape for p in enc.parameters()]
    with pytest.raises(ValidationError):
        build_encoder({"arch": "lstm"})


def test_input_norm_fit():
    enc = ImuEncoder(2, TcnConfig(1, 3, 4, (1,)))
    data = np.array([[1.0, 3.0, 5.0], [2.0, 2.0, 2.0]])
    fit_imu_norm(enc, [data])
    assert torch.allclose(enc.norm.mean, torch.tensor([3.0, 2.0]))
    assert enc.norm.std[1] == 1.0  # constant channel is left unscaled


def test_imu_encoder_gradient(float64):
    torch.manual_seed(0)
    enc = ImuEncoder(3, TcnConfig(2, 3, 4, (1, 2)))
    x = torch.randn(1, 3, 8)
    assert fd_relative_error(lambda inp: enc(inp).square().mean(), [x]) < 1e-4


def test_radar_encoder_gradient(float64):
    torch.manual_seed(1)
    enc = RadarEncoder(TINY_RADAR)
    x = torch.rand(1, 4, 4, 5)
    assert fd_relative_error(lambda inp: enc(inp).sin().sum(), [x]) < 1e-4
