import pytest
import torch

from mmtcn.backbone import DESK_RADAR, ImuEncoder, RadarEncoder, TcnConfig
from mmtcn.data import ValidationError
from mmtcn.losses import align_loss
from mmtcn.mae import MaeConfig, build_mae, mae_i2r_forward, mae_like, mae_r2i_forward


@pytest.mark.parametrize("n", [1, 7, 1000])
def test_mae_shapes(n):
    i2r = build_mae(MaeConfig("I2R", TcnConfig(), 12))
    r2i = build_mae(MaeConfig("R2I", DESK_RADAR))
    assert mae_i2r_forward(torch.randn(12, n), i2r).shape == (64, n)
    assert mae_r2i_forward(torch.rand(32, 64, n), r2i).shape == (64, n)


def test_mae_config_validation():
    with pytest.raises(ValidationError):
        MaeConfig("X2Y", TcnConfig())
    with pytest.raises(ValidationError):
        MaeConfig("R2I", TcnConfig())


def test_mae_like_is_fresh_but_shares_input_statistics():
    torch.manual_seed(0)
    src = ImuEncoder(12)
    with torch.no_grad():
        src.norm.mean.fill_(2.0)
        src.norm.std.fill_(3.0)
    mae = mae_like(src)
    assert mae.spec() == src.spec()
    assert torch.equal(mae.norm.mean, src.norm.mean) and torch.equal(mae.norm.std, src.norm.std)
    assert not torch.equal(mae.tcn.input_proj.weight, src.tcn.input_proj.weight)
    assert isinstance(mae_like(RadarEncoder(DESK_RADAR)), RadarEncoder)


def test_i2r_learns_to_beat_zero_predictor():
    # adapted features should come closer to the target than the trivial all-zero guess
    torch.manual_seed(0)
    cfg = TcnConfig(2, 3, 16, (1, 2))
    target_enc = ImuEncoder(3, cfg)
    mae = ImuEncoder(3, cfg)
    x_src = torch.randn(8, 3, 50)
    x_tgt = torch.roll(x_src, 1, dims=1) * 0.5
    with torch.no_grad():
        target = target_enc(x_tgt)
    x_train, x_test = x_src[:6], x_src[6:]
    opt = torch.optim.Adam(mae.parameters(), lr=5e-3)
    for _ in range(300):
        loss = align_loss(mae(x_train), target[:6])
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        held_out = align_loss(mae(x_test), target[6:]).item()
        zero = align_loss(torch.zeros_like(target[6:]), target[6:]).item()
    assert held_out < zero
