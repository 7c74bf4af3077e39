import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mmtcn.backbone import Predictor
from mmtcn.data import LabelSequence, LogitSequence, ValidationError
from mmtcn.losses import LossConfig, adaptation_loss, align_loss, ce_loss, cls_loss, tmse_loss, total_loss


def _softmax(rng, c, n):
    z = rng.standard_normal((c, n))
    e = np.exp(z - z.max(0))
    return e / e.sum(0)


def test_ce_uniform_is_log3():
    p = torch.full((3, 17), 1 / 3, dtype=torch.float64)
    y = np.random.default_rng(0).integers(0, 3, 17)
    assert abs(ce_loss(y, p).item() - math.log(3)) < 1e-9


def test_ce_hand_case():
    p = torch.tensor([[0.5, 0.75], [0.5, 0.25], [0.0, 0.0]], dtype=torch.float64)
    assert abs(ce_loss([0, 1], p).item() - 1.5 * math.log(2)) < 1e-12


def test_ce_perfect_is_zero():
    y = np.array([0, 1, 2, 2])
    p = np.eye(3)[y].T
    assert ce_loss(y, torch.tensor(p)).item() == 0.0


def test_ce_accepts_domain_types():
    p = LogitSequence(np.full((3, 5), 1 / 3), is_probability=True)
    y = LabelSequence(np.zeros(5, dtype=int))
    assert abs(ce_loss(y, p).item() - math.log(3)) < 1e-9


def test_ce_label_shape_mismatch():
    with pytest.raises(ValidationError):
        ce_loss([0, 1], torch.full((3, 3), 1 / 3))


def _two_frame(log_a, log_b):
    p = torch.ones(1, 3, 2, dtype=torch.float64) * 0.3
    p[0, 0, 0], p[0, 0, 1] = math.exp(log_a), math.exp(log_b)
    return p


def test_tmse_hand_contributions():
    # one class changes between the two frames; loss * N * C is that class's contribution
    assert abs(tmse_loss(_two_frame(-1, -3)).item() * 6 - 4.0) < 1e-9
    assert abs(tmse_loss(_two_frame(-1, -6)).item() * 6 - 16.0) < 1e-9


def test_tmse_constant_is_zero():
    p = torch.tensor(_softmax(np.random.default_rng(1), 3, 1)).repeat(1, 9)
    assert tmse_loss(p).item() == 0.0


def test_tmse_large_tau_is_plain_mse():
    p = torch.tensor(_softmax(np.random.default_rng(2), 3, 6))
    d = torch.diff(torch.log(p), dim=1)
    assert abs(tmse_loss(p, tau=1e9).item() - d.square().sum().item() / 18) < 1e-12


def test_tmse_needs_two_frames():
    with pytest.raises(ValidationError):
        tmse_loss(torch.full((3, 1), 1 / 3))


def test_tmse_detach_keeps_value():
    p = torch.tensor(_softmax(np.random.default_rng(3), 3, 8))
    assert tmse_loss(p, detach_prev=True).item() == tmse_loss(p, detach_prev=False).item()


def test_cls_recomposition():
    rng = np.random.default_rng(4)
    p = torch.tensor(_softmax(rng, 3, 12))
    y = rng.integers(0, 3, 12)
    expect = ce_loss(y, p) + 0.15 * tmse_loss(p, 4.0)
    assert abs(cls_loss(y, p).item() - expect.item()) < 1e-15
    assert cls_loss(y, p, LossConfig(lam=0)).item() == ce_loss(y, p).item()


def test_align_cases():
    m = torch.randn(64, 10, dtype=torch.float64)
    assert align_loss(m, m).item() == 0.0
    assert align_loss(m + 1, m).item() == 1.0
    with pytest.raises(ValidationError):
        align_loss(m, m[:, :5])


def test_align_target_receives_no_gradient():
    m = torch.randn(64, 4, dtype=torch.float64, requires_grad=True)
    mp = torch.randn(64, 4, dtype=torch.float64, requires_grad=True)
    align_loss(mp, m).backward()
    assert m.grad is None and mp.grad is not None


def test_adaptation_and_total(float64):
    torch.manual_seed(0)
    pred = Predictor()
    m_t = torch.randn(1, 64, 6)
    m_p = torch.randn(1, 64, 6)
    y = torch.randint(0, 3, (1, 6))
    total, al, cl = adaptation_loss("R2I", m_p, m_t, y, pred)
    assert abs(total.item() - (al + 0.35 * cl).item()) < 1e-15
    assert abs(cl.item() - cls_loss(y, pred(m_p)).item()) < 1e-15
    with pytest.raises(ValidationError):
        adaptation_loss("X2Y", m_p, m_t, y, pred)
    parts = {"cls_fuse": torch.tensor(0.3), "R2I": total, "I2R": torch.tensor(1.7)}
    assert total_loss(parts).item() == (parts["cls_fuse"] + total + parts["I2R"]).item()
    with pytest.raises(ValidationError):
        total_loss({"cls_fuse": total})


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000), st.floats(0.1, 10))
def test_losses_non_negative(n, seed, tau):
    rng = np.random.default_rng(seed)
    p = torch.tensor(_softmax(rng, 3, n))
    y = rng.integers(0, 3, n)
    assert ce_loss(y, p).item() >= 0
    t = tmse_loss(p, tau).item()
    assert 0 <= t <= tau**2 * (n - 1) / n + 1e-12
