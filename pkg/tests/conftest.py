import numpy as np
import pytest
import torch

from mmtcn.data import ImuSequence, LabelSequence, MealSession, RdtCube, paint_segments, GestureSegment, ClassId


@pytest.fixture
def make_session():
    def _make(n=100, seed=0, radar=True, imu=True, n_imu=12, shape=(32, 64)):
        rng = np.random.default_rng(seed)
        y = paint_segments(
            [GestureSegment(n // 5, n // 5 + max(1, n // 10), ClassId.EATING),
             GestureSegment(n // 2, n // 2 + max(1, n // 8), ClassId.DRINKING)],
            n,
        )
        return MealSession(
            f"s{seed}",
            LabelSequence(y),
            RdtCube(rng.random(shape + (n,)).astype(np.float32)) if radar else None,
            ImuSequence(rng.standard_normal((n_imu, n)).astype(np.float32),
                        channel_layout=tuple(f"c{i}" for i in range(n_imu))) if imu else None,
            {"eating_style": "spoon", "dominant_hand": "right", "participant": "p1"},
        )

    return _make


@pytest.fixture
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)



def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
