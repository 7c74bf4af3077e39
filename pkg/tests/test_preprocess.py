import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmtcn.data import ImuSequence, LabelSequence, MealSession, RdtCube, ValidationError
from mmtcn.preprocess import (
    WindowSpec,
    concat_hands,
    coverage_counts,
    remove_clutter,
    resample_imu,
    stitch,
    window_session,
)


def _imu_session(n, c=6):
    data = np.arange(c * n, dtype=np.float64).reshape(c, n)
    return MealSession("w", LabelSequence(np.zeros(n, dtype=int)),
                       imu=ImuSequence(data, channel_layout=tuple(f"c{i}" for i in range(c))))


def test_resample_length_and_linear_signal():
    t = np.arange(640) / 64
    seq = ImuSequence(np.tile(3 * t, (6, 1)), 64.0, tuple("abcdef"))
    out = resample_imu(seq, 25)
    assert out.n_frames == 250 and out.sample_rate == 25
    np.testing.assert_allclose(out.data[0], 3 * np.arange(250) / 25, atol=1e-12)


def test_resample_identity_and_upsample_error():
    seq = ImuSequence(np.zeros((6, 10)), 25.0, tuple("abcdef"))
    assert resample_imu(seq, 25) is seq
    with pytest.raises(ValidationError):
        resample_imu(seq, 50)


def test_resample_anti_alias_attenuates_high_frequency():
    t = np.arange(64 * 20) / 64
    seq = ImuSequence(np.tile(np.sin(2 * np.pi * 20 * t), (6, 1)), 64.0, tuple("abcdef"))
    plain = resample_imu(seq, 25).data[0]
    filtered = resample_imu(seq, 25, anti_alias=True).data[0]
    assert np.std(filtered) < 0.2 * np.std(plain)


def test_concat_hands_order_and_checks():
    left = ImuSequence(np.zeros((6, 5)), 25.0, tuple("abcdef"))
    right = ImuSequence(np.ones((6, 5)), 25.0, tuple("abcdef"))
    both = concat_hands(left, right)
    assert both.n_channels == 12 and both.data[:6].sum() == 0 and both.data[6:].min() == 1
    assert both.channel_layout[0].startswith("left") and both.channel_layout[6].startswith("right")
    with pytest.raises(ValidationError):
        concat_hands(left, ImuSequence(np.ones((6, 4)), 25.0, tuple("abcdef")))


def test_remove_clutter_static_scene_is_zero():
    cube = RdtCube(np.repeat(np.random.default_rng(0).random((32, 64, 1)), 10, axis=2))
    out = remove_clutter(cube)
    assert np.abs(out.data).max() < 1e-12
    with pytest.raises(ValidationError):
        remove_clutter(RdtCube(np.zeros((32, 64, 1))))


def test_remove_clutter_non_negative():
    out = remove_clutter(RdtCube(np.random.default_rng(1).random((4, 4, 9))))
    assert out.data.min() >= 0


def test_three_windows_for_2500():
    windows, smap = window_session(_imu_session(2500))
    assert len(windows) == 3
    assert [w.n_valid for w in windows] == [1000, 1000, 500]
    out = stitch([w.imu[:3] for w in windows], smap)
    assert out.shape == (3, 2500)
    assert np.array_equal(coverage_counts(smap), np.ones(2500, dtype=int))
    np.testing.assert_array_equal(out, _imu_session(2500).imu.data[:3])


def test_tail_window_repeats_last_frame():
    windows, _ = window_session(_imu_session(1200))
    tail = windows[-1].imu
    assert tail.shape == (6, 1000)
    assert np.all(tail[:, 200:] == tail[:, 199:200])


def test_short_session_single_window():
    windows, smap = window_session(_imu_session(7))
    assert len(windows) == 1 and smap.spans == ((0, 7),)


def test_window_spec_validation():
    with pytest.raises(ValidationError):
        WindowSpec(100, 200)
    with pytest.raises(ValidationError):
        WindowSpec(100, 100, "zeros")


@given(st.integers(1, 400), st.integers(1, 60), st.integers(1, 60))
def test_stitch_recovers_signal(n, w, s):
    s = min(s, w)
    sess = _imu_session(n, 6)
    windows, smap = window_session(sess, WindowSpec(w, s))
    cov = coverage_counts(smap)
    assert cov.min() >= 1
    assert smap.spans[-1][1] == n
    np.testing.assert_allclose(stitch([x.imu for x in windows], smap), sess.imu.data)
