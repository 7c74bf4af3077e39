import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmtcn.data import ClassId, ValidationError, labels_to_segments, load_session
from mmtcn.preprocess import remove_clutter
from mmtcn.synth import (
    EATING_STYLES,
    SynthConfig,
    complementary_noise,
    config_from_mapping,
    dataset_hash,
    draw_schedule,
    generate_dataset,
    generate_session,
    generate_sessions,
    lognormal_params,
)


def test_lognormal_moment_matching():
    mu, sigma = lognormal_params(3.07, 1.42)
    assert math.isclose(math.exp(mu + sigma**2 / 2), 3.07, rel_tol=1e-12)
    var = (math.exp(sigma**2) - 1) * math.exp(2 * mu + sigma**2)
    assert math.isclose(math.sqrt(var), 1.42, rel_tol=1e-12)


def test_pooled_eating_duration_mean():
    durations = []
    for seed in range(100):
        cfg = SynthConfig(seed=seed)
        segs = draw_schedule(cfg, np.random.default_rng(seed))
        durations += [s.length / cfg.frame_rate for s in segs if s.class_id == ClassId.EATING]
    assert abs(np.mean(durations) - 3.07) < 0.3


def test_drinking_duration_law():
    durations = []
    for seed in range(200):
        cfg = SynthConfig(seed=seed, duration_s=600)
        durations += [s.length / 25 for s in draw_schedule(cfg, np.random.default_rng(seed)) if s.class_id == ClassId.DRINKING]
    assert abs(np.mean(durations) - 5.32) < 0.3
    assert abs(np.std(durations) - 2.42) < 0.4


def test_seeded_determinism():
    a = generate_session(SynthConfig(seed=7, duration_s=30))
    b = generate_session(SynthConfig(seed=7, duration_s=30))
    assert a == b
    assert a != generate_session(SynthConfig(seed=8, duration_s=30))


def test_empty_schedule_is_all_other():
    # nothing was requested, so nothing is reported missing
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        s = generate_session(SynthConfig(seed=1, duration_s=20, eat_rate=0, drink_rate=0))
    assert s.labels.labels.max() == 0


def test_too_short_warns():
    with pytest.warns(UserWarning):
        generate_session(SynthConfig(seed=1, duration_s=0.5))


def test_invalid_config():
    with pytest.raises(ValidationError):
        SynthConfig(eat_rate=-1)
    with pytest.raises(ValidationError):
        SynthConfig(eating_style="ladle")
    with pytest.raises(ValidationError, match="radar.sipping"):
        SynthConfig(modality_degradation={"radar.sipping": 0.5})


def test_config_from_mapping():
    cfg = config_from_mapping({"duration_s": "30", "eating_style": "spoon", "modality_degradation.radar.drinking": "0.5"})
    assert cfg.duration_s == 30.0 and cfg.eating_style == "spoon"
    assert cfg.degradation("radar", ClassId.DRINKING) == 0.5
    with pytest.raises(ValidationError, match="bogus_key"):
        config_from_mapping({"bogus_key": "1"})


def test_shapes_and_metadata():
    s = generate_session(SynthConfig(seed=2, duration_s=40, eating_style="chopsticks", dominant_hand="left"))
    assert s.radar.data.shape == (32, 64, 1000)
    assert s.imu.data.shape == (12, 1000)
    assert s.meta["eating_style"] == "chopsticks" and s.meta["dominant_hand"] == "left"
    assert len(s.meta["gesture_hands"].split(",")) == len(labels_to_segments(s.labels))


def test_complementary_preset_zeroes_nondominant_wrist():
    s = generate_session(complementary_noise(SynthConfig(seed=3, duration_s=60, dominant_hand="right")))
    assert np.all(s.imu.data[:6] == 0)
    assert np.abs(s.imu.data[6:]).max() > 0


def test_label_signal_consistency():
    cfg = SynthConfig(seed=11, duration_s=120, other_rate=0)
    s = generate_session(cfg)
    radar = remove_clutter(s.radar).data.sum(axis=(0, 1))
    gyro = np.abs(s.imu.data[[3, 4, 9, 10]]).max(axis=0)
    other = s.labels.labels == 0
    for seg in labels_to_segments(s.labels):
        span = slice(seg.start_frame, seg.end_frame)
        assert radar[span].max() > np.percentile(radar[other], 99)
        assert gyro[span].max() > np.percentile(gyro[other], 99)


def test_radar_approach_has_positive_doppler():
    cfg = SynthConfig(seed=5, duration_s=60, other_rate=0, radar_noise_std=0.0)
    s = generate_session(cfg)
    seg = labels_to_segments(s.labels)[0]
    cube = s.radar.data[:, :, seg.start_frame:seg.end_frame]
    mid = cube.shape[1] // 2
    doppler = cube.sum(axis=0)  # [doppler, t]
    first, last = doppler[:, : cube.shape[2] // 4], doppler[:, -cube.shape[2] // 4:]
    assert first[mid + 2:].sum() > first[: mid - 1].sum()
    assert last[: mid - 1].sum() > last[mid + 2:].sum()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(20, 200))
def test_schedule_never_overlaps(seed, duration):
    cfg = SynthConfig(seed=seed, duration_s=duration)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        segs = draw_schedule(cfg, np.random.default_rng(seed))
    for a, b in zip(segs, segs[1:]):
        assert a.end_frame <= b.start_frame
    assert all(s.end_frame <= round(duration * 25) for s in segs)


def test_dataset_directories_and_hash(tmp_path):
    cfg = SynthConfig(duration_s=60)
    dirs = generate_dataset(cfg, 5, 42, tmp_path / "a")
    generate_dataset(cfg, 5, 42, tmp_path / "b")
    assert len(dirs) == 5
    assert dataset_hash(tmp_path / "a") == dataset_hash(tmp_path / "b")
    sessions = [load_session(d) for d in dirs]
    assert sum(s.n_frames for s in sessions) / 25 == 300
    assert [s.meta["eating_style"] for s in sessions] == [EATING_STYLES[i % 4] for i in range(5)]


def test_styles_balanced_and_mostly_right_handed():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sessions = generate_sessions(SynthConfig(duration_s=2, eat_rate=0, drink_rate=0, other_rate=0), 52, 0)
    styles = [s.meta["eating_style"] for s in sessions]
    assert all(styles.count(st_) == 13 for st_ in EATING_STYLES)
    assert sum(s.meta["dominant_hand"] == "right" for s in sessions) > 26
    assert len({s.session_id for s in sessions}) == 52
