"""Seeded generator of paired radar + dual-wrist IMU meal sessions with exact labels.

Gestures follow a renewal process: an exponential pause (plus a minimum gap)
followed by an eating or drinking gesture whose duration is lognormal,
moment-matched to the configured mean and standard deviation.  Each gesture is
a raise-hold-lower movement of one hand:

* IMU: the acting wrist pitches (and, when drinking, rolls) so gravity moves
  between accelerometer axes; the gyroscope sees the angular rate.
* Radar: a Gaussian blob in range-Doppler travels from the plate towards the
  mouth and back, with positive Doppler on the way in and negative on the way
  out, on top of a static clutter map.

"Other" activity is modelled as short, low-amplitude bursts of coloured noise
in both modalities.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import (
    EATING_STYLES,
    FRAME_RATE,
    IMU_CHANNELS_TWO_HAND,
    N_DOPPLER,
    N_RANGE,
    ClassId,
    GestureSegment,
    ImuSequence,
    LabelSequence,
    MealSession,
    RdtCube,
    ValidationError,
    paint_segments,
    save_session,
)
from .preprocess import concat_hands, resample_imu

GRAVITY = 9.81
RANGE_RES = 1.28 / N_RANGE  # m per range bin
DOPPLER_RES = 2.56 / N_DOPPLER  # m/s per Doppler bin, centre bin = 0 m/s
HANDS = ("left", "right")

# (amplitude, peak pitch in degrees, peak roll in degrees)
_STYLE_KINEMATICS = {
    "fork_knife": (1.0, 70.0, 10.0),
    "spoon": (0.9, 65.0, 5.0),
    "chopsticks": (0.75, 55.0, 20.0),
    "hand": (1.1, 75.0, 15.0),
}
_DRINK_KINEMATICS = (1.0, 80.0, 40.0)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    duration_s: float = 120.0
    frame_rate: float = FRAME_RATE
    imu_rate: float = 64.0
    eat_rate: float = 3.4  # gestures per minute
    drink_rate: float = 0.9
    eat_dur_mean: float = 3.07
    eat_dur_std: float = 1.42
    drink_dur_mean: float = 5.32
    drink_dur_std: float = 2.42
    min_gap_s: float = 1.0
    imu_noise_std: float = 0.05  # m/s^2 on accelerometers; gyroscopes get 10x in deg/s
    radar_noise_std: float = 0.1
    other_rate: float = 2.0  # non-intake micro-movement bursts per minute
    eating_style: str = "fork_knife"
    dominant_hand: str = "right"
    nondominant_eat_share: float = 0.2
    nondominant_drink_share: float = 0.2
    zero_nondominant_imu: bool = False
    modality_degradation: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.eat_rate < 0 or self.drink_rate < 0 or self.other_rate < 0:
            raise ValidationError("synth: rates must be non-negative")
        for name in ("duration_s", "eat_dur_mean", "eat_dur_std", "drink_dur_mean", "drink_dur_std"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"synth: {name} must be positive")
        if self.eating_style not in EATING_STYLES:
            raise ValidationError(f"synth: eating_style must be one of {EATING_STYLES}")
        if self.dominant_hand not in HANDS:
            raise ValidationError(f"synth: dominant_hand must be one of {HANDS}")
        for key in self.modality_degradation:
            modality, _, cls = key.partition(".")
            if modality not in ("radar", "imu") or cls not in ("eating", "drinking"):
                raise ValidationError(f"synth: bad modality_degradation key {key!r}")
        object.__setattr__(self, "modality_degradation", dict(self.modality_degradation))

    def degradation(self, modality: str, cls: ClassId) -> float:
        return float(self.modality_degradation.get(f"{modality}.{cls.name.lower()}", 1.0))


def complementary_noise(cfg: SynthConfig = SynthConfig()) -> SynthConfig:
    """Preset where each modality has a blind spot the other covers.

    Radar is noisier overall and its SNR drops further during drinking, while the
    non-dominant wrist's IMU channels are zeroed, so gestures made with that hand
    are invisible to the IMU.
    """
    return replace(
        cfg,
        zero_nondominant_imu=True,
        nondominant_eat_share=0.35,
        nondominant_drink_share=0.2,
        radar_noise_std=0.5,
        modality_degradation={"radar.drinking": 0.6},
    )


PRESETS = {"default": lambda cfg: cfg, "complementary": complementary_noise}


def lognormal_params(mean: float, std: float) -> tuple[float, float]:
    """``(mu, sigma)`` of the lognormal law with the given mean and standard deviation."""
    sigma2 = math.log1p((std / mean) ** 2)
    return math.log(mean) - 0.5 * sigma2, math.sqrt(sigma2)


def draw_schedule(cfg: SynthConfig, rng: np.random.Generator) -> list[GestureSegment]:
    fps = cfg.frame_rate
    total_rate = cfg.eat_rate + cfg.drink_rate
    if total_rate == 0:
        return []
    p_eat = cfg.eat_rate / total_rate
    mean_dur = p_eat * cfg.eat_dur_mean + (1 - p_eat) * cfg.drink_dur_mean
    extra_gap = 60.0 / total_rate - mean_dur - cfg.min_gap_s
    if extra_gap <= 0:
        warnings.warn("synth: requested rates leave no room between gestures; packing them back to back", stacklevel=3)
        extra_gap = 0.0
    eat_law = lognormal_params(cfg.eat_dur_mean, cfg.eat_dur_std)
    drink_law = lognormal_params(cfg.drink_dur_mean, cfg.drink_dur_std)

    segments = []
    t = cfg.min_gap_s + rng.exponential(extra_gap) if extra_gap else cfg.min_gap_s
    while True:
        cls = ClassId.EATING if rng.random() < p_eat else ClassId.DRINKING
        mu, sigma = eat_law if cls == ClassId.EATING else drink_law
        dur = rng.lognormal(mu, sigma)
        start = int(round(t * fps))
        end = max(start + 1, int(round((t + dur) * fps)))
        if end > int(round(cfg.duration_s * fps)):
            break
        segments.append(GestureSegment(start, end, cls))
        t = end / fps + cfg.min_gap_s + (rng.exponential(extra_gap) if extra_gap else 0.0)
    if not segments:
        warnings.warn(f"synth: {cfg.duration_s} s is too short to fit a gesture at the requested rates", stacklevel=3)
    return segments


def _envelope(t: np.ndarray, start: float, end: float, raise_frac: float) -> tuple[np.ndarray, np.ndarray]:
    """Raise-hold-lower profile in [0, 1] and its time derivative (1/s)."""
    dur = end - start
    u = (t - start) / dur
    r = raise_frac
    e = np.zeros_like(t)
    de = np.zeros_like(t)
    up = (u >= 0) & (u < r)
    hold = (u >= r) & (u <= 1 - r)
    down = (u > 1 - r) & (u < 1)
    e[up] = 0.5 * (1 - np.cos(np.pi * u[up] / r))
    de[up] = 0.5 * np.pi / (r * dur) * np.sin(np.pi * u[up] / r)
    e[hold] = 1.0
    w = (u[down] - (1 - r)) / r
    e[down] = 0.5 * (1 + np.cos(np.pi * w))
    de[down] = -0.5 * np.pi / (r * dur) * np.sin(np.pi * w)
    return e, de


@dataclass
class _Gesture:
    start_s: float
    end_s: float
    cls: ClassId
    hand: str
    raise_frac: float
    amp: float
    pitch: float
    roll: float
    mouth_range: float


BURST_GRID_HZ = 100.0


def _coloured_noise(rng: np.random.Generator, n: int, smooth: int) -> np.ndarray:
    """Unit-variance low-pass noise (white noise through a Hann kernel of ``2 * smooth + 1`` taps)."""
    kernel = np.hanning(2 * smooth + 1)
    x = np.convolve(rng.standard_normal(n + 2 * smooth), kernel / np.sqrt(np.square(kernel).sum()), mode="valid")
    return x[:n]


@dataclass
class _Burst:
    """Non-intake micro-movement (fidgeting, adjusting glasses, phone use).

    One coloured-noise radial displacement under a Hann window is drawn per
    burst and rendered into both sensors, so the IMU and radar see the same motion.
    """

    start_s: float
    end_s: float
    hand: str
    reach_m: float
    pitch_per_m: float  # wrist pitch change per metre of displacement, degrees
    path: np.ndarray  # displacement on a BURST_GRID_HZ grid over [start_s, end_s]

    def displacement(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Displacement towards the radar (m) and its first two time derivatives at times ``t``."""
        grid = self.start_s + np.arange(self.path.size) / BURST_GRID_HZ
        d1 = np.gradient(self.path, 1 / BURST_GRID_HZ)
        d2 = np.gradient(d1, 1 / BURST_GRID_HZ)
        inside = (t >= self.start_s) & (t < self.end_s)
        return tuple(np.interp(t, grid, y) * inside for y in (self.path, d1, d2))


def _plan(cfg: SynthConfig, rng: np.random.Generator):
    segments = draw_schedule(cfg, rng)
    style_amp, style_pitch, style_roll = _STYLE_KINEMATICS[cfg.eating_style]
    other = "left" if cfg.dominant_hand == "right" else "right"
    gestures = []
    for seg in segments:
        eating = seg.class_id == ClassId.EATING
        share = cfg.nondominant_eat_share if eating else cfg.nondominant_drink_share
        hand = other if rng.random() < share else cfg.dominant_hand
        amp, pitch, roll = (style_amp, style_pitch, style_roll) if eating else _DRINK_KINEMATICS
        gestures.append(
            _Gesture(
                start_s=seg.start_frame / cfg.frame_rate,
                end_s=seg.end_frame / cfg.frame_rate,
                cls=seg.class_id,
                hand=hand,
                raise_frac=rng.uniform(0.22, 0.35) if eating else rng.uniform(0.18, 0.25),
                amp=amp * rng.uniform(0.85, 1.15),
                pitch=pitch * rng.uniform(0.85, 1.15),
                roll=roll * rng.uniform(0.8, 1.2),
                mouth_range=rng.uniform(0.30, 0.34) if eating else rng.uniform(0.36, 0.40),
            )
        )

    # micro-movements only in background stretches, at least 0.5 s from any gesture
    bursts = []
    n_bursts = rng.poisson(cfg.other_rate * cfg.duration_s / 60.0)
    for _ in range(n_bursts):
        dur = rng.uniform(1.0, 4.0)
        start = rng.uniform(0.0, max(cfg.duration_s - dur, 0.0))
        if any(start < g.end_s + 0.5 and g.start_s - 0.5 < start + dur for g in gestures):
            continue
        n_grid = int(dur * BURST_GRID_HZ) + 1
        reach = rng.uniform(0.02, 0.05)
        window = np.hanning(n_grid + 2)[1:-1]
        path = reach * window * _coloured_noise(rng, n_grid, smooth=int(0.3 * BURST_GRID_HZ))
        bursts.append(_Burst(start, start + dur, HANDS[int(rng.integers(2))], reach, rng.uniform(150.0, 300.0), path))
    return segments, gestures, bursts


def _render_hand(cfg, rng, t, gestures, bursts, hand, n) -> np.ndarray:
    rest_pitch = np.deg2rad(rng.uniform(5.0, 15.0))
    pitch = np.full(n, rest_pitch)
    roll = np.zeros(n)
    dpitch = np.zeros(n)
    droll = np.zeros(n)
    lin = np.zeros(n)
    for g in gestures:
        if g.hand != hand:
            continue
        scale = g.amp * cfg.degradation("imu", g.cls)
        e, de = _envelope(t, g.start_s, g.end_s, g.raise_frac)
        pitch += np.deg2rad(g.pitch) * scale * e
        dpitch += np.deg2rad(g.pitch) * scale * de
        if g.cls == ClassId.DRINKING:
            # cup tilt builds up during the hold phase
            tilt = np.clip((t - g.start_s) / (g.end_s - g.start_s), 0, 1)
            roll += np.deg2rad(g.roll) * scale * e * tilt
            droll += np.deg2rad(g.roll) * scale * (de * tilt + e * (tilt > 0) * (tilt < 1) / (g.end_s - g.start_s))
        else:
            roll += np.deg2rad(g.roll) * scale * e
            droll += np.deg2rad(g.roll) * scale * de
        lin += 1.5 * scale * de
    for b in bursts:
        if b.hand != hand:
            continue
        d, dd, ddd = b.displacement(t)
        pitch += np.deg2rad(b.pitch_per_m) * d
        dpitch += np.deg2rad(b.pitch_per_m) * dd
        lin += ddd
    acc = np.stack(
        [
            GRAVITY * np.sin(pitch) * np.cos(roll) + lin,
            GRAVITY * np.sin(roll),
            GRAVITY * np.cos(pitch) * np.cos(roll),
        ]
    )
    gyr = np.rad2deg(np.stack([droll, dpitch, 0.3 * dpitch]))
    signal = np.concatenate([acc, gyr])
    noise = rng.standard_normal((6, n)) * cfg.imu_noise_std * np.array([1, 1, 1, 10, 10, 10])[:, None]
    return signal + noise


def _render_radar(cfg, rng, gestures, bursts, n) -> np.ndarray:
    t = np.arange(n) / cfg.frame_rate
    ranges = (np.arange(N_RANGE) + 0.5) * RANGE_RES
    velocities = (np.arange(N_DOPPLER) - N_DOPPLER // 2) * DOPPLER_RES

    cube = np.zeros((N_RANGE, N_DOPPLER, n))
    # static scene: torso and plate at zero Doppler
    for r0, a in ((0.70, 1.5), (0.48, 0.8)):
        cube += (a * np.exp(-0.5 * ((ranges - r0) / 0.06) ** 2))[:, None, None] * (
            np.exp(-0.5 * (velocities / 0.05) ** 2)
        )[None, :, None]

    def add_blob(amp_t, range_t, vel_t, range_sigma, vel_sigma):
        active = np.flatnonzero(amp_t > 1e-4)
        if active.size == 0:
            return
        gr = np.exp(-0.5 * ((ranges[None, :] - range_t[active, None]) / range_sigma) ** 2)
        gd = np.exp(-0.5 * ((velocities[None, :] - vel_t[active, None]) / vel_sigma) ** 2)
        cube[:, :, active] += np.einsum("tr,td->rdt", gr * amp_t[active, None], gd)

    for g in gestures:
        e, de = _envelope(t, g.start_s, g.end_s, g.raise_frac)
        rest = 0.55 + (0.03 if g.hand != cfg.dominant_hand else 0.0)
        rng_t = rest - (rest - g.mouth_range) * e
        vel_t = (rest - g.mouth_range) * de  # approach is positive Doppler
        inside = (t >= g.start_s) & (t < g.end_s)
        amp_t = 1.2 * g.amp * cfg.degradation("radar", g.cls) * inside
        vel_sigma = 0.08 if g.cls == ClassId.EATING else 0.14
        add_blob(amp_t, rng_t, vel_t, 0.05, vel_sigma)
    for b in bursts:
        d, dd, _ = b.displacement(t)
        rest = 0.55 + (0.03 if b.hand != cfg.dominant_hand else 0.0)
        inside = (t >= b.start_s) & (t < b.end_s)
        amp_t = 0.5 * inside * np.sin(np.pi * np.clip((t - b.start_s) / (b.end_s - b.start_s), 0, 1))
        add_blob(amp_t, rest - d, dd, 0.05, 0.08)
    cube += rng.standard_normal(cube.shape) * cfg.radar_noise_std
    return np.abs(cube)


def generate_session(cfg: SynthConfig, session_id: str | None = None, meta: Mapping[str, str] | None = None) -> MealSession:
    """Render one paired radar/IMU session; labels mark exactly the rendered gestures."""
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.duration_s * cfg.frame_rate))
    segments, gestures, bursts = _plan(cfg, rng)

    n_imu = int(round(cfg.duration_s * cfg.imu_rate))
    t_imu = np.arange(n_imu) / cfg.imu_rate
    hands = {}
    for hand in HANDS:
        raw = _render_hand(cfg, rng, t_imu, gestures, bursts, hand, n_imu)
        if cfg.zero_nondominant_imu and hand != cfg.dominant_hand:
            raw = np.zeros_like(raw)
        layout = tuple(c for c in IMU_CHANNELS_TWO_HAND if c.startswith(hand))
        seq = resample_imu(ImuSequence(raw, cfg.imu_rate, layout), cfg.frame_rate)
        data = seq.data
        if data.shape[1] < n:
            data = np.pad(data, ((0, 0), (0, n - data.shape[1])), mode="edge")
        hands[hand] = ImuSequence(data[:, :n], cfg.frame_rate, layout)
    imu = concat_hands(hands["left"], hands["right"])
    radar = RdtCube(_render_radar(cfg, rng, gestures, bursts, n), cfg.frame_rate)
    labels = LabelSequence(paint_segments(segments, n), cfg.frame_rate)

    info = {
        "eating_style": cfg.eating_style,
        "dominant_hand": cfg.dominant_hand,
        "seed": str(cfg.seed),
        "gesture_hands": ",".join(g.hand[0] for g in gestures),
    }
    info.update(meta or {})
    return MealSession(session_id or f"synth_{cfg.seed}", labels, radar, imu, info)


def session_seeds(master_seed: int, n_sessions: int) -> list[int]:
    children = np.random.SeedSequence(master_seed).spawn(n_sessions)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def generate_sessions(cfg_template: SynthConfig, n_sessions: int, seed: int) -> list[MealSession]:
    """In-memory dataset: eating styles cycle through the four categories, 85% right-handed."""
    if n_sessions < 1:
        raise ValidationError("synth: n_sessions must be >= 1")
    sessions = []
    hand_rng = np.random.default_rng(seed)
    for i, s in enumerate(session_seeds(seed, n_sessions)):
        style = EATING_STYLES[i % len(EATING_STYLES)]
        hand = "right" if hand_rng.random() < 0.85 else "left"
        cfg = replace(cfg_template, seed=s, eating_style=style, dominant_hand=hand)
        sessions.append(generate_session(cfg, f"meal_{i:03d}", {"participant": f"p{i:03d}"}))
    return sessions


def generate_dataset(cfg_template: SynthConfig, n_sessions: int, seed: int, out_dir: str | Path) -> list[Path]:
    """Write the sessions of :func:`generate_sessions` as session directories."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [save_session(s, out / s.session_id) for s in generate_sessions(cfg_template, n_sessions, seed)]


def dataset_hash(root: str | Path) -> str:
    """SHA-256 over relative paths and contents of every file below ``root``."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(b"\0")
        h.update(path.read_bytes())
    return h.hexdigest()


def config_from_mapping(values: Mapping[str, str], base: SynthConfig = SynthConfig()) -> SynthConfig:
    """Build a config from ``key=value`` strings; unknown keys raise naming the key.

    Degradation multipliers use dotted keys, e.g. ``modality_degradation.radar.drinking=0.3``.
    """
    types = {f.name: f.type for f in fields(SynthConfig)}
    kwargs, degradation = {}, dict(base.modality_degradation)
    for key, raw in values.items():
        if key.startswith("modality_degradation."):
            degradation[key.split(".", 1)[1]] = float(raw)
            continue
        if key not in types or key == "modality_degradation":
            raise ValidationError(f"synth config: unknown key {key!r}")
        default = getattr(base, key)
        if isinstance(default, bool):
            kwargs[key] = str(raw).strip().lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            kwargs[key] = int(raw)
        elif isinstance(default, float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = str(raw).strip()
    return replace(base, modality_degradation=degradation, **kwargs)
