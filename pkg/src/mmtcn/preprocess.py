"""Stream conditioning: IMU resampling, hand concatenation, clutter removal, windowing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    FRAME_RATE,
    IMU_CHANNELS_TWO_HAND,
    ImuSequence,
    MealSession,
    RdtCube,
    ValidationError,
)


@dataclass(frozen=True)
class WindowSpec:
    window_frames: int = 1000  # 40 s at 25 fps
    stride_frames: int = 1000
    pad_mode: str = "repeat_edge"

    def __post_init__(self):
        if not 1 <= self.stride_frames <= self.window_frames:
            raise ValidationError(
                f"window: need 1 <= stride ({self.stride_frames}) <= window ({self.window_frames})"
            )
        if self.pad_mode != "repeat_edge":
            raise ValidationError(f"window: unsupported pad_mode {self.pad_mode!r}")


def resample_imu(seq: ImuSequence, target_hz: float = FRAME_RATE, anti_alias: bool = False) -> ImuSequence:
    """Linearly interpolate onto a uniform ``target_hz`` grid over the same time extent.

    With ``anti_alias`` a zero-phase FIR low-pass at the target Nyquist rate is
    applied before interpolation.
    """
    src_hz = float(seq.sample_rate)
    if target_hz > src_hz:
        raise ValidationError(f"resample: upsampling {src_hz} Hz -> {target_hz} Hz is not supported")
    if target_hz == src_hz:
        return seq
    n_src = seq.n_frames
    n_out = int(np.floor(n_src * target_hz / src_hz + 1e-9))
    if n_out < 1:
        raise ValidationError(f"resample: {n_src} samples too short for {target_hz} Hz")
    data = seq.data.astype(np.float64)
    if anti_alias and n_src > 3 * 31:
        from scipy.signal import filtfilt, firwin

        taps = firwin(31, 0.5 * target_hz, fs=src_hz)
        data = filtfilt(taps, [1.0], data, axis=1)
    t_src = np.arange(n_src) / src_hz
    t_out = np.arange(n_out) / target_hz
    out = np.stack([np.interp(t_out, t_src, ch) for ch in data])
    return ImuSequence(out, target_hz, seq.channel_layout)


def concat_hands(left: ImuSequence, right: ImuSequence) -> ImuSequence:
    if left.n_channels != 6 or right.n_channels != 6:
        raise ValidationError("concat_hands: each hand must have 6 channels")
    if left.n_frames != right.n_frames:
        raise ValidationError(f"concat_hands: length mismatch {left.n_frames} vs {right.n_frames}")
    if left.sample_rate != right.sample_rate:
        raise ValidationError(f"concat_hands: rate mismatch {left.sample_rate} vs {right.sample_rate}")
    return ImuSequence(np.concatenate([left.data, right.data]), left.sample_rate, IMU_CHANNELS_TWO_HAND)


def remove_clutter(cube: RdtCube) -> RdtCube:
    """Subtract each range-Doppler bin's temporal mean and clip negatives to zero."""
    if cube.n_frames < 2:
        raise ValidationError("remove_clutter: needs at least 2 frames")
    mean = cube.data.mean(axis=2, keepdims=True, dtype=np.float64)
    data = np.clip(cube.data - mean.astype(cube.data.dtype), 0.0, None)
    return RdtCube(data.astype(cube.data.dtype, copy=False), cube.frame_rate)


@dataclass(frozen=True)
class Window:
    session_id: str
    index: int
    start: int
    n_valid: int
    labels: np.ndarray
    radar: np.ndarray | None = None
    imu: np.ndarray | None = None


@dataclass(frozen=True)
class StitchMap:
    n_frames: int
    window_frames: int
    spans: tuple[tuple[int, int], ...]  # (start, end) in session frames, end exclusive


def _window_starts(n: int, spec: WindowSpec) -> list[int]:
    starts = [0]
    while starts[-1] + spec.window_frames < n:
        starts.append(starts[-1] + spec.stride_frames)
    return starts


def _take(a: np.ndarray, start: int, width: int) -> np.ndarray:
    n = a.shape[-1]
    idx = np.minimum(np.arange(start, start + width), n - 1)
    return np.ascontiguousarray(a[..., idx])


def window_session(session: MealSession, spec: WindowSpec = WindowSpec()) -> tuple[list[Window], StitchMap]:
    """Cut a session into fixed-length windows; the tail window repeats the last frame."""
    n = session.n_frames
    w = spec.window_frames
    windows, spans = [], []
    for i, start in enumerate(_window_starts(n, spec)):
        end = min(start + w, n)
        windows.append(
            Window(
                session_id=session.session_id,
                index=i,
                start=start,
                n_valid=end - start,
                labels=_take(session.labels.labels, start, w),
                radar=None if session.radar is None else _take(session.radar.data, start, w),
                imu=None if session.imu is None else _take(session.imu.data, start, w),
            )
        )
        spans.append((start, end))
    return windows, StitchMap(n, w, tuple(spans))


def stitch(outputs, stitch_map: StitchMap) -> np.ndarray:
    """Reassemble per-window ``[C, window]`` arrays into one ``[C, N]`` array.

    Frames covered by several windows receive the mean of the overlapping
    values, so for log-probabilities this is mean-logit blending.
    """
    outputs = [np.asarray(o, dtype=np.float64) for o in outputs]
    if len(outputs) != len(stitch_map.spans):
        raise ValueError(f"stitch: {len(outputs)} outputs for {len(stitch_map.spans)} windows")
    c = outputs[0].shape[0]
    acc = np.zeros((c, stitch_map.n_frames))
    counts = np.zeros(stitch_map.n_frames)
    for out, (start, end) in zip(outputs, stitch_map.spans):
        acc[:, start:end] += out[:, : end - start]
        counts[start:end] += 1
    return acc / counts


def coverage_counts(stitch_map: StitchMap) -> np.ndarray:
    counts = np.zeros(stitch_map.n_frames, dtype=np.int64)
    for start, end in stitch_map.spans:
        counts[start:end] += 1
    return counts
