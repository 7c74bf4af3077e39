"""Domain types, the MMGF tensor format and session directories."""

from __future__ import annotations

import csv
import enum
import io
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"MMGF"
FORMAT_VERSION = 1
DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_FOR_DTYPE = {np.dtype("float32"): 1, np.dtype("float64"): 2}

FRAME_RATE = 25.0
N_RANGE = 32
N_DOPPLER = 64

IMU_CHANNELS_TWO_HAND = (
    "left_acc_x", "left_acc_y", "left_acc_z",
    "left_gyr_x", "left_gyr_y", "left_gyr_z",
    "right_acc_x", "right_acc_y", "right_acc_z",
    "right_gyr_x", "right_gyr_y", "right_gyr_z",
)
EATING_STYLES = ("fork_knife", "spoon", "chopsticks", "hand")


class ValidationError(ValueError):
    """Raised when a value object or on-disk artifact violates an invariant."""


class FormatError(ValidationError):
    """Raised when an MMGF file cannot be parsed."""


class ClassId(enum.IntEnum):
    OTHER = 0
    EATING = 1
    DRINKING = 2


N_CLASSES = len(ClassId)
GESTURE_CLASSES = (ClassId.EATING, ClassId.DRINKING)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _require_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name}: contains non-finite values")


@dataclass(frozen=True, eq=False)
class RdtCube:
    """Radar range-Doppler-time magnitudes, shape ``[n_range, n_doppler, n_frames]``."""

    data: np.ndarray
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] < 1:
            raise ValidationError(f"radar: expected [range, doppler, N] with N >= 1, got {data.shape}")
        _require_finite("radar", data)
        object.__setattr__(self, "data", _frozen(data))

    @property
    def n_frames(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, RdtCube):
            return NotImplemented
        return self.frame_rate == other.frame_rate and _bit_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class ImuSequence:
    """Wrist IMU channels ``[n_channels, n_frames]``; acc in m/s^2, gyro in deg/s."""

    data: np.ndarray
    sample_rate: float = FRAME_RATE
    channel_layout: tuple[str, ...] = IMU_CHANNELS_TWO_HAND

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValidationError(f"imu: expected [channels, N], got {data.shape}")
        layout = tuple(self.channel_layout)
        if data.shape[0] not in (6, 12):
            raise ValidationError(f"imu: n_channels must be 6 or 12, got {data.shape[0]}")
        if len(layout) != data.shape[0]:
            raise ValidationError(f"imu: channel_layout has {len(layout)} names for {data.shape[0]} channels")
        _require_finite("imu", data)
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "channel_layout", layout)

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ImuSequence):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.channel_layout == other.channel_layout
            and _bit_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class LabelSequence:
    labels: np.ndarray
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ValidationError(f"labels: expected 1-D array, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
            raise ValidationError("labels: values outside {0, 1, 2}")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabelSequence):
            return NotImplemented
        return self.frame_rate == other.frame_rate and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class LogitSequence:
    """Per-frame class scores ``[3, N]``."""

    values: np.ndarray
    is_probability: bool = True

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != N_CLASSES:
            raise ValidationError(f"logits: expected [3, N], got {values.shape}")
        _require_finite("logits", values)
        if self.is_probability:
            if values.min(initial=0.0) < 0 or not np.allclose(values.sum(axis=0), 1.0, atol=1e-5):
                raise ValidationError("logits: columns are not probability vectors")
        object.__setattr__(self, "values", _frozen(values))

    def __len__(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, order=True)
class GestureSegment:
    start_frame: int
    end_frame: int
    class_id: ClassId

    def __post_init__(self):
        if not self.start_frame < self.end_frame:
            raise ValidationError(f"segment: start {self.start_frame} must precede end {self.end_frame}")
        object.__setattr__(self, "class_id", ClassId(self.class_id))

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame


@dataclass(frozen=True, eq=False)
class MealSession:
    session_id: str
    labels: LabelSequence
    radar: RdtCube | None = None
    imu: ImuSequence | None = None
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.radar is None and self.imu is None:
            raise ValidationError(f"session {self.session_id}: needs at least one of radar/imu")
        n = len(self.labels)
        for name, stream in (("radar", self.radar), ("imu", self.imu)):
            if stream is not None and stream.n_frames != n:
                raise ValidationError(
                    f"session {self.session_id}: {name} has {stream.n_frames} frames but labels have {n}"
                )
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n_frames(self) -> int:
        return len(self.labels)

    def without(self, modality: str) -> "MealSession":
        """Copy of the session with one modality dropped for the whole session."""
        if modality not in ("radar", "imu"):
            raise ValueError(f"unknown modality {modality!r}")
        kwargs = dict(session_id=self.session_id, labels=self.labels, radar=self.radar, imu=self.imu, meta=self.meta)
        kwargs[modality] = None
        return MealSession(**kwargs)

    def __eq__(self, other):
        if not isinstance(other, MealSession):
            return NotImplemented
        return (
            self.session_id == other.session_id
            and self.labels == other.labels
            and self.radar == other.radar
            and self.imu == other.imu
            and dict(self.meta) == dict(other.meta)
        )


def _bit_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


# --- MMGF binary tensors -------------------------------------------------

def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype not in _TAG_FOR_DTYPE:
        array = array.astype(np.float32)
    tag = _TAG_FOR_DTYPE[array.dtype]
    header = MAGIC + struct.pack("<BBB", FORMAT_VERSION, tag, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes()


def decode_tensor(blob: bytes, name: str = "<tensor>") -> np.ndarray:
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise FormatError(f"{name}: bad magic bytes")
    version, tag, rank = struct.unpack_from("<BBB", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{name}: unsupported version {version}")
    if tag not in DTYPE_TAGS:
        raise FormatError(f"{name}: unknown dtype tag {tag}")
    offset = 7 + 4 * rank
    if len(blob) < offset:
        raise FormatError(f"{name}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", blob, 7)
    dtype = DTYPE_TAGS[tag]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise FormatError(f"{name}: payload has {len(blob) - offset} bytes, expected {expected}")
    return np.frombuffer(blob, dtype=dtype, offset=offset).reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_tensor(array))
    except OSError as exc:
        raise OSError(f"cannot write tensor to {path}: {exc}") from exc


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read tensor from {path}: {exc}") from exc
    return decode_tensor(blob, str(path))


# --- segments --------------------------------------------------------------

def labels_to_segments(labels: LabelSequence | np.ndarray) -> list[GestureSegment]:
    """Maximal runs of identical non-Other labels, in temporal order."""
    y = labels.labels if isinstance(labels, LabelSequence) else np.asarray(labels)
    if y.size == 0:
        return []
    change = np.flatnonzero(np.diff(y)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [y.size]))
    return [
        GestureSegment(int(s), int(e), ClassId(int(y[s])))
        for s, e in zip(starts, ends)
        if y[s] != ClassId.OTHER
    ]


def paint_segments(segments: Iterable[GestureSegment], n_frames: int) -> np.ndarray:
    y = np.zeros(n_frames, dtype=np.int64)
    for seg in segments:
        y[seg.start_frame:seg.end_frame] = int(seg.class_id)
    return y


def _all_runs(y: np.ndarray) -> list[tuple[int, int, int]]:
    change = np.flatnonzero(np.diff(y)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [y.size]))
    return [(int(s), int(e), int(y[s])) for s, e in zip(starts, ends)]


# --- labels.csv ------------------------------------------------------------

def labels_to_csv(labels: LabelSequence) -> str:
    fps = labels.frame_rate
    out = io.StringIO()
    out.write("start_s,end_s,label\n")
    for s, e, c in _all_runs(labels.labels):
        out.write(f"{s / fps:.3f},{e / fps:.3f},{ClassId(c).name.lower()}\n")
    return out.getvalue()


def labels_from_csv(text: str, frame_rate: float = FRAME_RATE, source: str = "labels.csv") -> LabelSequence:
    """Parse ``start_s,end_s,label`` rows into a frame-level label sequence.

    Start times are floored and end times ceiled onto the frame grid.  Rows
    not covered by any interval are Other.  Overlapping rows of the same class
    are rejected; overlapping rows of different classes are painted in file
    order (later rows win) with a warning.
    """
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValidationError(f"{source}: no label rows")
    spans = []
    for i, row in enumerate(rows):
        try:
            start_s, end_s = float(row["start_s"]), float(row["end_s"])
            cls = ClassId[row["label"].strip().upper()]
        except (KeyError, ValueError, AttributeError) as exc:
            raise ValidationError(f"{source}: malformed row {i + 2}: {row}") from exc
        # tolerance guards against 0.28*25 = 6.9999... style float noise
        start = math.floor(start_s * frame_rate + 1e-6)
        end = math.ceil(end_s * frame_rate - 1e-6)
        if end <= start:
            raise ValidationError(f"{source}: empty interval on row {i + 2}")
        spans.append((start, end, cls))
    n = max(e for _, e, _ in spans)
    gestures = [sp for sp in spans if sp[2] != ClassId.OTHER]
    for i, (s1, e1, c1) in enumerate(gestures):
        for s2, e2, c2 in gestures[i + 1:]:
            if s1 < e2 and s2 < e1:
                if c1 == c2:
                    raise ValidationError(f"{source}: overlapping {c1.name.lower()} intervals")
                warnings.warn(f"{source}: {c1.name.lower()} and {c2.name.lower()} intervals overlap", stacklevel=2)
    y = np.zeros(n, dtype=np.int64)
    for s, e, c in gestures:
        y[s:e] = int(c)
    return LabelSequence(y, frame_rate)


# --- session directories ---------------------------------------------------

def _meta_text(session: MealSession) -> str:
    meta = dict(session.meta)
    meta["session_id"] = session.session_id
    meta["frame_rate"] = repr(float(session.labels.frame_rate))
    meta["n_frames"] = str(session.n_frames)
    if session.radar is not None:
        meta["radar_frame_rate"] = repr(float(session.radar.frame_rate))
    if session.imu is not None:
        meta["imu_sample_rate"] = repr(float(session.imu.sample_rate))
        meta["imu_channels"] = ",".join(session.imu.channel_layout)
    for k, v in meta.items():
        if "=" in k or "\n" in k or "\n" in str(v):
            raise ValidationError(f"meta: key/value {k!r} not representable as key=value line")
    return "".join(f"{k}={meta[k]}\n" for k in sorted(meta))


_RESERVED_META = ("session_id", "frame_rate", "n_frames", "radar_frame_rate", "imu_sample_rate", "imu_channels")


def save_session(session: MealSession, dir_path: str | Path) -> Path:
    d = Path(dir_path)
    try:
        d.mkdir(parents=True, exist_ok=True)
        for stale in ("radar.rdt", "imu.bin"):
            if (d / stale).exists():
                (d / stale).unlink()
        if session.radar is not None:
            write_tensor(d / "radar.rdt", session.radar.data)
        if session.imu is not None:
            write_tensor(d / "imu.bin", session.imu.data)
        (d / "labels.csv").write_text(labels_to_csv(session.labels))
        (d / "meta.txt").write_text(_meta_text(session))
    except OSError as exc:
        raise OSError(f"cannot save session to {d}: {exc}") from exc
    return d


def read_meta(path: str | Path) -> dict[str, str]:
    meta = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"{path}: malformed meta line {line!r}")
        meta[key] = value
    return meta


def load_session(dir_path: str | Path) -> MealSession:
    d = Path(dir_path)
    if not (d / "labels.csv").exists():
        raise ValidationError(f"{d}: labels.csv missing")
    meta = read_meta(d / "meta.txt") if (d / "meta.txt").exists() else {}
    fps = float(meta.get("frame_rate", FRAME_RATE))
    labels = labels_from_csv((d / "labels.csv").read_text(), fps, str(d / "labels.csv"))

    radar = imu = None
    if (d / "radar.rdt").exists():
        data = read_tensor(d / "radar.rdt")
        if data.ndim != 3:
            raise ValidationError(f"{d / 'radar.rdt'}: radar tensor must have rank 3")
        radar = RdtCube(data, float(meta.get("radar_frame_rate", fps)))
    if (d / "imu.bin").exists():
        data = read_tensor(d / "imu.bin")
        layout = meta.get("imu_channels")
        layout = tuple(layout.split(",")) if layout else IMU_CHANNELS_TWO_HAND[: data.shape[0]]
        imu = ImuSequence(data, float(meta.get("imu_sample_rate", fps)), layout)
    if radar is None and imu is None:
        raise ValidationError(f"{d}: no sensor file (radar.rdt or imu.bin)")

    session_id = meta.get("session_id", d.name)
    extra = {k: v for k, v in meta.items() if k not in _RESERVED_META}
    return MealSession(session_id, labels, radar, imu, extra)
