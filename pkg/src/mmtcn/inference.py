"""Session-level prediction with availability routing, window stitching and argmax decoding."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch

from .data import LabelSequence, LogitSequence, MealSession, ValidationError
from .models import AVAILABILITY, MultimodalFramework, UnimodalModel, prepare_session
from .preprocess import WindowSpec, stitch, window_session


class RoutingError(ValidationError):
    """The requested availability needs a stream the session does not have."""


def decode_labels(p: LogitSequence | np.ndarray) -> LabelSequence:
    """Per-frame argmax; ties resolve to the lower class index."""
    values = p.values if isinstance(p, LogitSequence) else np.asarray(p)
    return LabelSequence(np.argmax(values, axis=0))


def _required(availability: str) -> tuple[str, ...]:
    return {"both": ("radar", "imu"), "imu_only": ("imu",), "radar_only": ("radar",)}[availability]


def _window_probs(model, windows, availability, batch_size, dtype):
    outputs = []
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            chunk = windows[i:i + batch_size]

            def stack(attr):
                if getattr(chunk[0], attr) is None:
                    return None
                return torch.from_numpy(np.stack([getattr(w, attr) for w in chunk])).to(dtype)

            if isinstance(model, UnimodalModel):
                p = model(stack(model.modality))
            else:
                x_r = stack("radar") if availability in ("both", "radar_only") else None
                x_i = stack("imu") if availability in ("both", "imu_only") else None
                p = model(x_r, x_i, availability)
            outputs.extend(p.double().numpy())
    return outputs


def predict_session(session: MealSession, model, availability: str = "both",
                    window: WindowSpec = WindowSpec(), batch_size: int = 4) -> tuple[LogitSequence, LabelSequence]:
    """Predict per-frame class probabilities for a whole session.

    ``model`` is a :class:`MultimodalFramework` (routed by ``availability``) or a
    :class:`UnimodalModel` (``availability`` must then name its modality or be
    ``both``).  Overlapping windows (stride < window) are blended by averaging
    log-probabilities.
    """
    if availability not in AVAILABILITY:
        raise ValidationError(f"unknown availability {availability!r}; choose from {AVAILABILITY}")
    if isinstance(model, UnimodalModel):
        needed = (model.modality,)
        if availability not in ("both", f"{model.modality}_only"):
            raise RoutingError(f"unimodal {model.modality} model cannot run with availability={availability}")
    elif isinstance(model, MultimodalFramework):
        needed = _required(availability)
    else:
        raise ValidationError(f"cannot predict with {type(model).__name__}")
    absent = [m for m in needed if getattr(session, m) is None]
    if absent:
        raise RoutingError(
            f"session {session.session_id}: availability={availability} needs {', '.join(absent)} but it is absent"
        )

    prepared = prepare_session(session, model.prep)
    windows, smap = window_session(prepared, window)
    dtype = next(model.parameters()).dtype
    probs = _window_probs(model, windows, availability, batch_size, dtype)
    if window.stride_frames == window.window_frames:
        p = stitch(probs, smap)
    else:
        logp = stitch([np.log(np.clip(q, 1e-12, None)) for q in probs], smap)
        p = np.exp(logp - logp.max(axis=0, keepdims=True))
        p /= p.sum(axis=0, keepdims=True)
    logits = LogitSequence(p, is_probability=True)
    return logits, decode_labels(logits)


def write_predictions(path, logits: LogitSequence, labels: LabelSequence) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "p_other", "p_eat", "p_drink", "label"])
        for t in range(len(labels)):
            p = logits.values[:, t]
            w.writerow([t, f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}", int(labels.labels[t])])
    return path


def read_predictions(path) -> tuple[np.ndarray, LabelSequence]:
    rows = list(csv.DictReader(Path(path).open()))
    if not rows:
        raise ValidationError(f"{path}: no prediction rows")
    p = np.array([[float(r["p_other"]), float(r["p_eat"]), float(r["p_drink"])] for r in rows]).T
    return p, LabelSequence(np.array([int(r["label"]) for r in rows]))
