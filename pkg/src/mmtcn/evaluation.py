"""Sample-wise Cohen's kappa, IoU-based segment matching and segmental F1, error
breakdowns by eating style, and the Wilcoxon signed-rank test."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import GESTURE_CLASSES, N_CLASSES, ClassId, GestureSegment, LabelSequence, MealSession, ValidationError, labels_to_segments


@dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple[float, ...] = (0.1, 0.5)

    def __post_init__(self):
        for k in self.thresholds:
            if not 0 < k <= 1:
                raise ValidationError(f"eval: threshold {k} outside (0, 1]")


@dataclass(frozen=True)
class SegmentCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "SegmentCounts") -> "SegmentCounts":
        return SegmentCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0

    @property
    def f1(self) -> float:
        return segmental_f1(self)


def _array(y) -> np.ndarray:
    return y.labels if isinstance(y, LabelSequence) else np.asarray(y)


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    a, b = _array(y_true), _array(y_pred)
    if a.shape != b.shape:
        raise ValidationError(f"kappa: length mismatch {a.shape} vs {b.shape}")
    return np.bincount(a * n_classes + b, minlength=n_classes**2).reshape(n_classes, n_classes)


def cohen_kappa(y_true, y_pred) -> float:
    cm = confusion_matrix(y_true, y_pred).astype(np.float64)
    n = cm.sum()
    if n == 0:
        raise ValidationError("kappa: empty sequences")
    p_o = np.trace(cm) / n
    p_e = float(cm.sum(axis=0) @ cm.sum(axis=1)) / n**2
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1 - p_e))


def iou(a: GestureSegment, b: GestureSegment) -> float:
    inter = max(0, min(a.end_frame, b.end_frame) - max(a.start_frame, b.start_frame))
    union = a.length + b.length - inter
    return inter / union


def _check_sorted(segs: Sequence[GestureSegment], what: str) -> None:
    for s1, s2 in zip(segs, segs[1:]):
        if s2.start_frame < s1.start_frame:
            raise ValidationError(f"match_segments: {what} segments are not sorted")


def match_pairs(gt: Sequence[GestureSegment], pred: Sequence[GestureSegment], k: float) -> dict[int, int]:
    """One-to-one matching ``{pred index: gt index}`` with IoU >= k.

    Predictions are visited in temporal order and take their best-IoU free
    ground truth.  When none is free, an augmenting path may re-route earlier
    matches, which keeps the number of matches maximal when a prediction
    overlaps several ground-truth segments (possible for k < 0.5).
    """
    cand = []
    for p in pred:
        scored = [(iou(p, g), j) for j, g in enumerate(gt)]
        cand.append([j for s, j in sorted(scored, key=lambda t: (-t[0], t[1])) if s >= k])
    owner: dict[int, int] = {}

    def augment(i: int, seen: set[int]) -> bool:
        for j in cand[i]:
            if j in seen:
                continue
            seen.add(j)
            if j not in owner or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    for i in range(len(pred)):
        free = [j for j in cand[i] if j not in owner]
        if free:
            owner[free[0]] = i
        else:
            augment(i, set())
    return {i: j for j, i in owner.items()}


def match_segments(gt: Sequence[GestureSegment], pred: Sequence[GestureSegment], k: float,
                   class_id: ClassId | None = None) -> SegmentCounts:
    """Segment-wise TP/FP/FN for one class.

    If ``class_id`` is given, segments of other classes are ignored, so a
    prediction of the wrong class counts as FP for its own class and the
    missed ground truth as FN for the true class.
    """
    if class_id is not None:
        gt = [g for g in gt if g.class_id == class_id]
        pred = [p for p in pred if p.class_id == class_id]
    elif len({s.class_id for s in list(gt) + list(pred)}) > 1:
        raise ValidationError("match_segments: mixed classes; pass class_id")
    _check_sorted(gt, "ground-truth")
    _check_sorted(pred, "predicted")
    tp = len(match_pairs(gt, pred, k))
    return SegmentCounts(tp, len(pred) - tp, len(gt) - tp)


def segmental_f1(counts: SegmentCounts) -> float:
    denom = 2 * counts.tp + counts.fp + counts.fn
    return 1.0 if denom == 0 else 2 * counts.tp / denom


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided p-value, normal approximation with tie correction, zero differences dropped."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("wilcoxon: samples must have equal length")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n < 6:
        raise ValidationError(f"wilcoxon: only {n} non-zero differences (need >= 6)")
    ranks = rankdata(np.abs(d))
    w_plus = ranks[d > 0].sum()
    mean = n * (n + 1) / 4
    _, counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - (counts**3 - counts).sum() / 48
    if var <= 0:
        return 1.0
    z = (w_plus - mean) / math.sqrt(var)
    return float(math.erfc(abs(z) / math.sqrt(2)))


@dataclass
class EvalReport:
    kappa: float
    per_session_kappa: dict[str, float]
    counts: dict[str, dict[float, SegmentCounts]]  # class name -> k -> pooled counts
    per_session_f1: dict[str, dict[str, dict[float, float]]]
    style_errors: dict[str, dict[str, dict[float, SegmentCounts]]]
    thresholds: tuple[float, ...] = field(default=(0.1, 0.5))

    def f1(self, cls: str, k: float) -> float:
        return self.counts[cls][k].f1

    def rows(self, **extra) -> list[dict]:
        out = []
        for cls, by_k in self.counts.items():
            for k, c in by_k.items():
                out.append({**extra, "class": cls, "k": k, "tp": c.tp, "fp": c.fp, "fn": c.fn,
                            "precision": c.precision, "recall": c.recall, "f1": c.f1, "kappa": self.kappa})
        return out

    def style_rows(self, **extra) -> list[dict]:
        return [
            {**extra, "style": style, "class": cls, "k": k, "n_fp": c.fp, "n_fn": c.fn, "n_tp": c.tp}
            for style, by_cls in sorted(self.style_errors.items())
            for cls, by_k in by_cls.items()
            for k, c in by_k.items()
        ]

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "per_session_kappa": self.per_session_kappa,
            "segment": {cls: {str(k): {**asdict(c), "f1": c.f1} for k, c in by_k.items()}
                        for cls, by_k in self.counts.items()},
            "per_session_f1": {sid: {cls: {str(k): v for k, v in by_k.items()} for cls, by_k in d.items()}
                               for sid, d in self.per_session_f1.items()},
            "style_errors": {s: {cls: {str(k): asdict(c) for k, c in by_k.items()} for cls, by_k in d.items()}
                             for s, d in self.style_errors.items()},
        }


def evaluate_fold(pred_sessions: Mapping[str, LabelSequence], gt_sessions: Sequence[MealSession],
                  cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Pooled kappa, pooled per-class segment counts, per-session F1 and per-style errors."""
    y_true, y_pred = [], []
    per_kappa = {}
    counts = {c.name.lower(): {k: SegmentCounts() for k in cfg.thresholds} for c in GESTURE_CLASSES}
    per_f1: dict[str, dict[str, dict[float, float]]] = {}
    styles: dict = defaultdict(lambda: {c.name.lower(): {k: SegmentCounts() for k in cfg.thresholds}
                                        for c in GESTURE_CLASSES})
    for gt in gt_sessions:
        if gt.session_id not in pred_sessions:
            raise ValidationError(f"evaluate: no prediction for session {gt.session_id}")
        pred = pred_sessions[gt.session_id]
        if len(pred) != len(gt.labels):
            raise ValidationError(f"evaluate: {gt.session_id} prediction length {len(pred)} != {len(gt.labels)}")
        y_true.append(gt.labels.labels)
        y_pred.append(_array(pred))
        per_kappa[gt.session_id] = cohen_kappa(gt.labels, pred)
        gt_segs, pred_segs = labels_to_segments(gt.labels), labels_to_segments(pred)
        style = gt.meta.get("eating_style", "unknown")
        per_f1[gt.session_id] = {}
        for c in GESTURE_CLASSES:
            name = c.name.lower()
            per_f1[gt.session_id][name] = {}
            for k in cfg.thresholds:
                sc = match_segments(gt_segs, pred_segs, k, c)
                counts[name][k] = counts[name][k] + sc
                styles[style][name][k] = styles[style][name][k] + sc
                per_f1[gt.session_id][name][k] = sc.f1
    kappa = cohen_kappa(np.concatenate(y_true), np.concatenate(y_pred))
    return EvalReport(kappa, per_kappa, counts, per_f1, dict(styles), tuple(cfg.thresholds))


def write_report(report: EvalReport, out_dir, **extra) -> Path:
    """Write ``report.json``, ``report.csv`` and ``style_errors.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps({**extra, **report.to_json()}, indent=2, sort_keys=True))
    write_csv(out / "report.csv", report.rows(**extra))
    write_csv(out / "style_errors.csv", report.style_rows(**extra))
    return out


def write_csv(path, rows: Sequence[dict]) -> None:
    rows = list(rows)
    with Path(path).open("w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
