"""Cross-validated experiment: per fold, train both unimodal models and the fusion
framework, then evaluate five conditions (two unimodal, fused, and fused with one
modality removed for every test session)."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbone import DESK_RADAR, Radar3dConfig
from .data import MealSession, ValidationError
from .evaluation import EvalConfig, EvalReport, SegmentCounts, evaluate_fold, wilcoxon_signed_rank, write_csv, write_report
from .inference import predict_session
from .models import load_checkpoint, save_checkpoint
from .synth import PRESETS, SynthConfig, generate_sessions
from .trainer import TrainConfig, make_folds, train_fusion, train_unimodal

log = logging.getLogger(__name__)

CONDITIONS = ("Uni-IMU", "Uni-Radar", "Fusion", "Fusion-missing-IMU", "Fusion-missing-Radar")
CLASSES = ("eating", "drinking")



@dataclass(frozen=True)
class Profile:
    """Experiment scale.  ``duration_s`` and ``preset`` only matter when data is synthesised."""

    n_sessions: int | None
    epochs: int
    n_folds: int
    duration_s: float
    preset: str
    radar_arch: Radar3dConfig

    def train_config(self, base: TrainConfig = TrainConfig()) -> TrainConfig:
        return replace(base, epochs=self.epochs, radar_arch=self.radar_arch)


MEAN_MEAL_S = 1031.0  # 17.19 min average meal

PROFILES = {
    "smoke": Profile(6, 3, 2, 400.0, "default", DESK_RADAR),
    "desk": Profile(52, 30, 2, 160.0, "complementary", DESK_RADAR),
    "full": Profile(None, 100, 5, MEAN_MEAL_S, "default", Radar3dConfig()),
}

# (condition, baseline) pairs tested per class and threshold
COMPARISONS = (
    ("Fusion", "Uni-IMU"),
    ("Fusion", "Uni-Radar"),
    ("Fusion-missing-Radar", "Uni-IMU"),
    ("Fusion-missing-IMU", "Uni-Radar"),
)


@dataclass
class ExperimentResult:
    reports: dict[str, list[EvalReport]]  # condition -> one report per fold
    summary: list[dict]
    fusion_history: list[list[dict]] = field(default_factory=list)
    fusion_initial: list[dict] = field(default_factory=list)
    frozen_ok: list[bool] = field(default_factory=list)
    seconds: float = 0.0

    def kappa(self, condition: str) -> float:
        return float(np.mean([r.kappa for r in self.reports[condition]]))

    def f1(self, condition: str, cls: str, k: float) -> float:
        return float(np.mean([r.f1(cls, k) for r in self.reports[condition]]))


def synth_sessions(profile: Profile, seed: int = 0, base: SynthConfig = SynthConfig()) -> list[MealSession]:
    cfg = PRESETS[profile.preset](replace(base, duration_s=profile.duration_s))
    return generate_sessions(cfg, profile.n_sessions or 52, seed)


def _condition_inputs(session: MealSession, condition: str):
    if condition == "Fusion-missing-IMU":
        return session.without("imu"), "radar_only"
    if condition == "Fusion-missing-Radar":
        return session.without("radar"), "imu_only"
    return session, "both"


def _history_rows(result) -> list[dict]:
    rows = [{"epoch": -1, **result.initial}]
    return rows + result.history


def _train_or_load(path: Path, resume: bool, train):
    if (path / "manifest.json").exists():
        if not resume:
            raise ValidationError(f"{path} already holds a checkpoint; pass --resume to reuse it")
        model, manifest = load_checkpoint(path)
        return model, manifest, None
    result = train()
    return result.model, None, result


def run_experiment(sessions: Sequence[MealSession], out_dir, cfg: TrainConfig = TrainConfig(), n_folds: int = 5,
                   eval_cfg: EvalConfig = EvalConfig(), resume: bool = False, plots: bool = True) -> ExperimentResult:
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_id = {s.session_id: s for s in sessions}
    plan = make_folds(list(by_id), n_folds, cfg.seed)
    (out / "folds.json").write_text(json.dumps([list(f) for f in plan.folds], indent=2))
    (out / "config.json").write_text(json.dumps({**cfg.echo(), "n_folds": n_folds}, indent=2, sort_keys=True))

    reports: dict[str, list[EvalReport]] = {c: [] for c in CONDITIONS}
    fusion_history, fusion_initial, frozen_ok = [], [], []
    for k in range(len(plan)):
        fold_dir = out / f"fold_{k}"
        train = [by_id[i] for i in plan.train_ids(k)]
        test = [by_id[i] for i in plan.test_ids(k)]
        fold_cfg = replace(cfg, seed=cfg.seed + k)
        log.info("fold %d: %d train / %d test sessions", k, len(train), len(test))

        uni = {}
        for modality in ("imu", "radar"):
            path = fold_dir / f"uni_{modality}"
            model, _, result = _train_or_load(path, resume, lambda m=modality: train_unimodal(m, train, fold_cfg))
            if result is not None:
                save_checkpoint(model, path, extra={"config": result.config, "history": result.history,
                                                     "initial": result.initial})
                write_csv(fold_dir / f"loss_{modality}.csv", _history_rows(result))
            uni[modality] = model

        path = fold_dir / "fusion"
        framework, manifest, result = _train_or_load(path, resume, lambda: train_fusion(uni, train, fold_cfg))
        if result is not None:
            ok = result.frozen_before == result.frozen_after
            save_checkpoint(framework, path, frozen_prefixes=("imu", "radar"),
                            extra={"config": result.config, "history": result.history, "initial": result.initial,
                                   "frozen_digests": result.frozen_after, "frozen_unchanged": ok})
            write_csv(fold_dir / "loss_fusion.csv", _history_rows(result))
            fusion_history.append(result.history)
            fusion_initial.append(result.initial)
            frozen_ok.append(ok)
        else:
            fusion_history.append(manifest.get("history", []))
            fusion_initial.append(manifest.get("initial", {}))
            frozen_ok.append(bool(manifest.get("frozen_unchanged", True)))

        models = {"Uni-IMU": uni["imu"], "Uni-Radar": uni["radar"]}
        for condition in CONDITIONS:
            model = models.get(condition, framework)
            preds = {}
            for s in test:
                session, availability = _condition_inputs(s, condition)
                preds[s.session_id] = predict_session(session, model, availability, cfg.window)[1]
            report = evaluate_fold(preds, test, eval_cfg)
            write_report(report, fold_dir / "eval" / condition, fold=k, availability=condition)
            reports[condition].append(report)
            log.info("fold %d %-22s kappa %.3f", k, condition, report.kappa)

    result = ExperimentResult(reports, summarize(reports, eval_cfg), fusion_history, fusion_initial, frozen_ok,
                              time.time() - t0)
    write_outputs(result, out, eval_cfg, plots)
    return result


def summarize(reports: dict[str, list[EvalReport]], eval_cfg: EvalConfig) -> list[dict]:
    """Rows shaped like the paper's missing-modality table: condition x class x threshold."""
    rows = []
    for condition in CONDITIONS:
        kappas = [r.kappa for r in reports[condition]]
        for cls in CLASSES:
            for k in eval_cfg.thresholds:
                f1s = [r.f1(cls, k) for r in reports[condition]]
                rows.append({
                    "condition": condition, "class": cls, "k": k,
                    "f1_mean": float(np.mean(f1s)), "f1_std": float(np.std(f1s)),
                    "kappa_mean": float(np.mean(kappas)), "kappa_std": float(np.std(kappas)),
                })
    return rows


def _per_session(reports: dict[str, list[EvalReport]], condition: str, cls: str, k: float) -> dict[str, float]:
    out = {}
    for r in reports[condition]:
        for sid, d in r.per_session_f1.items():
            out[sid] = d[cls][k]
    return out


def significance(reports: dict[str, list[EvalReport]], eval_cfg: EvalConfig) -> list[dict]:
    rows = []
    for a, b in COMPARISONS:
        for cls in CLASSES:
            for k in eval_cfg.thresholds:
                fa, fb = _per_session(reports, a, cls, k), _per_session(reports, b, cls, k)
                ids = sorted(fa)
                try:
                    p = wilcoxon_signed_rank([fa[i] for i in ids], [fb[i] for i in ids])
                    note = ""
                except ValidationError as exc:
                    p, note = float("nan"), str(exc)
                rows.append({"condition": a, "baseline": b, "class": cls, "k": k, "p_value": p, "note": note})
    return rows


def style_table(reports: dict[str, list[EvalReport]]) -> list[dict]:
    rows = []
    for condition in CONDITIONS:
        pooled: dict = {}
        for r in reports[condition]:
            for style, by_cls in r.style_errors.items():
                for cls, by_k in by_cls.items():
                    for k, c in by_k.items():
                        key = (style, cls, k)
                        pooled[key] = pooled.get(key, SegmentCounts()) + c
        for (style, cls, k), c in sorted(pooled.items()):
            rows.append({"condition": condition, "style": style, "class": cls, "k": k,
                         "n_tp": c.tp, "n_fp": c.fp, "n_fn": c.fn, "f1": c.f1})
    return rows


def write_outputs(result: ExperimentResult, out: Path, eval_cfg: EvalConfig, plots: bool = True) -> None:
    write_csv(out / "table.csv", result.summary)
    sig = significance(result.reports, eval_cfg)
    write_csv(out / "significance.csv", sig)
    styles = style_table(result.reports)
    write_csv(out / "style_errors.csv", styles)
    box = [
        {"condition": c, "session": sid, "class": cls, "k": k, "f1": f1}
        for c in CONDITIONS for cls in CLASSES for k in eval_cfg.thresholds
        for sid, f1 in sorted(_per_session(result.reports, c, cls, k).items())
    ]
    write_csv(out / "per_session_f1.csv", box)
    summary = {
        "kappa": {c: result.kappa(c) for c in CONDITIONS},
        "f1": {c: {cls: {str(k): result.f1(c, cls, k) for k in eval_cfg.thresholds} for cls in CLASSES}
               for c in CONDITIONS},
        "frozen_unchanged": result.frozen_ok,
        "seconds": result.seconds,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    if plots:
        render_plots(out, box, styles, eval_cfg)


def render_plots(out: Path, box: list[dict], styles: list[dict], eval_cfg: EvalConfig) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(10, 4))
    groups = [(cls, k) for cls in CLASSES for k in eval_cfg.thresholds]
    width = 0.8 / len(CONDITIONS)
    for ci, c in enumerate(CONDITIONS):
        data = [[r["f1"] for r in box if r["condition"] == c and r["class"] == cls and r["k"] == k]
                for cls, k in groups]
        pos = np.arange(len(groups)) + (ci - (len(CONDITIONS) - 1) / 2) * width
        bp = ax.boxplot(data, positions=pos, widths=width * 0.9, patch_artist=True, manage_ticks=False)
        for patch in bp["boxes"]:
            patch.set_facecolor(plt.cm.tab10(ci))
        ax.plot([], [], color=plt.cm.tab10(ci), lw=6, label=c)
    ax.set_xticks(np.arange(len(groups)))
    ax.set_xticklabels([f"{cls[:5].title()}-{int(k * 100)}" for cls, k in groups])
    ax.set_ylabel("segmental F1")
    ax.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    fig.savefig(out / "per_session_f1.png", dpi=120)
    plt.close(fig)

    k = max(eval_cfg.thresholds)
    style_names = sorted({r["style"] for r in styles})
    fig, ax = plt.subplots(figsize=(7, 4))
    shown = ("Uni-IMU", "Uni-Radar", "Fusion")
    for ci, c in enumerate(shown):
        vals = [next((r["f1"] for r in styles if r["condition"] == c and r["style"] == s
                      and r["class"] == "eating" and r["k"] == k), np.nan) for s in style_names]
        ax.bar(np.arange(len(style_names)) + (ci - 1) * 0.27, vals, width=0.27, label=c)
    ax.set_xticks(np.arange(len(style_names)))
    ax.set_xticklabels(style_names)
    ax.set_ylabel(f"eating F1 (k={k})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "style_f1.png", dpi=120)
    plt.close(fig)
