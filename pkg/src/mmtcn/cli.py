"""Command-line entry point: ``mmtcn <command>``.

Configs are plain ``key=value`` files; command-line flags override them and
every command writes the effective values to a ``config.txt`` echo next to
its outputs.  Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import runtime
from .backbone import DESK_RADAR, Radar3dConfig
from .data import ValidationError, load_session, save_session
from .evaluation import EvalConfig, evaluate_fold, write_report
from .experiment import PROFILES, render_plots, run_experiment
from .inference import predict_session, read_predictions, write_predictions
from .models import load_checkpoint, prepare_session, save_checkpoint
from .preprocess import WindowSpec
from .synth import PRESETS, config_from_mapping, dataset_hash, generate_dataset
from .trainer import TrainConfig, train_fusion, train_unimodal

log = logging.getLogger("mmtcn")

RADAR_ARCHS = {"desk": DESK_RADAR, "paper": Radar3dConfig()}
TRAIN_KEYS = ("lr", "epochs", "batch_size", "seed", "window_frames", "stride_frames", "tau", "lam", "beta",
              "fusion", "end_to_end", "radar_arch", "remove_clutter", "imu_mode")


def read_kv(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    if path is None:
        return {}
    out = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"{path}:{i}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def write_kv(path, values: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(f"{k}={values[k]}\n" for k in sorted(values)))


def _bool(v) -> bool:
    return str(v).strip().lower() in ("1", "true", "yes")


def train_config(values: dict[str, str], base: TrainConfig = TrainConfig()) -> TrainConfig:
    unknown = set(values) - set(TRAIN_KEYS)
    if unknown:
        raise ValidationError(f"train config: unknown key {sorted(unknown)[0]!r}")
    v = dict(values)
    window = WindowSpec(int(v.get("window_frames", base.window.window_frames)),
                        int(v.get("stride_frames", v.get("window_frames", base.window.stride_frames))))
    loss = replace(base.loss, **{k: float(v[k]) for k in ("tau", "lam", "beta") if k in v})
    arch = v.get("radar_arch")
    if arch is not None and arch not in RADAR_ARCHS:
        raise ValidationError(f"train config: radar_arch must be one of {sorted(RADAR_ARCHS)}")
    prep = dict(base.prep)
    if "remove_clutter" in v:
        prep["remove_clutter"] = _bool(v["remove_clutter"])
    if "imu_mode" in v:
        prep["imu_mode"] = v["imu_mode"]
    return replace(
        base,
        lr=float(v.get("lr", base.lr)),
        epochs=int(v.get("epochs", base.epochs)),
        batch_size=int(v.get("batch_size", base.batch_size)),
        seed=int(v.get("seed", base.seed)),
        window=window,
        loss=loss,
        fusion=v.get("fusion", base.fusion),
        end_to_end=_bool(v.get("end_to_end", base.end_to_end)),
        radar_arch=RADAR_ARCHS[arch] if arch else base.radar_arch,
        prep=prep,
    )


def echo_values(cfg: TrainConfig) -> dict:
    e = cfg.echo()
    arch = next((k for k, a in RADAR_ARCHS.items() if a == cfg.radar_arch), "custom")
    return {
        "lr": e["lr"], "epochs": e["epochs"], "batch_size": e["batch_size"], "seed": e["seed"],
        "window_frames": e["window_frames"], "stride_frames": e["stride_frames"], "tau": e["tau"],
        "lam": e["lambda"], "beta": e["beta"], "fusion": e["fusion"], "end_to_end": e["end_to_end"],
        "radar_arch": arch, "remove_clutter": cfg.prep["remove_clutter"], "imu_mode": cfg.prep["imu_mode"],
    }


def _overrides(**flags) -> dict[str, str]:
    return {k: str(v) for k, v in flags.items() if v is not None}


def _load_dataset(path, limit: int | None = None):
    root = Path(path)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "labels.csv").exists()) if root.is_dir() else []
    if not dirs:
        raise ValidationError(f"{root}: no session directories found")
    return [load_session(d) for d in dirs[:limit]]


config_option = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                              help="key=value config file")
seed_option = click.option("--seed", type=int, help="overrides the config seed")


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool) -> None:
    """Radar + IMU intake-gesture detection with robust multimodal fusion."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(asctime)s %(message)s")
    runtime.configure()


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@config_option
@seed_option
@click.option("--sessions", type=int, help="number of sessions (default 52)")
@click.option("--preset", type=click.Choice(sorted(PRESETS)))
@click.option("--duration", type=float, help="session duration in seconds")
def synth(out_dir, config_path, seed, sessions, preset, duration):
    """Generate a synthetic dataset of paired radar/IMU sessions."""
    values = read_kv(config_path)
    values.update(_overrides(seed=seed, sessions=sessions, preset=preset, duration_s=duration))
    master = int(values.pop("seed", 0))
    n = int(values.pop("sessions", 52))
    preset_name = values.pop("preset", "default")
    if preset_name not in PRESETS:
        raise ValidationError(f"synth config: unknown preset {preset_name!r}")
    cfg = PRESETS[preset_name](config_from_mapping(values))
    out = Path(out_dir)
    generate_dataset(cfg, n, master, out)
    digest = dataset_hash(out)
    manifest = {"master_seed": master, "sessions": n, "preset": preset_name, "dataset_sha256": digest}
    (out.parent / f"{out.name}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    write_kv(out.parent / f"{out.name}.config.txt", {**values, "seed": master, "sessions": n, "preset": preset_name})
    click.echo(f"{n} sessions -> {out} (sha256 {digest[:16]})")


@main.command()
@click.argument("session_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--imu-mode", type=click.Choice(["two_hand", "one_hand"]), default="two_hand")
@click.option("--no-clutter-removal", is_flag=True)
def preprocess(session_dir, out_dir, imu_mode, no_clutter_removal):
    """Apply clutter removal / IMU channel selection and save the conditioned session."""
    session = load_session(session_dir)
    prep = {"remove_clutter": not no_clutter_removal, "imu_mode": imu_mode}
    save_session(prepare_session(session, prep), out_dir)
    write_kv(Path(out_dir).parent / f"{Path(out_dir).name}.config.txt", prep)
    click.echo(f"{session.session_id}: {session.n_frames} frames -> {out_dir}")


def _train_options(f):
    for opt in reversed([
        config_option, seed_option,
        click.option("--epochs", type=int), click.option("--lr", type=float),
        click.option("--radar-arch", type=click.Choice(sorted(RADAR_ARCHS))),
    ]):
        f = opt(f)
    return f


@main.command("train-unimodal")
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--modality", type=click.Choice(["imu", "radar"]), required=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_train_options
def train_unimodal_cmd(dataset_dir, modality, out_dir, config_path, seed, epochs, lr, radar_arch):
    """Train one modality's encoder and predictor."""
    values = read_kv(config_path)
    values.update(_overrides(seed=seed, epochs=epochs, lr=lr, radar_arch=radar_arch))
    cfg = train_config(values)
    result = train_unimodal(modality, _load_dataset(dataset_dir), cfg)
    save_checkpoint(result.model, out_dir, extra={"config": result.config, "history": result.history,
                                                  "initial": result.initial})
    write_kv(Path(out_dir) / "config.txt", echo_values(cfg))
    click.echo(f"{modality}: loss {result.initial['loss']:.4f} -> {result.history[-1]['loss']:.4f}"
               if result.history else f"{modality}: no epochs run")


@main.command("train-fusion")
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--imu", "imu_ckpt", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--radar", "radar_ckpt", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_train_options
def train_fusion_cmd(dataset_dir, imu_ckpt, radar_ckpt, out_dir, config_path, seed, epochs, lr, radar_arch):
    """Train adapters, fusion and multimodal predictor on top of frozen unimodal models."""
    values = read_kv(config_path)
    values.update(_overrides(seed=seed, epochs=epochs, lr=lr, radar_arch=radar_arch))
    cfg = train_config(values)
    uni = {"imu": load_checkpoint(imu_ckpt)[0], "radar": load_checkpoint(radar_ckpt)[0]}
    result = train_fusion(uni, _load_dataset(dataset_dir), cfg)
    ok = result.frozen_before == result.frozen_after
    save_checkpoint(result.model, out_dir, frozen_prefixes=("imu", "radar"),
                    extra={"config": result.config, "history": result.history, "initial": result.initial,
                           "frozen_digests": result.frozen_after, "frozen_unchanged": ok})
    write_kv(Path(out_dir) / "config.txt", echo_values(cfg))
    if not ok:
        raise RuntimeError("frozen unimodal parameters changed during fusion training")
    click.echo(f"fusion: total {result.initial['total']:.4f} -> "
               f"{result.history[-1]['total'] if result.history else result.initial['total']:.4f}")


@main.command()
@click.argument("session_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--availability", type=click.Choice(["both", "imu_only", "radar_only"]), default="both")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--stride", type=int, help="window stride in frames (default: window length)")
def predict(session_dir, model_dir, availability, out_path, stride):
    """Write per-frame class probabilities and labels for one session."""
    model, _ = load_checkpoint(model_dir)
    session = load_session(session_dir)
    window = WindowSpec(1000, stride or 1000)
    logits, labels = predict_session(session, model, availability, window)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out_path, logits, labels)
    click.echo(f"{session.session_id}: {len(labels)} frames -> {out_path}")


@main.command()
@click.argument("predictions", type=click.Path(exists=True))
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--availability", default="both")
def evaluate(predictions, dataset_dir, out_dir, availability):
    """Score predictions (a CSV named <session_id>.csv, or a directory of them) against labels."""
    pred_path = Path(predictions)
    files = sorted(pred_path.glob("*.csv")) if pred_path.is_dir() else [pred_path]
    preds = {f.stem: read_predictions(f)[1] for f in files}
    sessions = [s for s in _load_dataset(dataset_dir) if s.session_id in preds]
    if len(sessions) != len(preds):
        missing = sorted(set(preds) - {s.session_id for s in sessions})
        raise ValidationError(f"no ground truth for predictions {missing[:5]}")
    report = evaluate_fold(preds, sessions, EvalConfig())
    write_report(report, out_dir, availability=availability)
    click.echo(f"kappa {report.kappa:.3f}; F1@0.5 eating {report.f1('eating', 0.5):.3f} "
               f"drinking {report.f1('drinking', 0.5):.3f}")


@main.command("run-experiment")
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--profile", type=click.Choice(sorted(PROFILES)), default="smoke")
@click.option("--resume", is_flag=True, help="reuse finished fold checkpoints in OUT_DIR")
@click.option("--no-plots", is_flag=True)
@_train_options
def run_experiment_cmd(dataset_dir, out_dir, profile, resume, no_plots, config_path, seed, epochs, lr, radar_arch):
    """Cross-validated comparison of Uni-IMU, Uni-Radar, Fusion and both missing-modality conditions."""
    prof = PROFILES[profile]
    values = read_kv(config_path)
    values.update(_overrides(seed=seed, epochs=epochs, lr=lr, radar_arch=radar_arch))
    cfg = train_config(values, prof.train_config())
    sessions = _load_dataset(dataset_dir, prof.n_sessions)
    write_kv(Path(out_dir) / "config.txt", {**echo_values(cfg), "profile": profile, "n_folds": prof.n_folds})
    result = run_experiment(sessions, out_dir, cfg, prof.n_folds, resume=resume, plots=not no_plots)
    _print_table(result.summary)
    click.echo(f"done in {result.seconds:.0f} s -> {out_dir}")


def _print_table(rows) -> None:
    click.echo(f"{'condition':<22}{'class':<10}{'k':>5}{'F1':>8}{'kappa':>8}")
    for r in rows:
        click.echo(f"{r['condition']:<22}{r['class']:<10}{float(r['k']):>5.1f}"
                   f"{float(r['f1_mean']):>8.3f}{float(r['kappa_mean']):>8.3f}")


@main.command()
@click.argument("out_dir", type=click.Path(exists=True, file_okay=False))
def report(out_dir):
    """Print the consolidated table of a finished experiment and re-render its figures."""
    out = Path(out_dir)
    table = out / "table.csv"
    if not table.exists():
        raise ValidationError(f"{out}: no table.csv; run run-experiment first")
    rows = list(csv.DictReader(table.open()))
    _print_table(rows)

    def typed(path):
        return [{**r, "k": float(r["k"]), "f1": float(r["f1"])} for r in csv.DictReader(path.open())]

    ks = tuple(sorted({float(r["k"]) for r in rows}))
    render_plots(out, typed(out / "per_session_f1.csv"), typed(out / "style_errors.csv"), EvalConfig(ks))
    click.echo(f"figures -> {out / 'per_session_f1.png'}, {out / 'style_f1.png'}")


def run(argv=None) -> int:
    """Invoke the CLI and map failures to exit codes (1 invalid input, 2 runtime failure)."""
    try:
        main.main(args=argv, prog_name="mmtcn", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        click.echo(f"runtime failure: {type(exc).__name__}: {exc}", err=True)
        return 2
    return 0


def entry() -> None:
    sys.exit(run())


if __name__ == "__main__":
    entry()
