"""Two-step training: unimodal encoder+predictor pairs first, then adapters and fusion
on top of the frozen unimodal models.  Also fold planning."""

from __future__ import annotations

import copy
import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .backbone import ImuEncoder, Radar3dConfig, RadarEncoder, TcnConfig, fit_imu_norm, fit_radar_norm
from .data import MealSession, ValidationError
from .fusion import CmaConfig, FusionHead
from .losses import LossConfig, adaptation_loss, cls_loss, total_loss
from .mae import mae_like
from .models import DEFAULT_PREP, MODALITIES, MultimodalFramework, UnimodalModel, prepare_session, state_digests
from .preprocess import Window, WindowSpec, window_session
from .runtime import float_dtype

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    epochs: int = 100
    batch_size: int = 4
    window: WindowSpec = WindowSpec()
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    loss: LossConfig = LossConfig()
    imu_arch: TcnConfig = TcnConfig()
    radar_arch: Radar3dConfig = Radar3dConfig()
    fusion: str = "cma"
    cma: CmaConfig = CmaConfig()
    end_to_end: bool = False
    prep: dict = field(default_factory=lambda: dict(DEFAULT_PREP))

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("train: lr and batch_size must be positive, epochs non-negative")

    def echo(self) -> dict:
        return {
            "lr": self.lr, "epochs": self.epochs, "batch_size": self.batch_size,
            "window_frames": self.window.window_frames, "stride_frames": self.window.stride_frames,
            "seed": self.seed, "optimizer": "adam", "betas": list(self.betas), "eps": self.eps,
            "tau": self.loss.tau, "lambda": self.loss.lam, "beta": self.loss.beta,
            "fusion": self.fusion, "end_to_end": self.end_to_end, "prep": self.prep,
        }


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[str, ...], ...]  # test session ids per fold
    all_ids: tuple[str, ...]

    def train_ids(self, k: int) -> tuple[str, ...]:
        test = set(self.folds[k])
        return tuple(s for s in self.all_ids if s not in test)

    def test_ids(self, k: int) -> tuple[str, ...]:
        return self.folds[k]

    def __len__(self) -> int:
        return len(self.folds)


def make_folds(session_ids: Sequence[str], n_folds: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded session-level partition; leftover sessions go to the last folds (52 -> 10,10,10,11,11)."""
    ids = list(dict.fromkeys(session_ids))
    if len(ids) != len(session_ids):
        raise ValidationError("make_folds: duplicate session ids")
    if n_folds < 2 or len(ids) < n_folds:
        raise ValidationError(f"make_folds: need at least {max(n_folds, 2)} sessions for {n_folds} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    base, extra = divmod(len(ids), n_folds)
    sizes = [base + (1 if k >= n_folds - extra else 0) for k in range(n_folds)]
    folds, pos = [], 0
    for size in sizes:
        folds.append(tuple(ids[i] for i in order[pos:pos + size]))
        pos += size
    return FoldPlan(tuple(folds), tuple(ids))


def component_seed(seed: int, name: str) -> int:
    """Independent RNG stream per named component, derived from the master seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list[dict]
    initial: dict
    config: dict
    frozen_before: dict = field(default_factory=dict)
    frozen_after: dict = field(default_factory=dict)
    val_history: list[dict] = field(default_factory=list)


def collect_windows(sessions: Sequence[MealSession], spec: WindowSpec, prep: dict) -> list[Window]:
    # non-overlapping training windows
    spec = WindowSpec(spec.window_frames, spec.window_frames, spec.pad_mode)
    out = []
    for s in sessions:
        out.extend(window_session(prepare_session(s, prep), spec)[0])
    return out


def _stack(windows: Sequence[Window], attr: str, dtype) -> torch.Tensor:
    return torch.from_numpy(np.stack([getattr(w, attr) for w in windows])).to(dtype)


def _labels(windows: Sequence[Window]) -> torch.Tensor:
    return torch.from_numpy(np.stack([w.labels for w in windows])).long()


def batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index batches covering every window exactly once."""
    order = np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _check_finite(value: torch.Tensor, where: str) -> float:
    v = float(value.detach())
    if not math.isfinite(v):
        raise TrainingDiverged(f"non-finite loss ({v}) at {where}")
    return v


def _adam(params, cfg: TrainConfig):
    params = [p for p in params if p.requires_grad]
    return torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)


def build_unimodal(modality: str, cfg: TrainConfig, windows: Sequence[Window]) -> UnimodalModel:
    torch.manual_seed(component_seed(cfg.seed, f"init-{modality}"))
    if modality == "imu":
        encoder = ImuEncoder(windows[0].imu.shape[0], cfg.imu_arch)
        fit_imu_norm(encoder, [w.imu[:, : w.n_valid] for w in windows])
    else:
        encoder = RadarEncoder(cfg.radar_arch)
        fit_radar_norm(encoder, [w.radar[:, :, : w.n_valid] for w in windows])
    return UnimodalModel(modality, encoder, prep=cfg.prep).to(float_dtype())


def train_unimodal(modality: str, train_sessions: Sequence[MealSession], cfg: TrainConfig = TrainConfig(),
                   val_sessions: Sequence[MealSession] = ()) -> TrainResult:
    """Fit encoder + predictor for one modality by minimising the smoothed classification loss."""
    if modality not in MODALITIES:
        raise ValidationError(f"unknown modality {modality!r}")
    missing = [s.session_id for s in train_sessions if getattr(s, modality) is None]
    if missing:
        raise ValidationError(f"train_unimodal({modality}): sessions without {modality}: {missing[:5]}")
    windows = collect_windows(train_sessions, cfg.window, cfg.prep)
    val_windows = collect_windows(val_sessions, cfg.window, cfg.prep) if val_sessions else []
    model = build_unimodal(modality, cfg, windows)
    dtype = float_dtype()
    opt = _adam(model.parameters(), cfg)
    shuffle_seed = component_seed(cfg.seed, f"shuffle-{modality}")

    def loss_on(batch):
        x = _stack(batch, modality, dtype)
        return cls_loss(_labels(batch), model(x), cfg.loss)

    def mean_loss(ws):
        model.eval()
        with torch.no_grad():
            vals = [float(loss_on(ws[i:i + cfg.batch_size])) * len(ws[i:i + cfg.batch_size])
                    for i in range(0, len(ws), cfg.batch_size)]
        return sum(vals) / len(ws)

    initial = {"loss": mean_loss(windows)}
    history, val_history = [], []
    for epoch in range(cfg.epochs):
        model.train()
        total, count = 0.0, 0
        for b, idx in enumerate(batches(len(windows), cfg.batch_size, shuffle_seed, epoch)):
            batch = [windows[i] for i in idx]
            loss = loss_on(batch)
            value = _check_finite(loss, f"{modality} epoch {epoch} batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value * len(batch)
            count += len(batch)
        history.append({"epoch": epoch, "loss": total / count})
        if val_windows:
            val_history.append({"epoch": epoch, "loss": mean_loss(val_windows)})
        log.info("%s epoch %d loss %.4f", modality, epoch, total / count)
    model.eval()
    return TrainResult(model, history, initial, cfg.echo(), val_history=val_history)


def _freeze(module: torch.nn.Module) -> None:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()


def train_fusion(unimodal: dict[str, UnimodalModel], train_sessions: Sequence[MealSession],
                 cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Train both adapters, the fusion module and the multimodal predictor.

    In the default two-step mode the unimodal models are frozen (bitwise) and
    their features are computed once per window.  With ``cfg.end_to_end``
    every module starts fresh and is trained jointly.
    """
    if not unimodal or set(unimodal) != {"imu", "radar"} or any(v is None for v in unimodal.values()):
        raise ValidationError("train_fusion: needs trained 'imu' and 'radar' unimodal models")
    missing = [s.session_id for s in train_sessions if s.imu is None or s.radar is None]
    if missing:
        raise ValidationError(f"train_fusion: sessions must have both modalities: {missing[:5]}")
    windows = collect_windows(train_sessions, cfg.window, cfg.prep)
    dtype = float_dtype()

    if cfg.end_to_end:
        imu_model = build_unimodal("imu", cfg, windows)
        radar_model = build_unimodal("radar", cfg, windows)
    else:
        imu_model = copy.deepcopy(unimodal["imu"]).to(dtype)
        radar_model = copy.deepcopy(unimodal["radar"]).to(dtype)
        _freeze(imu_model)
        _freeze(radar_model)
    torch.manual_seed(component_seed(cfg.seed, "init-fusion"))
    framework = MultimodalFramework(
        imu_model, radar_model, mae_like(imu_model.encoder), mae_like(radar_model.encoder),
        FusionHead(cfg.fusion, cfg.cma),
    ).to(dtype)
    frozen_before = {} if cfg.end_to_end else {
        name: state_digests(m) for name, m in framework.frozen_modules().items()
    }

    cache = None
    if not cfg.end_to_end:
        cache = []
        with torch.no_grad():
            for i in range(0, len(windows), cfg.batch_size):
                chunk = windows[i:i + cfg.batch_size]
                m_r = radar_model.encoder(_stack(chunk, "radar", dtype))
                m_i = imu_model.encoder(_stack(chunk, "imu", dtype))
                cache.extend(zip(m_r, m_i))

    def components(idx):
        batch = [windows[i] for i in idx]
        y = _labels(batch)
        x_r, x_i = _stack(batch, "radar", dtype), _stack(batch, "imu", dtype)
        if cache is not None:
            m_r = torch.stack([cache[i][0] for i in idx])
            m_i = torch.stack([cache[i][1] for i in idx])
        else:
            m_r, m_i = radar_model.encoder(x_r), imu_model.encoder(x_i)
        p = framework.fuse(m_r, m_i)
        cls_fuse = cls_loss(y, p, cfg.loss)
        r2i, al_r2i, cls_r2i = adaptation_loss("R2I", framework.mae_r2i(x_r), m_i, y, imu_model.predictor, cfg.loss)
        i2r, al_i2r, cls_i2r = adaptation_loss("I2R", framework.mae_i2r(x_i), m_r, y, radar_model.predictor, cfg.loss)
        parts = {"cls_fuse": cls_fuse, "R2I": r2i, "I2R": i2r}
        total = total_loss(parts)
        return total, {
            "total": total, "cls_fuse": cls_fuse, "R2I": r2i, "I2R": i2r,
            "al_R2I": al_r2i, "al_I2R": al_i2r, "cls_R2I": cls_r2i, "cls_I2R": cls_i2r,
        }

    def evaluate_all():
        framework.eval()
        sums: dict[str, float] = {}
        with torch.no_grad():
            for i in range(0, len(windows), cfg.batch_size):
                idx = np.arange(i, min(i + cfg.batch_size, len(windows)))
                _, parts = components(idx)
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + float(v) * len(idx)
        return {k: v / len(windows) for k, v in sums.items()}

    trainable = [framework.mae_i2r, framework.mae_r2i, framework.head]
    if cfg.end_to_end:
        trainable += [imu_model, radar_model]
    opt = _adam([p for m in trainable for p in m.parameters()], cfg)
    shuffle_seed = component_seed(cfg.seed, "shuffle-fusion")

    initial = evaluate_all()
    history = []
    for epoch in range(cfg.epochs):
        for m in trainable:
            m.train()
        sums: dict[str, float] = {}
        for b, idx in enumerate(batches(len(windows), cfg.batch_size, shuffle_seed, epoch)):
            loss, parts = components(idx)
            _check_finite(loss, f"fusion epoch {epoch} batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v.detach()) * len(idx)
        row = {"epoch": epoch, **{k: v / len(windows) for k, v in sums.items()}}
        history.append(row)
        log.info("fusion epoch %d total %.4f al_R2I %.4f al_I2R %.4f", epoch, row["total"], row["al_R2I"], row["al_I2R"])
    framework.eval()
    frozen_after = {} if cfg.end_to_end else {
        name: state_digests(m) for name, m in framework.frozen_modules().items()
    }
    return TrainResult(framework, history, initial, cfg.echo(), frozen_before, frozen_after)
