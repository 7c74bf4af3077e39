"""Model bundles (unimodal encoder+predictor, full multimodal framework) and checkpoint I/O."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import Predictor, build_encoder
from .data import ImuSequence, MealSession, ValidationError, read_tensor, write_tensor
from .fusion import CmaConfig, FusionHead
from .preprocess import remove_clutter

MODALITIES = ("imu", "radar")
AVAILABILITY = ("both", "imu_only", "radar_only")
DEFAULT_PREP = {"remove_clutter": True, "imu_mode": "two_hand"}


class UnimodalModel(nn.Module):
    """Encoder (MSFE) plus predictor for one modality."""

    def __init__(self, modality: str, encoder: nn.Module, predictor: Predictor | None = None, prep: dict | None = None):
        super().__init__()
        if modality not in MODALITIES:
            raise ValidationError(f"unknown modality {modality!r}")
        self.modality = modality
        self.encoder = encoder
        self.predictor = predictor or Predictor()
        self.prep = dict(prep or DEFAULT_PREP)

    def forward(self, x):
        return self.predictor(self.encoder(x))

    def spec(self) -> dict:
        return {"kind": "unimodal", "modality": self.modality, "encoder": self.encoder.spec(), "prep": self.prep}


class MultimodalFramework(nn.Module):
    """Frozen unimodal models, two adaptation encoders and the fusion head.

    Routing by availability:

    * ``both``: fuse ``m_R = F_R(x_R)`` and ``m_I = F_I(x_I)``
    * ``imu_only``: radar features come from the I2R adapter
    * ``radar_only``: IMU features come from the R2I adapter
    """

    def __init__(self, imu: UnimodalModel, radar: UnimodalModel, mae_i2r: nn.Module | None,
                 mae_r2i: nn.Module | None, head: FusionHead):
        super().__init__()
        self.imu = imu
        self.radar = radar
        self.mae_i2r = mae_i2r
        self.mae_r2i = mae_r2i
        self.head = head
        self.prep = dict(imu.prep)

    def features(self, x_radar, x_imu, availability: str = "both"):
        if availability == "both":
            return self.radar.encoder(x_radar), self.imu.encoder(x_imu)
        if availability == "imu_only":
            if self.mae_i2r is None:
                raise ValidationError("framework has no I2R adapter; cannot run without radar")
            return self.mae_i2r(x_imu), self.imu.encoder(x_imu)
        if availability == "radar_only":
            if self.mae_r2i is None:
                raise ValidationError("framework has no R2I adapter; cannot run without IMU")
            return self.radar.encoder(x_radar), self.mae_r2i(x_radar)
        raise ValidationError(f"unknown availability {availability!r}; choose from {AVAILABILITY}")

    def fuse(self, m_r, m_i):
        if self.head.method == "decision":
            return self.head(m_r, m_i, self.radar.predictor(m_r), self.imu.predictor(m_i))
        return self.head(m_r, m_i)

    def forward(self, x_radar, x_imu, availability: str = "both"):
        return self.fuse(*self.features(x_radar, x_imu, availability))

    def frozen_modules(self) -> dict[str, nn.Module]:
        return {"imu": self.imu, "radar": self.radar}

    def spec(self) -> dict:
        return {
            "kind": "framework",
            "imu": self.imu.spec(),
            "radar": self.radar.spec(),
            "mae_i2r": None if self.mae_i2r is None else self.mae_i2r.spec(),
            "mae_r2i": None if self.mae_r2i is None else self.mae_r2i.spec(),
            "fusion": self.head.method,
            "cma": asdict(self.head.cma.cfg) if self.head.cma is not None else asdict(CmaConfig()),
        }


def prepare_session(session, prep: dict | None = None):
    """Apply the model's input conditioning: clutter removal and IMU channel selection."""
    prep = dict(DEFAULT_PREP, **(prep or {}))
    radar = session.radar
    imu = session.imu
    if radar is not None and prep.get("remove_clutter") and radar.n_frames >= 2:
        radar = remove_clutter(radar)
    if imu is not None and prep.get("imu_mode") == "one_hand" and imu.n_channels == 12:
        hand = session.meta.get("dominant_hand", "right")
        sl = slice(0, 6) if hand == "left" else slice(6, 12)
        imu = ImuSequence(imu.data[sl], imu.sample_rate, imu.channel_layout[sl])
    return MealSession(session.session_id, session.labels, radar, imu, session.meta)


def _build_unimodal(spec: dict) -> UnimodalModel:
    encoder = build_encoder(spec["encoder"])
    return UnimodalModel(spec["modality"], encoder, Predictor(), spec.get("prep"))


def build_from_spec(spec: dict) -> nn.Module:
    if spec["kind"] == "unimodal":
        return _build_unimodal(spec)
    if spec["kind"] == "framework":
        head = FusionHead(spec["fusion"], CmaConfig(**spec["cma"]))
        return MultimodalFramework(
            _build_unimodal(spec["imu"]),
            _build_unimodal(spec["radar"]),
            None if spec["mae_i2r"] is None else build_encoder(spec["mae_i2r"]),
            None if spec["mae_r2i"] is None else build_encoder(spec["mae_r2i"]),
            head,
        )
    raise ValidationError(f"unknown checkpoint kind {spec['kind']!r}")


def tensor_digest(t: torch.Tensor) -> str:
    return hashlib.sha256(t.detach().cpu().contiguous().numpy().tobytes()).hexdigest()


def state_digests(module: nn.Module) -> dict[str, str]:
    return {name: tensor_digest(t) for name, t in module.state_dict().items()}


def save_checkpoint(module: nn.Module, dir_path, frozen_prefixes=(), extra: dict | None = None) -> Path:
    """Write every state tensor as an MMGF file plus ``manifest.json``."""
    d = Path(dir_path)
    (d / "tensors").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, tensor) in enumerate(module.state_dict().items()):
        arr = tensor.detach().cpu().numpy()
        fname = f"tensors/{i:04d}.mmgf"
        write_tensor(d / fname, arr)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "frozen": any(name.startswith(p + ".") for p in frozen_prefixes),
            "file": fname,
        })
    manifest = {"spec": module.spec(), "tensors": entries, **(extra or {})}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def load_checkpoint(dir_path) -> tuple[nn.Module, dict]:
    d = Path(dir_path)
    if not (d / "manifest.json").exists():
        raise ValidationError(f"{d}: no manifest.json; not a checkpoint")
    manifest = json.loads((d / "manifest.json").read_text())
    module = build_from_spec(manifest["spec"])
    state = {}
    dtypes = set()
    for entry in manifest["tensors"]:
        arr = read_tensor(d / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise ValidationError(f"{d / entry['file']}: shape {arr.shape} != manifest {entry['shape']}")
        dtypes.add(arr.dtype)
        state[entry["name"]] = torch.from_numpy(np.array(arr))
    module = module.double() if np.dtype("float64") in dtypes else module.float()
    module.load_state_dict(state)
    module.eval()
    return module, manifest
