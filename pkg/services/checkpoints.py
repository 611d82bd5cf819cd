# services/checkpoints.py
"""
Deterministic checkpoint archives.

A checkpoint is a zip (stored, fixed timestamps) holding manifest.json and
one .npy entry per tensor. Saving the same state twice yields identical
bytes, which torch.save does not guarantee.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import zipfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import torch

from errors import CheckpointIntegrityError, CheckpointVersionError
from synthesis.backbone import ModelConfig, SingerModel
from synthesis.corpus import CorpusConfig
from synthesis.melody import MelodyConfig

log = logging.getLogger(__name__)

FORMAT = "melodyflow-checkpoint"
VERSION = 1
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    config: ModelConfig
    step: int
    model_state: "OrderedDict[str, torch.Tensor]"
    optimizer_state: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def build_model(self, device: str = "cpu") -> SingerModel:
        model = SingerModel(self.config)
        model.load_state_dict(self.model_state)
        return model.to(device)


def config_to_dict(config: ModelConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(payload: dict) -> ModelConfig:
    payload = dict(payload)
    melody = MelodyConfig(**payload.pop("melody", {}))
    return ModelConfig(melody=melody, **payload).validate()


# --------------------------------------------------
# Zip helpers
# --------------------------------------------------
def _npy_bytes(tensor: torch.Tensor) -> bytes:
    buf = io.BytesIO()
    np.save(buf, tensor.detach().cpu().numpy(), allow_pickle=False)
    return buf.getvalue()


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _flatten_optimizer(state: Dict[str, Any]):
    tensors = OrderedDict()
    slots = {}
    for idx in sorted(state["state"]):
        slots[str(idx)] = {}
        for key in sorted(state["state"][idx]):
            value = state["state"][idx][key]
            if torch.is_tensor(value):
                tensors[f"optimizer/{idx}/{key}"] = value
            else:
                slots[str(idx)][key] = value
    return tensors, slots, state["param_groups"]


# --------------------------------------------------
# Save / load
# --------------------------------------------------
def save_checkpoint(
    path,
    model: SingerModel,
    step: int,
    optimizer: Optional[torch.optim.Optimizer] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    tensors = OrderedDict((f"model/{k}", v) for k, v in model.state_dict().items())
    slots, groups = {}, None
    if optimizer is not None:
        opt_tensors, slots, groups = _flatten_optimizer(optimizer.state_dict())
        tensors.update(opt_tensors)

    blobs = OrderedDict((name, _npy_bytes(t)) for name, t in tensors.items())
    digest = hashlib.sha256()
    for name, blob in blobs.items():
        digest.update(name.encode())
        digest.update(blob)

    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": config_to_dict(model.config),
        "step": int(step),
        "entries": list(blobs),
        "optimizer": None if optimizer is None else {"param_groups": groups, "scalars": slots},
        "extra": extra or {},
        "checksum": digest.hexdigest(),
    }

    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _write_entry(zf, "manifest.json", json.dumps(manifest, sort_keys=True, indent=1).encode())
        for name, blob in blobs.items():
            _write_entry(zf, f"tensors/{name}.npy", blob)
    tmp.replace(path)
    log.info("checkpoint step %d -> %s", step, path)
    return path


def check_corpus(config: ModelConfig, corpus_config: CorpusConfig, source="checkpoint") -> None:
    """The network's D_f and vocabulary must be the corpus's."""
    if (config.feature_dim, config.vocab_size) != (corpus_config.feature_dim, corpus_config.vocab_size):
        raise CheckpointVersionError(
            f"{source}: model expects D_f={config.feature_dim}, V={config.vocab_size}; "
            f"corpus has D_f={corpus_config.feature_dim}, V={corpus_config.vocab_size}"
        )


def load_checkpoint(
    path,
    expected_config: Optional[ModelConfig] = None,
    corpus_config: Optional[CorpusConfig] = None,
) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            blobs = OrderedDict(
                (name, zf.read(f"tensors/{name}.npy")) for name in manifest["entries"]
            )
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"{path}: unreadable checkpoint ({exc})") from exc

    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise CheckpointVersionError(
            f"{path}: format {manifest.get('format')!r} v{manifest.get('version')} is not supported"
        )

    digest = hashlib.sha256()
    for name, blob in blobs.items():
        digest.update(name.encode())
        digest.update(blob)
    if digest.hexdigest() != manifest.get("checksum"):
        raise CheckpointIntegrityError(f"{path}: checksum mismatch")

    try:
        config = config_from_dict(manifest["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointVersionError(f"{path}: config echo does not match this version: {exc}") from exc
    if expected_config is not None and config != expected_config:
        raise CheckpointVersionError(f"{path}: stored config {config} != expected {expected_config}")
    if corpus_config is not None:
        check_corpus(config, corpus_config, source=str(path))

    tensors = OrderedDict(
        (name, torch.from_numpy(np.load(io.BytesIO(blob), allow_pickle=False)))
        for name, blob in blobs.items()
    )
    model_state = OrderedDict(
        (name[len("model/"):], t) for name, t in tensors.items() if name.startswith("model/")
    )

    optimizer_state = None
    if manifest.get("optimizer"):
        state = {}
        for idx, scalars in manifest["optimizer"]["scalars"].items():
            state[int(idx)] = dict(scalars)
        for name, t in tensors.items():
            if name.startswith("optimizer/"):
                _, idx, key = name.split("/", 2)
                state.setdefault(int(idx), {})[key] = t
        optimizer_state = {"state": state, "param_groups": manifest["optimizer"]["param_groups"]}

    return Checkpoint(config, int(manifest["step"]), model_state, optimizer_state, manifest.get("extra", {}))
