"""Versioned, self-describing training checkpoints.

A checkpoint is a ``torch.save`` dictionary holding the format tag and
version, the stage, the run-config hash and full run config, every
component's architecture table, and the trainer state (parameters, Adam
moments, RNG states, epoch/step position and curves).  A conditional
checkpoint also embeds the reference model it was trained on, so inference
needs only that one file.  Nothing time-dependent is stored, so identical
runs write byte-identical files.
"""

from __future__ import annotations

import hashlib
import io
import os
import sys
from pathlib import Path

import torch

from .errors import CheckpointError
from .model import ConditionalModel, ModelConfig, ReferenceModel
from .training import ConditionalTrainer, ReferenceTrainer, TrainingConfig

FORMAT = "integrated-cell-checkpoint"
VERSION = 1
STAGES = ("reference", "conditional")


def _payload(trainer, run_config: dict | None, config_hash: str | None,
             reference: ReferenceModel | None = None, reference_id: str | None = None) -> dict:
    model = trainer.model
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "stage": trainer.stage,
        "config_hash": config_hash,
        "run_config": run_config,
        "model_config": model.config.to_dict(),
        "training_config": trainer.config.to_dict(),
        "tables": {n: model.config.table(n).to_dict() for n in model.names},
        "trainer": trainer.state_dict(),
    }
    if trainer.stage == "conditional":
        ref = reference if reference is not None else trainer.reference
        payload["reference"] = {
            "id": reference_id,
            "model_config": ref.config.to_dict(),
            "seed": ref.seed,
            "state": ref.state_dict(),
        }
    payload["trainer"]["model_seed"] = model.seed
    return payload


def _canonical(obj):
    """Fresh containers and interned strings, so the pickle memo (which keys
    on object identity) depends only on values."""
    if isinstance(obj, dict):
        return {_canonical(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_canonical(v) for v in obj]
    if isinstance(obj, tuple):
        return tuple(_canonical(v) for v in obj)
    if isinstance(obj, str):
        return sys.intern(obj)
    return obj


def checkpoint_bytes(trainer, run_config=None, config_hash=None, reference=None,
                     reference_id=None) -> bytes:
    buf = io.BytesIO()
    payload = _payload(trainer, run_config, config_hash, reference, reference_id)
    torch.save(_canonical(payload), buf)
    return buf.getvalue()


def save_checkpoint(path, trainer, run_config=None, config_hash=None, reference=None,
                    reference_id=None) -> str:
    """Atomically write a checkpoint; returns its id (sha256 of the file)."""
    data = checkpoint_bytes(trainer, run_config, config_hash, reference, reference_id)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return hashlib.sha256(data).hexdigest()


def checkpoint_id(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_checkpoint(path, stage: str | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(ckpt, dict) or ckpt.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not an integrated-cell checkpoint")
    if ckpt.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {ckpt.get('version')}")
    if ckpt.get("stage") not in STAGES:
        raise CheckpointError(f"{path}: unknown stage {ckpt.get('stage')!r}")
    if stage is not None and ckpt["stage"] != stage:
        raise CheckpointError(f"{path} holds a {ckpt['stage']} model, expected {stage}")
    ckpt["id"] = checkpoint_id(path)
    return ckpt


def check_hash(ckpt: dict, config_hash: str) -> None:
    if ckpt.get("config_hash") != config_hash:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {str(ckpt.get('config_hash'))[:12]} "
            f"vs current {config_hash[:12]}"
        )


def _model(cls, model_config: dict, seed: int, state: dict):
    model = cls(ModelConfig(**model_config), seed)
    model.load_state_dict(state)
    return model


def reference_model(ckpt: dict) -> ReferenceModel:
    """The reference model stored in either kind of checkpoint."""
    if ckpt["stage"] == "reference":
        t = ckpt["trainer"]
        return _model(ReferenceModel, ckpt["model_config"], t["model_seed"], t["model"])
    ref = ckpt["reference"]
    return _model(ReferenceModel, ref["model_config"], ref["seed"], ref["state"])


def conditional_model(ckpt: dict) -> ConditionalModel:
    if ckpt["stage"] != "conditional":
        raise CheckpointError("checkpoint holds no conditional model")
    t = ckpt["trainer"]
    return _model(ConditionalModel, ckpt["model_config"], t["model_seed"], t["model"])


def resume_reference(ckpt: dict, images) -> ReferenceTrainer:
    trainer = ReferenceTrainer(images, TrainingConfig(**ckpt["training_config"]),
                               ModelConfig(**ckpt["model_config"]))
    trainer.load_state_dict(ckpt["trainer"])
    return trainer


def resume_conditional(ckpt: dict, images, labels) -> ConditionalTrainer:
    trainer = ConditionalTrainer(images, labels, reference_model(ckpt),
                                 TrainingConfig(**ckpt["training_config"]),
                                 ModelConfig(**ckpt["model_config"]))
    trainer.load_state_dict(ckpt["trainer"])
    return trainer
