"""Run configuration: corpus, model and training settings merged from
defaults, an optional YAML file, ``ICELL_*`` environment variables and
command-line flags (in that order of precedence, last wins).

Environment overrides use ``ICELL_<SECTION>__<KEY>=<yaml value>``, e.g.
``ICELL_TRAINING__BATCH_SIZE=16`` or ``ICELL_MODEL__WIDTH=1.0``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .datagen.synth import SyntheticCellSpec
from .errors import ConfigError, IntegratedCellError
from .model import ModelConfig
from .training import TrainingConfig

ENV_PREFIX = "ICELL_"
SECTIONS = ("corpus", "model", "training", "split")


@dataclass
class SplitConfig:
    train_fraction: float = 0.95
    seed: int = 0


def desk_model() -> ModelConfig:
    return ModelConfig(image_size=64, latent_dim=16, n_classes=4, width=0.5,
                       output_batchnorm=False)


def desk_training() -> TrainingConfig:
    return TrainingConfig(epochs_reference=20, epochs_conditional=20, output_bias_init="data")


@dataclass
class RunConfig:
    """Everything that determines a run's artifacts; ``content_hash`` names the run."""

    corpus: SyntheticCellSpec = field(default_factory=SyntheticCellSpec)
    model: ModelConfig = field(default_factory=desk_model)
    training: TrainingConfig = field(default_factory=desk_training)
    split: SplitConfig = field(default_factory=SplitConfig)

    def __post_init__(self):
        self.sync()

    def sync(self) -> None:
        """Model shape follows the corpus."""
        self.model.n_classes = self.corpus.n_classes
        self.model.image_size = self.corpus.image_size

    def to_dict(self) -> dict:
        return {
            "corpus": _plain(self.corpus.to_dict()),
            "model": _plain(self.model.to_dict()),
            "training": _plain(self.training.to_dict()),
            "split": _plain(vars(self.split)),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = d or {}
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
        try:
            return cls(
                corpus=_build(SyntheticCellSpec, d.get("corpus", {}), SyntheticCellSpec()),
                model=_build(ModelConfig, d.get("model", {}), desk_model()),
                training=_build(TrainingConfig, d.get("training", {}), desk_training()),
                split=_build(SplitConfig, d.get("split", {}), SplitConfig()),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, IntegratedCellError) as e:
            raise ConfigError(str(e)) from e

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        """Derive every named seed from one master seed."""
        d = self.to_dict()
        d["corpus"]["seed"] = seed
        d["split"]["seed"] = seed
        d["training"]["init_seed"] = seed
        d["training"]["shuffle_seed"] = seed + 1
        d["training"]["prior_seed"] = seed + 2
        return RunConfig.from_dict(d)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, overrides: dict, base):
    if not isinstance(overrides, dict):
        raise ConfigError(f"section for {cls.__name__} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} key(s) {sorted(unknown)}")
    values = {f.name: getattr(base, f.name) for f in fields(cls)}
    values.update(overrides)
    return cls(**values)


def env_overrides(environ=None) -> dict:
    """Nested override dict from ``ICELL_SECTION__KEY`` variables."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        if len(parts) != 2 or parts[0] not in SECTIONS:
            raise ConfigError(f"bad override variable {key}; expected {ENV_PREFIX}SECTION__KEY")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {key}={raw!r}: {e}") from e
        out.setdefault(parts[0], {})[parts[1]] = value
    return out


def merge(base: dict, overrides: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for section, values in overrides.items():
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        out.setdefault(section, {}).update(values)
    return out


def load_config(path=None, environ=None, seed=None) -> RunConfig:
    d: dict = {}
    if path is not None:
        try:
            d = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError(f"{path} must contain a mapping")
    cfg = RunConfig.from_dict(merge(d, env_overrides(environ)))
    return cfg.with_seed(seed) if seed is not None else cfg
