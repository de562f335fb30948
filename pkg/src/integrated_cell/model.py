"""The two-stage model: a reference (cell + nuclear shape) autoencoder and a
conditional structure-localization autoencoder, each with its two adversaries."""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field

from .arch import (
    ArchitectureTable,
    decoder_r_table,
    decoder_rs_table,
    encoder_r_table,
    encoder_rs_table,
    image_discriminator_table,
    latent_discriminator_table,
)
from .errors import ConfigError
from .networks import NetworkComponent, PriorSpec, build_component

REFERENCE_CHANNELS = ("membrane", "nucleus")
REFERENCE_COMPONENTS = ("enc_r", "dec_r", "encd_r", "decd_r")
CONDITIONAL_COMPONENTS = ("enc_rs", "dec_rs", "encd_s", "decd_rs")


@dataclass
class ModelConfig:
    image_size: int = 64
    latent_dim: int = 16
    n_classes: int = 10
    width: float = 1.0
    output_batchnorm: bool = True
    noise_sigma: float = 0.05
    # component name -> serialized ArchitectureTable replacing the generated one
    tables: dict = field(default_factory=dict)

    @property
    def n_reference(self) -> int:
        return len(REFERENCE_CHANNELS)

    def table(self, name: str) -> ArchitectureTable:
        if name in self.tables:
            return ArchitectureTable.from_dict(self.tables[name])
        S, D, K, w = self.image_size, self.latent_dim, self.n_classes, self.width
        r = self.n_reference
        builders = {
            "enc_r": lambda: encoder_r_table(S, D, w),
            "dec_r": lambda: decoder_r_table(S, r, w, self.output_batchnorm),
            "encd_r": lambda: latent_discriminator_table("encd_r", w),
            "decd_r": lambda: image_discriminator_table("decd_r", S, 1, w, self.noise_sigma),
            "enc_rs": lambda: encoder_rs_table(S, D, K, w),
            "dec_rs": lambda: decoder_rs_table(S, r + 1, w, self.output_batchnorm),
            "encd_s": lambda: latent_discriminator_table("encd_s", w),
            "decd_rs": lambda: image_discriminator_table("decd_rs", S, K + 1, w, self.noise_sigma),
        }
        if name not in builders:
            raise ConfigError(f"unknown component {name!r}")
        return builders[name]()

    def input_shape(self, name: str) -> tuple[int, ...]:
        S, D, K, r = self.image_size, self.latent_dim, self.n_classes, self.n_reference
        return {
            "enc_r": (r, S, S),
            "dec_r": (D,),
            "encd_r": (D,),
            "decd_r": (r, S, S),
            "enc_rs": (r + 1, S, S),
            "dec_rs": (D + K + D,),
            "encd_s": (D,),
            "decd_rs": (r + 1, S, S),
        }[name]

    def to_dict(self) -> dict:
        return asdict(self)


def component_seed(seed: int, name: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(name.encode())) % (2**62)


class _Stage:
    names: tuple[str, ...] = ()

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.prior = PriorSpec(config.latent_dim)
        self.trained_steps = 0
        for name in self.names:
            table = config.table(name)
            comp = build_component(table, config.input_shape(name), component_seed(seed, name))
            setattr(self, name, comp)

    def components(self) -> dict[str, NetworkComponent]:
        return {name: getattr(self, name) for name in self.names}

    def train(self):
        for c in self.components().values():
            c.train()
        return self

    def eval(self):
        for c in self.components().values():
            c.eval()
        return self

    def state_dict(self) -> dict:
        state = {
            name: {"params": c.state_dict(), "noise_rng": c.noise_rng.get_state()}
            for name, c in self.components().items()
        }
        state["trained_steps"] = self.trained_steps
        return state

    def load_state_dict(self, state: dict) -> None:
        for name, c in self.components().items():
            c.load_state_dict(state[name]["params"])
            c.noise_rng.set_state(state[name]["noise_rng"])
        self.trained_steps = int(state.get("trained_steps", 0))


class ReferenceModel(_Stage):
    """Enc_r, Dec_r and their latent (EncD_r) and image (DecD_r) adversaries."""

    names = REFERENCE_COMPONENTS


class ConditionalModel(_Stage):
    """Enc_rs, Dec_rs and their latent (EncD_s) and image (DecD_rs) adversaries."""

    names = CONDITIONAL_COMPONENTS
