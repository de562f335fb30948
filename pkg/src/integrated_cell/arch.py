"""Declarative architecture tables for the eight network components.

A table is plain data: an ordered list of layers plus optional parallel
output heads and an input-noise level.  Tables are parameterized by the
image side length ``S``: every image network uses ``ceil(log2 S) - 2``
stride-2 stages, so a 256 px image reaches a 4x4 feature map after six
stages (the published layout) and a 64 px image after four.

Serialized form (YAML or JSON)::

    name: enc_r
    noise_sigma: 0.0
    layers:
      - {kind: conv, out: 64, direction: down, batchnorm: true, activation: prelu}
      - {kind: fc, out: 16, batchnorm: true, activation: none}
    heads: []

Layer fields: ``kind`` (conv | fc | pool), ``out`` (channels or width),
``direction`` (down | up, conv only), ``spatial`` (fc only: reshape the
output to ``out x spatial x spatial``), ``batchnorm``, ``activation``
(prelu | leakyrelu | sigmoid | softmax | none) and ``name`` (heads only).
``pool`` averages over all spatial positions and has no parameters.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import yaml

from .errors import ConfigError, ShapeError

ACTIVATIONS = ("prelu", "leakyrelu", "sigmoid", "softmax", "none")
KERNEL = 4

# Channel progressions from the published 256 px tables; smaller images keep
# a prefix (encoders) or suffix (decoders) of these.
ENCODER_WIDTHS = (64, 128, 256, 512, 1024, 1024)
DECODER_WIDTHS = (1024, 1024, 512, 256, 128, 64)
DISCRIMINATOR_WIDTHS = (64, 128, 256, 512, 512)
LATENT_DISCRIMINATOR_WIDTHS = (1024, 1024, 512)


@dataclass(frozen=True)
class Layer:
    kind: str
    out: int
    direction: str | None = None
    batchnorm: bool = False
    activation: str = "none"
    spatial: int = 1
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ("conv", "fc", "pool"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.kind == "conv" and self.direction not in ("down", "up"):
            raise ConfigError("conv layers need direction 'down' or 'up'")
        if self.kind != "pool" and self.out <= 0:
            raise ShapeError(f"layer width must be positive, got {self.out}")
        if self.spatial <= 0:
            raise ShapeError(f"spatial size must be positive, got {self.spatial}")


@dataclass(frozen=True)
class ArchitectureTable:
    name: str
    layers: tuple[Layer, ...]
    heads: tuple[Layer, ...] = ()
    noise_sigma: float = 0.0

    def stages(self) -> int:
        return sum(1 for l in self.layers if l.kind == "conv")

    def output_shapes(self, input_shape) -> dict[str, tuple[int, ...]]:
        """Propagate a per-sample input shape through the table.

        Returns the output shape of every head (or ``{"out": shape}`` for a
        single-output table).  Raises ShapeError where the arithmetic fails.
        """
        shape = tuple(int(s) for s in input_shape)
        if not shape or any(s <= 0 for s in shape):
            raise ShapeError(f"input dimensions must be positive, got {shape}")
        for layer in self.layers:
            shape = propagate_shape(layer, shape)
        if not self.heads:
            return {"out": shape}
        return {h.name: propagate_shape(h, shape) for h in self.heads}

    def to_dict(self) -> dict:
        def layer_dict(l):
            d = asdict(l)
            return {k: v for k, v in d.items() if v is not None}

        return {
            "name": self.name,
            "noise_sigma": self.noise_sigma,
            "layers": [layer_dict(l) for l in self.layers],
            "heads": [layer_dict(h) for h in self.heads],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureTable":
        try:
            return cls(
                name=d["name"],
                layers=tuple(Layer(**l) for l in d["layers"]),
                heads=tuple(Layer(**h) for h in d.get("heads", ())),
                noise_sigma=float(d.get("noise_sigma", 0.0)),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed architecture table: {e}") from e

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "ArchitectureTable":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def propagate_shape(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if layer.kind == "fc":
        return (layer.out, layer.spatial, layer.spatial) if layer.spatial > 1 else (layer.out,)
    if layer.kind == "pool":
        if len(shape) != 3:
            raise ShapeError(f"pool expects a feature map, got shape {shape}")
        return (shape[0],)
    if len(shape) != 3:
        raise ShapeError(f"conv expects a CxHxW input, got shape {shape}")
    c, h, w = shape
    if layer.direction == "down":
        if h % 2 or w % 2:
            raise ShapeError(f"cannot halve odd spatial size {h}x{w}")
        return (layer.out, h // 2, w // 2)
    return (layer.out, h * 2, w * 2)


def num_stages(image_size: int) -> int:
    """Number of stride-2 stages for a square image of side ``image_size``."""
    if image_size <= 0:
        raise ShapeError(f"image size must be positive, got {image_size}")
    d = max(1, math.ceil(math.log2(image_size)) - 2)
    if image_size % (2**d):
        raise ShapeError(f"image side {image_size} is not divisible by 2^{d}")
    return d


def _widths(base, n, width, start=True):
    seq = list(base)
    while len(seq) < n:
        seq = seq + [seq[-1]] if start else [seq[0]] + seq
    seq = seq[:n] if start else seq[len(seq) - n:]
    return [max(1, int(round(c * width))) for c in seq]


def encoder_r_table(image_size=64, latent_dim=16, width=1.0) -> ArchitectureTable:
    d = num_stages(image_size)
    convs = [
        Layer("conv", c, "down", batchnorm=True, activation="prelu")
        for c in _widths(ENCODER_WIDTHS, d, width)
    ]
    head = Layer("fc", latent_dim, batchnorm=True, activation="none")
    return ArchitectureTable("enc_r", tuple(convs + [head]))


def encoder_rs_table(image_size=64, latent_dim=16, n_classes=10, width=1.0):
    d = num_stages(image_size)
    convs = [
        Layer("conv", c, "down", batchnorm=True, activation="prelu")
        for c in _widths(ENCODER_WIDTHS, d, width)
    ]
    heads = (
        Layer("fc", n_classes, batchnorm=True, activation="softmax", name="y"),
        Layer("fc", latent_dim, batchnorm=True, activation="none", name="z_r"),
        Layer("fc", latent_dim, batchnorm=True, activation="none", name="z_s"),
    )
    return ArchitectureTable("enc_rs", tuple(convs), heads)


def _decoder_table(name, image_size, n_out, width, output_batchnorm):
    d = num_stages(image_size)
    side = image_size // 2**d
    chans = _widths(DECODER_WIDTHS, d, width, start=False)
    layers = [Layer("fc", chans[0], batchnorm=True, activation="prelu", spatial=side)]
    layers += [Layer("conv", c, "up", batchnorm=True, activation="prelu") for c in chans[1:]]
    layers.append(Layer("conv", n_out, "up", batchnorm=output_batchnorm, activation="sigmoid"))
    return ArchitectureTable(name, tuple(layers))


def decoder_r_table(image_size=64, n_channels=2, width=1.0, output_batchnorm=True):
    return _decoder_table("dec_r", image_size, n_channels, width, output_batchnorm)


def decoder_rs_table(image_size=64, n_channels=3, width=1.0, output_batchnorm=True):
    return _decoder_table("dec_rs", image_size, n_channels, width, output_batchnorm)


def latent_discriminator_table(name="encd_r", width=1.0) -> ArchitectureTable:
    w = _widths(LATENT_DISCRIMINATOR_WIDTHS, 3, width)
    return ArchitectureTable(name, (
        Layer("fc", w[0], activation="leakyrelu"),
        Layer("fc", w[1], batchnorm=True, activation="leakyrelu"),
        Layer("fc", w[2], batchnorm=True, activation="leakyrelu"),
        Layer("fc", 1, activation="sigmoid"),
    ))


def image_discriminator_table(name="decd_r", image_size=64, n_out=1, width=1.0,
                              noise_sigma=0.05) -> ArchitectureTable:
    """Image adversary: ``d - 1`` conv blocks, a final conv to ``n_out`` maps,
    then a spatial mean of those logits followed by the output activation."""
    d = num_stages(image_size)
    layers = [
        Layer("conv", c, "down", batchnorm=True, activation="leakyrelu")
        for c in _widths(DISCRIMINATOR_WIDTHS, d - 1, width)
    ]
    layers.append(Layer("conv", n_out, "down"))
    layers.append(Layer("pool", n_out, activation="sigmoid" if n_out == 1 else "softmax"))
    return ArchitectureTable(name, tuple(layers), noise_sigma=noise_sigma)
