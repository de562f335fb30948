"""Network components built from architecture tables, plus the forward
contracts of the eight components and the latent prior."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .arch import KERNEL, ArchitectureTable, Layer, propagate_shape
from .errors import ImageError, LabelError, ShapeError

INIT_STD = 0.02
BN_MOMENTUM = 0.1
LEAKY_SLOPE = 0.2
PRELU_INIT = 0.25


class _Block(nn.Module):
    def __init__(self, layer: Layer, in_shape: tuple[int, ...], out_shape: tuple[int, ...]):
        super().__init__()
        self.kind = layer.kind
        self.out_shape = out_shape
        has_bn = layer.batchnorm and layer.kind != "pool"
        if layer.kind == "conv":
            conv = nn.Conv2d if layer.direction == "down" else nn.ConvTranspose2d
            self.op = conv(in_shape[0], layer.out, KERNEL, stride=2, padding=1, bias=not has_bn)
        elif layer.kind == "fc":
            n_in = 1
            for s in in_shape:
                n_in *= s
            n_out = 1
            for s in out_shape:
                n_out *= s
            self.op = nn.Linear(n_in, n_out, bias=not has_bn)
        else:
            self.op = None

        channels = out_shape[0]
        if has_bn:
            bn = nn.BatchNorm2d if len(out_shape) == 3 else nn.BatchNorm1d
            self.bn = bn(channels, momentum=BN_MOMENTUM)
        else:
            self.bn = None

        self.activation = layer.activation
        self.prelu = nn.PReLU(channels, init=PRELU_INIT) if layer.activation == "prelu" else None

    def pre_activation(self, x):
        if self.kind == "fc":
            x = self.op(x.flatten(1)).view(x.shape[0], *self.out_shape)
        elif self.kind == "conv":
            x = self.op(x)
        else:
            x = x.mean(dim=(2, 3))
        if self.bn is not None:
            x = self.bn(x)
        return x

    def activate(self, x):
        if self.activation == "prelu":
            return self.prelu(x)
        if self.activation == "leakyrelu":
            return F.leaky_relu(x, LEAKY_SLOPE)
        if self.activation == "sigmoid":
            return torch.sigmoid(x)
        if self.activation == "softmax":
            return F.softmax(x, dim=1)
        return x

    def forward(self, x):
        return self.activate(self.pre_activation(x))


class NetworkComponent(nn.Module):
    """A differentiable map assembled from an :class:`ArchitectureTable`.

    ``forward`` returns activated outputs; with ``logits=True`` the final
    sigmoid/softmax of every output is skipped.  Multi-head tables return a
    dict keyed by head name.  Additive input noise is drawn from the
    component's own generator and only in train mode.
    """

    def __init__(self, table: ArchitectureTable, input_shape, seed: int = 0):
        super().__init__()
        self.table = table
        self.input_shape = tuple(int(s) for s in input_shape)
        shapes = table.output_shapes(self.input_shape)

        blocks = []
        shape = self.input_shape
        for layer in table.layers:
            nxt = propagate_shape(layer, shape)
            blocks.append(_Block(layer, shape, nxt))
            shape = nxt
        self.body = nn.ModuleList(blocks)
        self.heads = nn.ModuleDict(
            {h.name: _Block(h, shape, shapes[h.name]) for h in table.heads}
        )
        self.output_shapes = shapes
        self.noise_sigma = table.noise_sigma
        self.seed = seed
        self.noise_rng = torch.Generator().manual_seed(seed + 7919)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        # normal(0, 0.02) weights, zero biases, BN scale 1 / shift 0, PReLU 0.25
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                    m.weight.copy_(torch.randn(m.weight.shape, generator=g) * INIT_STD)
                    if m.bias is not None:
                        m.bias.zero_()
                elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
                    m.weight.fill_(1.0)
                    m.bias.zero_()
                    m.reset_running_stats()
                elif isinstance(m, nn.PReLU):
                    m.weight.fill_(PRELU_INIT)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def check_input(self, x: torch.Tensor) -> None:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"{self.table.name} expects per-sample shape {self.input_shape}, "
                f"got {tuple(x.shape[1:])}"
            )

    def forward(self, x, logits: bool = False):
        self.check_input(x)
        if self.training and self.noise_sigma > 0:
            noise = torch.randn(x.shape, generator=self.noise_rng, dtype=x.dtype)
            x = x + self.noise_sigma * noise
        last = len(self.body) - 1
        for i, block in enumerate(self.body):
            if i == last and logits and not self.heads:
                return block.pre_activation(x)
            x = block(x)
        if not self.heads:
            return x
        return {
            name: (h.pre_activation(x) if logits else h(x)) for name, h in self.heads.items()
        }


def build_component(table: ArchitectureTable, input_shape, seed: int = 0) -> NetworkComponent:
    """Build a component with deterministic initial parameters.

    Identical ``(table, input_shape, seed)`` gives bit-identical parameters.
    """
    return NetworkComponent(table, input_shape, seed)


@dataclass(frozen=True)
class PriorSpec:
    """Isotropic standard normal prior over a latent space."""

    dim: int = 16

    def sample(self, n: int, generator: torch.Generator, dtype=torch.float32) -> torch.Tensor:
        return torch.randn(n, self.dim, generator=generator, dtype=dtype)

    def mode(self, n: int = 1, dtype=torch.float32) -> torch.Tensor:
        return torch.zeros(n, self.dim, dtype=dtype)


def _check_image(x: torch.Tensor, channels: int):
    if x.dim() != 4:
        raise ShapeError(f"expected a NxCxHxW batch, got shape {tuple(x.shape)}")
    if x.shape[1] != channels:
        raise ShapeError(f"expected {channels} channels, got {x.shape[1]}")
    if not torch.isfinite(x).all():
        raise ImageError("image contains non-finite pixels")


def _check_code(z: torch.Tensor, dim: int, what: str):
    if z.dim() != 2 or z.shape[1] != dim:
        raise ShapeError(f"{what} must have shape (N, {dim}), got {tuple(z.shape)}")


def forward_encoder_r(enc_r: NetworkComponent, x_r: torch.Tensor) -> torch.Tensor:
    """Reference image batch (N, 2, S, S) -> latent codes (N, D)."""
    _check_image(x_r, enc_r.input_shape[0])
    return enc_r(x_r)


def forward_decoder_r(dec_r: NetworkComponent, z_r: torch.Tensor) -> torch.Tensor:
    _check_code(z_r, dec_r.input_shape[0], "z_r")
    return dec_r(z_r)


def forward_encoder_rs(enc_rs: NetworkComponent, x_rs: torch.Tensor, logits: bool = False):
    """Returns ``(z_r_hat, y_hat, z_s)``; ``y_hat`` is a probability vector
    unless ``logits`` is set."""
    _check_image(x_rs, enc_rs.input_shape[0])
    out = enc_rs(x_rs, logits=logits)
    return out["z_r"], out["y"], out["z_s"]


def conditioning_vector(z_r, y, z_s) -> torch.Tensor:
    return torch.cat([z_r, y, z_s], dim=1)


def forward_decoder_rs(dec_rs: NetworkComponent, z_r, y, z_s) -> torch.Tensor:
    """Decode ``[z_r | y | z_s]``; ``y`` may be any point of the simplex."""
    if z_r.shape[0] != y.shape[0] or z_r.shape[0] != z_s.shape[0]:
        raise ShapeError("z_r, y and z_s must share the batch dimension")
    v = conditioning_vector(z_r, y, z_s)
    _check_code(v, dec_rs.input_shape[0], "conditioning vector")
    return dec_rs(v)


def forward_discriminator(component: NetworkComponent, x: torch.Tensor, logits: bool = False):
    """Verdicts of an encoding (latent input) or decoding (image input) adversary."""
    if len(component.input_shape) == 1:
        _check_code(x, component.input_shape[0], "latent input")
    else:
        _check_image(x, component.input_shape[0])
    return component(x, logits=logits)


def one_hot(labels, n_classes: int, dtype=torch.float32) -> torch.Tensor:
    """1-based labels -> one-hot rows."""

    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if labels.numel() and (labels.min() < 1 or labels.max() > n_classes):
        raise LabelError(f"labels must lie in 1..{n_classes}")
    return F.one_hot(labels - 1, n_classes).to(dtype)
