"""Inference over trained models: structure integration, classification,
reconstruction and latent traversal grids.  All calls run in eval mode and
restore each component's previous mode afterwards."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import losses as L
from .errors import CheckpointError, LabelError, ShapeError
from .model import ConditionalModel, ReferenceModel
from .networks import forward_decoder_rs, forward_encoder_r, forward_encoder_rs, one_hot

DEFAULT_GRID = (-3.0, -1.5, 0.0, 1.5, 3.0)


@contextmanager
def eval_mode(*components):
    modes = [c.training for c in components]
    for c in components:
        c.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        for c, m in zip(components, modes):
            c.train(m)


def _require_trained(*stages):
    for s in stages:
        if getattr(s, "trained_steps", 0) <= 0:
            raise CheckpointError(f"{type(s).__name__} has not been trained")


def _as_batch(x) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x).float()
    return x.unsqueeze(0) if x.dim() == 3 else x


@dataclass
class IntegratedCellImage:
    """Reference channels followed by one predicted channel per requested label."""

    pixels: torch.Tensor
    labels: list
    channel_names: list
    checkpoint_id: str | None = None
    provenance: dict = field(default_factory=dict)


def integrate_structures(reference: ReferenceModel, conditional: ConditionalModel, x_r,
                         labels, structure_names=None, checkpoint_id=None,
                         allow_untrained: bool = False) -> IntegratedCellImage:
    """Most likely localization of each requested structure given the
    reference channels: encode ``x_r``, then decode every label with the
    structure code at the prior's mode (the zero vector)."""
    if not allow_untrained:
        _require_trained(reference, conditional)
    K = conditional.config.n_classes
    labels = [int(y) for y in labels]
    bad = [y for y in labels if not 1 <= y <= K]
    if bad:
        raise LabelError(f"unknown structure label(s) {bad}; expected 1..{K}")
    x_r = _as_batch(x_r)
    r = reference.config.n_reference
    outs = [x_r]
    with eval_mode(reference.enc_r, conditional.dec_rs):
        z_r = forward_encoder_r(reference.enc_r, x_r)
        n = z_r.shape[0]
        z_s = conditional.prior.mode(n)
        for y in labels:
            x_hat = forward_decoder_rs(conditional.dec_rs, z_r, one_hot([y] * n, K), z_s)
            outs.append(x_hat[:, r:r + 1])
    names = list(structure_names) if structure_names else [f"structure_{k}" for k in range(1, K + 1)]
    channels = ["membrane", "nucleus"] + [names[y - 1] for y in labels]
    return IntegratedCellImage(torch.cat(outs, 1), labels, channels, checkpoint_id,
                               {"z_s": "prior mode (zeros)", "y": "one-hot"})


def classify(conditional: ConditionalModel, x_rs):
    """Structure-class distribution and its argmax (1-based, ties -> lowest label)."""
    x_rs = _as_batch(x_rs)
    with eval_mode(conditional.enc_rs):
        _, y_hat, _ = forward_encoder_rs(conditional.enc_rs, x_rs)
    return y_hat, y_hat.argmax(1) + 1


def classify_all(conditional: ConditionalModel, images, batch: int = 64):
    probs, preds = [], []
    for chunk in torch.split(_as_batch(images), batch):
        p, y = classify(conditional, chunk)
        probs.append(p)
        preds.append(y)
    return torch.cat(probs), torch.cat(preds)


def confusion_matrix(true, pred, n_classes: int) -> np.ndarray:
    """Rows are true labels, columns predicted labels (both 1-based)."""
    true = np.asarray(true, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    for arr in (true, pred):
        if arr.size and (arr.min() < 1 or arr.max() > n_classes):
            raise LabelError(f"labels must lie in 1..{n_classes}")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (true - 1, pred - 1), 1)
    return m


def format_confusion(matrix: np.ndarray, names) -> str:
    width = max(len(n) for n in names)
    cell = max(3, len(str(matrix.max())))
    lines = []
    for name, row in zip(names, matrix):
        lines.append(f"{name:>{width}}  " + " ".join(f"{v:>{cell}d}" for v in row))
    return "\n".join(lines)


def reconstruct(model, x):
    """Round trip through encoder and decoder; returns ``(x_hat, per-image BCE)``."""
    x = _as_batch(x)
    if isinstance(model, ReferenceModel):
        with eval_mode(model.enc_r, model.dec_r):
            x_hat = model.dec_r(forward_encoder_r(model.enc_r, x))
    elif isinstance(model, ConditionalModel):
        with eval_mode(model.enc_rs, model.dec_rs):
            z_r, y_hat, z_s = forward_encoder_rs(model.enc_rs, x)
            x_hat = forward_decoder_rs(model.dec_rs, z_r, y_hat, z_s)
    else:
        raise TypeError(f"cannot reconstruct with {type(model).__name__}")
    per_image = torch.stack([L.bce(a, b) for a, b in zip(x_hat, x)])
    return x_hat, per_image


def latent_traversal(model, role: str, dims=(0, 1), grid=DEFAULT_GRID, z_r=None, y=None):
    """Decode a 2D slice of a latent space with every other entry at zero.

    Returns a tensor (len(grid), len(grid), C, S, S) whose ``[row, col]`` tile
    has ``dims[0]`` set to ``grid[col]`` (horizontal) and ``dims[1]`` to
    ``grid[row]`` (vertical).  For ``role="z_s"`` the reference code ``z_r``
    and structure label ``y`` are held fixed.
    """
    D = model.config.latent_dim
    i, j = (int(d) for d in dims)
    if not (0 <= i < D and 0 <= j < D) or i == j:
        raise ShapeError(f"dims must be two distinct indices in 0..{D - 1}, got {dims}")
    grid = [float(g) for g in grid]
    G = len(grid)
    codes = torch.zeros(G * G, D)
    for row, vj in enumerate(grid):
        for col, vi in enumerate(grid):
            codes[row * G + col, i] = vi
            codes[row * G + col, j] = vj

    if role == "z_r":
        if not isinstance(model, ReferenceModel):
            raise TypeError("z_r traversal needs the reference model")
        with eval_mode(model.dec_r):
            out = model.dec_r(codes)
    elif role == "z_s":
        if not isinstance(model, ConditionalModel):
            raise TypeError("z_s traversal needs the conditional model")
        if z_r is None or y is None:
            raise ValueError("z_s traversal needs fixed z_r and y")
        z_r = torch.as_tensor(z_r, dtype=torch.float32).reshape(1, D).expand(G * G, D)
        y_vec = one_hot([int(y)] * (G * G), model.config.n_classes)
        with eval_mode(model.dec_rs):
            out = forward_decoder_rs(model.dec_rs, z_r, y_vec, codes)
    else:
        raise ValueError(f"role must be 'z_r' or 'z_s', got {role!r}")
    return out.reshape(G, G, *out.shape[1:])


def composite_rgb(img) -> np.ndarray:
    """(C, H, W) in [0, 1] -> (H, W, 3): membrane magenta, nucleus cyan, structure yellow."""
    img = np.asarray(img, dtype=np.float64)
    colors = [(1, 0, 1), (0, 1, 1), (1, 1, 0)]
    rgb = np.zeros(img.shape[1:] + (3,))
    for ch, col in zip(img, colors):
        rgb += ch[..., None] * np.array(col, dtype=np.float64) * (0.6 if col != (1, 1, 0) else 1.0)
    return np.clip(rgb, 0, 1)


def montage(tiles, pad: int = 1) -> np.ndarray:
    """Row-major RGB montage of a (rows, cols, C, H, W) grid as uint8."""
    tiles = np.asarray(tiles)
    rows, cols, _, h, w = tiles.shape
    out = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad, 3))
    for r in range(rows):
        for c in range(cols):
            y0, x0 = pad + r * (h + pad), pad + c * (w + pad)
            out[y0:y0 + h, x0:x0 + w] = composite_rgb(tiles[r, c])
    return (np.round(out * 255)).astype(np.uint8)


def mass_inside(channel, mask) -> float:
    """Fraction of a channel's total intensity that falls inside ``mask``."""
    channel = np.asarray(channel, dtype=np.float64)
    total = channel.sum()
    return float(channel[np.asarray(mask, bool)].sum() / total) if total > 0 else 0.0


def predicted_class_probs(logits: torch.Tensor) -> torch.Tensor:
    return F.softmax(logits, dim=1)
