"""Scalar objectives.  Every loss is a mean over elements (pixels, latent
entries, batch items) so weighting factors do not depend on image size.

Binary verdict labels: observed = 1, generated = 0.  Class labels are
1-based; the image adversary of the conditional model uses K+1 for
"generated".
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import LabelError, ShapeError

EPS = 1e-7
OBS = 1.0
GEN = 0.0


def bce(pred: torch.Tensor, target, eps: float = EPS) -> torch.Tensor:
    """Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    target = torch.as_tensor(target, dtype=pred.dtype)
    if target.dim() == 0:
        target = target.expand_as(pred)
    if target.shape != pred.shape:
        raise ShapeError(f"bce shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    p = pred.clamp(eps, 1 - eps)
    return -(target * torch.log(p) + (1 - target) * torch.log1p(-p)).mean()


def loss_image_reconstruction(x_hat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    if x_hat.shape != x.shape:
        raise ShapeError(
            f"reconstruction has shape {tuple(x_hat.shape)}, input {tuple(x.shape)}"
        )
    return bce(x_hat, x)


def loss_encoding_discriminator(v_gen: torch.Tensor, v_obs: torch.Tensor) -> torch.Tensor:
    """Latent adversary objective: prior draws labelled generated, encoder
    codes labelled observed."""
    return bce(v_gen, GEN) + bce(v_obs, OBS)


def loss_decoding_discriminator_r(v_gen: torch.Tensor, v_obs: torch.Tensor) -> torch.Tensor:
    """Image adversary objective: decoded prior draws generated, data observed."""
    return bce(v_gen, GEN) + bce(v_obs, OBS)


def encoder_adversarial_loss(v_obs: torch.Tensor) -> torch.Tensor:
    # the encoder wants its codes mistaken for prior draws
    return bce(v_obs, GEN)


def decoder_adversarial_loss_r(v_gen: torch.Tensor, v_rec: torch.Tensor) -> torch.Tensor:
    # decoded prior draws and reconstructions should both pass as data
    return bce(v_gen, OBS) + bce(v_rec, OBS)


def mse_latent(z_hat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    if z_hat.shape != z.shape:
        raise ShapeError(f"latent shapes differ: {tuple(z_hat.shape)} vs {tuple(z.shape)}")
    return ((z - z_hat) ** 2).mean()


def _labels(y, n_classes: int, batch: int) -> torch.Tensor:
    y = torch.as_tensor(y, dtype=torch.long).reshape(-1)
    if y.numel() == 1 and batch > 1:
        y = y.expand(batch)
    if y.numel() != batch:
        raise ShapeError(f"{y.numel()} labels for a batch of {batch}")
    if (y < 1).any() or (y > n_classes).any():
        raise LabelError(f"labels must lie in 1..{n_classes}, got {y.tolist()}")
    return y - 1


def class_loss(logits: torch.Tensor, y) -> torch.Tensor:
    """Mean of -log softmax(logits)_y over the batch; ``y`` is 1-based.

    Accepts a single logit vector or a batch of them.
    """
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    idx = _labels(y, logits.shape[1], logits.shape[0])
    return F.cross_entropy(logits, idx)


def class_loss_from_probs(probs: torch.Tensor, y, eps: float = EPS) -> torch.Tensor:
    """Same loss for inputs already normalized by a softmax."""
    if probs.dim() == 1:
        probs = probs.unsqueeze(0)
    idx = _labels(y, probs.shape[1], probs.shape[0])
    picked = probs.gather(1, idx.unsqueeze(1)).squeeze(1)
    return -torch.log(picked.clamp_min(eps)).mean()


def loss_decoding_discriminator_rs(logits_obs, y, logits_gen) -> torch.Tensor:
    """Conditional image adversary: data classified by structure, decoded
    prior draws into the extra generated class."""
    n_out = logits_gen.shape[-1]
    return class_loss(logits_obs, y) + class_loss(logits_gen, n_out)


def decoder_adversarial_loss_rs(logits_gen, logits_rec, y) -> torch.Tensor:
    # generated and reconstructed images should be classified as their true structure
    return class_loss(logits_gen, y) + class_loss(logits_rec, y)
