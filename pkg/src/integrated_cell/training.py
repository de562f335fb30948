"""Alternating adversarial training of the reference and conditional models.

Every minibatch runs one forward pass through all four components of a
stage, evaluates each component's objective, takes the gradient of each
objective with respect to that component's parameters only, and then
applies the Adam updates in the listed order (adversaries first).  Because
gradients are restricted per component, an adversary's error signal reaches
a decoder but never an encoder, and the autoencoder's terms never move
adversary parameters.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from . import losses as L
from .errors import LabelError, ShapeError, TrainingError
from .model import ConditionalModel, ModelConfig, ReferenceModel
from .optim import Adam

log = logging.getLogger(__name__)

EVAL_BATCH = 64


@dataclass
class TrainingConfig:
    batch_size: int = 32
    learning_rate: float = 2e-4
    betas: tuple = (0.5, 0.999)
    adam_eps: float = 1e-8
    gamma_enc: float = 1e-4
    gamma_dec: float = 1e-5
    epochs_reference: int = 150
    epochs_conditional: int = 220
    init_seed: int = 0
    shuffle_seed: int = 1
    prior_seed: int = 2
    evaluate_every_epoch: bool = True
    # "zero" keeps the decoder's output bias at 0; "data" starts it at the
    # logit of each channel's mean training intensity
    output_bias_init: str = "zero"

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.batch_size < 2:
            raise TrainingError("batch_size must be at least 2 for batch normalization")
        if self.output_bias_init not in ("zero", "data"):
            raise TrainingError("output_bias_init must be 'zero' or 'data'")
        if self.gamma_enc < 0 or self.gamma_dec < 0:
            raise TrainingError("gamma weights must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainingCurves:
    """Loss series keyed by name.

    ``minibatch[name][i]`` is the value at step ``steps[i]``; ``epoch`` holds
    per-epoch means; ``evaluation`` holds eval-mode metrics over the training
    data with index 0 measured before the first update.
    """

    steps: list = field(default_factory=list)
    minibatch: dict = field(default_factory=dict)
    epoch: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    _pending: dict = field(default_factory=dict, repr=False)

    def record_step(self, step: int, values: dict) -> None:
        self.steps.append(step)
        for k, v in values.items():
            self.minibatch.setdefault(k, []).append(v)
            self._pending.setdefault(k, []).append(v)

    def close_epoch(self) -> None:
        for k, vs in self._pending.items():
            self.epoch.setdefault(k, []).append(sum(vs) / len(vs))
        self._pending = {}

    def record_evaluation(self, values: dict) -> None:
        for k, v in values.items():
            self.evaluation.setdefault(k, []).append(v)

    def to_dict(self) -> dict:
        return {
            "steps": list(self.steps),
            "minibatch": {k: list(v) for k, v in self.minibatch.items()},
            "epoch": {k: list(v) for k, v in self.epoch.items()},
            "evaluation": {k: list(v) for k, v in self.evaluation.items()},
            "pending": {k: list(v) for k, v in self._pending.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingCurves":
        c = cls(list(d["steps"]), d["minibatch"], d["epoch"], d["evaluation"])
        c._pending = d.get("pending", {})
        return c

    def write_csv(self, path) -> None:
        """Minibatch series as ``step,loss_name,value`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss_name", "value"])
            for i, step in enumerate(self.steps):
                for name in sorted(self.minibatch):
                    w.writerow([step, name, repr(self.minibatch[name][i])])

    def write_epoch_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss_name", "value"])
            for name in sorted(self.epoch):
                for i, v in enumerate(self.epoch[name]):
                    w.writerow([i + 1, name, repr(v)])
            for name in sorted(self.evaluation):
                for i, v in enumerate(self.evaluation[name]):
                    w.writerow([i, f"eval_{name}", repr(v)])


def init_output_bias(decoder, images, eps: float = 1e-3) -> torch.Tensor:
    """Set the decoder's final bias (or batch-norm shift) so that a zero
    pre-activation decodes to each channel's mean training intensity."""
    mean = images.float().mean(dim=(0, 2, 3)).clamp(eps, 1 - eps)
    logit = torch.log(mean) - torch.log1p(-mean)
    last = decoder.body[-1]
    target = last.bn.bias if last.bn is not None else last.op.bias
    with torch.no_grad():
        target.copy_(logit)
    return logit


class _Trainer:
    stage = ""
    update_order: tuple[str, ...] = ()

    def __init__(self, images: torch.Tensor, config: TrainingConfig, model):
        if images.shape[0] == 0:
            raise TrainingError("empty corpus")
        if images.shape[0] < 2:
            raise TrainingError("corpus needs at least 2 images for batch normalization")
        self.images = images.float()
        self.config = config
        self.model = model.train()
        self.optimizers = {
            name: Adam(comp.parameters(), config.learning_rate, config.betas, config.adam_eps)
            for name, comp in model.components().items()
        }
        self.shuffle_rng = torch.Generator().manual_seed(config.shuffle_seed)
        self.prior_rng = torch.Generator().manual_seed(config.prior_seed)
        self.curves = TrainingCurves()
        self.epoch = 0
        self.batch_index = 0
        self.step_count = 0
        self.permutation = None
        if config.output_bias_init == "data" and model.trained_steps == 0:
            init_output_bias(self.decoder, self.images)

    @property
    def decoder(self):
        return self.model.components()[self.update_order[-1]]

    # -- data order ---------------------------------------------------------

    def _epoch_batches(self) -> list:
        n, b = self.images.shape[0], self.config.batch_size
        chunks = list(torch.split(self.permutation, b))
        if chunks and chunks[-1].numel() < 2:
            chunks.pop()
        return chunks

    def _next_batch(self):
        if self.permutation is None:
            self.permutation = torch.randperm(self.images.shape[0], generator=self.shuffle_rng)
            self.batch_index = 0
        return self._epoch_batches()[self.batch_index]

    # -- one update ---------------------------------------------------------

    def compute_gradients(self, idx):
        """Forward pass and per-component gradients at the current parameters.

        Returns ``(loss_values, grads)`` where ``grads[name]`` lists one tensor
        per parameter of that component.
        """
        losses, objectives = self.objectives(idx)
        bad = {k: float(v.detach()) for k, v in losses.items() if not torch.isfinite(v)}
        if bad:
            raise TrainingError(
                f"{self.stage}: non-finite loss at step {self.step_count + 1} "
                f"(epoch {self.epoch + 1}): {bad}"
            )
        grads = {}
        comps = self.model.components()
        for name in self.update_order:
            params = list(comps[name].parameters())
            grads[name] = torch.autograd.grad(objectives[name], params, retain_graph=True)
        return {k: float(v.detach()) for k, v in losses.items()}, grads

    def apply_update(self, name: str, grads) -> None:
        self.optimizers[name].step(grads)

    def train_step(self) -> dict:
        idx = self._next_batch()
        values, grads = self.compute_gradients(idx)
        for name in self.update_order:
            self.apply_update(name, grads[name])
        self.step_count += 1
        self.model.trained_steps += 1
        self.curves.record_step(self.step_count, values)
        self.batch_index += 1
        if self.batch_index >= len(self._epoch_batches()):
            self._finish_epoch()
        return values

    def _finish_epoch(self):
        self.curves.close_epoch()
        self.epoch += 1
        self.permutation = None
        self.batch_index = 0
        if self.config.evaluate_every_epoch:
            self.curves.record_evaluation(self.evaluate())
        log.info("%s epoch %d: %s", self.stage, self.epoch,
                 {k: round(v[-1], 5) for k, v in self.curves.epoch.items()})

    def run(self, epochs: int, on_step=None) -> TrainingCurves:
        """Train until ``epochs`` epochs have completed (resumes mid-epoch)."""
        if self.step_count == 0 and not self.curves.evaluation:
            self.curves.record_evaluation(self.evaluate())
        while self.epoch < epochs:
            self.train_step()
            if on_step is not None:
                on_step(self)
        return self.curves

    def run_steps(self, n: int) -> TrainingCurves:
        if self.step_count == 0 and not self.curves.evaluation:
            self.curves.record_evaluation(self.evaluate())
        for _ in range(n):
            self.train_step()
        return self.curves

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "model": self.model.state_dict(),
            "optimizers": {k: o.state_dict() for k, o in self.optimizers.items()},
            "shuffle_rng": self.shuffle_rng.get_state(),
            "prior_rng": self.prior_rng.get_state(),
            "epoch": self.epoch,
            "batch_index": self.batch_index,
            "step": self.step_count,
            "permutation": self.permutation,
            # canonical text so the serialized bytes do not depend on object sharing
            "curves": json.dumps(self.curves.to_dict(), sort_keys=True),
        }

    def load_state_dict(self, state: dict) -> None:
        self.model.load_state_dict(state["model"])
        for k, o in self.optimizers.items():
            o.load_state_dict(state["optimizers"][k])
        self.shuffle_rng.set_state(state["shuffle_rng"])
        self.prior_rng.set_state(state["prior_rng"])
        self.epoch = state["epoch"]
        self.batch_index = state["batch_index"]
        self.step_count = state["step"]
        self.permutation = state["permutation"]
        self.curves = TrainingCurves.from_dict(json.loads(state["curves"]))


class ReferenceTrainer(_Trainer):
    """Cell and nuclear shape autoencoder with latent and image adversaries."""

    stage = "reference"
    update_order = ("decd_r", "encd_r", "enc_r", "dec_r")

    def __init__(self, images, config: TrainingConfig, model_config: ModelConfig, model=None):
        if images.dim() != 4 or images.shape[1] != model_config.n_reference:
            raise ShapeError(
                f"reference corpus must be (N, {model_config.n_reference}, S, S), "
                f"got {tuple(images.shape)}"
            )
        model = model or ReferenceModel(model_config, config.init_seed)
        super().__init__(images, config, model)

    def objectives(self, idx):
        m, cfg = self.model, self.config
        x = self.images[idx]
        z = m.enc_r(x)
        x_rec = m.dec_r(z)
        z_prior = m.prior.sample(x.shape[0], self.prior_rng, dtype=x.dtype)
        v_enc_gen = m.encd_r(z_prior)
        v_enc_obs = m.encd_r(z)
        v_dec_obs = m.decd_r(x)
        v_dec_gen = m.decd_r(m.dec_r(z_prior))

        loss_decd = L.bce(v_dec_obs, L.OBS) + L.bce(v_dec_gen, L.GEN)
        loss_encd = L.loss_encoding_discriminator(v_enc_gen, v_enc_obs)
        loss_x = L.loss_image_reconstruction(x_rec, x)
        loss_enc_adv = L.encoder_adversarial_loss(v_enc_obs)
        loss_dec_adv = L.decoder_adversarial_loss_r(v_dec_gen, m.decd_r(x_rec))

        values = {
            "decd_r": loss_decd,
            "encd_r": loss_encd,
            "recon_x_r": loss_x,
            "enc_r_adv": loss_enc_adv,
            "dec_r_adv": loss_dec_adv,
        }
        objectives = {
            "decd_r": loss_decd,
            "encd_r": loss_encd,
            "enc_r": loss_x + cfg.gamma_enc * loss_enc_adv,
            "dec_r": loss_x + cfg.gamma_dec * loss_dec_adv,
        }
        return values, objectives

    @torch.no_grad()
    def evaluate(self) -> dict:
        m = self.model.eval()
        try:
            bces, codes = [], []
            for x in torch.split(self.images, EVAL_BATCH):
                z = m.enc_r(x)
                x_rec = m.dec_r(z)
                bces.append(L.bce(x_rec, x) * x.shape[0])
                codes.append(z)
            z = torch.cat(codes)
            return {
                "recon_x_r": float(sum(bces) / self.images.shape[0]),
                "z_mean_abs_max": float(z.mean(0).abs().max()),
                "z_var_min": float(z.var(0).min()),
                "z_var_max": float(z.var(0).max()),
            }
        finally:
            m.train()


class ConditionalTrainer(_Trainer):
    """Structure-localization autoencoder conditioned on a frozen reference encoder."""

    stage = "conditional"
    update_order = ("encd_s", "decd_rs", "enc_rs", "dec_rs")

    def __init__(self, images, labels, reference: ReferenceModel, config: TrainingConfig,
                 model_config: ModelConfig, model=None):
        r = model_config.n_reference
        if images.dim() != 4 or images.shape[1] != r + 1:
            raise ShapeError(
                f"conditional corpus must be (N, {r + 1}, S, S), got {tuple(images.shape)}"
            )
        labels = torch.as_tensor(labels, dtype=torch.long)
        if labels.shape != (images.shape[0],):
            raise ShapeError("need exactly one label per image")
        K = model_config.n_classes
        if labels.numel() and (labels.min() < 1 or labels.max() > K):
            raise LabelError(f"labels must lie in 1..{K}")
        self.labels = labels
        self.reference = reference
        for p in reference.enc_r.parameters():
            p.requires_grad_(False)
        reference.enc_r.eval()
        model = model or ConditionalModel(model_config, config.init_seed)
        super().__init__(images, config, model)

    @torch.no_grad()
    def target_codes(self, x):
        """Reference codes from the frozen encoder in eval mode."""
        self.reference.enc_r.eval()
        return self.reference.enc_r(x[:, : self.reference.config.n_reference])

    def objectives(self, idx):
        m, cfg = self.model, self.config
        x, y = self.images[idx], self.labels[idx]
        z_r = self.target_codes(x)
        out = m.enc_rs(x, logits=True)
        z_r_hat, y_logits, z_s = out["z_r"], out["y"], out["z_s"]
        y_hat = F.softmax(y_logits, dim=1)
        x_rec = m.dec_rs(torch.cat([z_r_hat, y_hat, z_s], 1))
        z_prior = m.prior.sample(x.shape[0], self.prior_rng, dtype=x.dtype)
        v_gen = m.encd_s(z_prior)
        v_obs = m.encd_s(z_s)
        logits_obs = m.decd_rs(x, logits=True)
        x_gen = m.dec_rs(torch.cat([z_r_hat, y_hat, z_prior], 1))
        logits_gen = m.decd_rs(x_gen, logits=True)

        loss_encd = L.loss_encoding_discriminator(v_gen, v_obs)
        loss_decd = L.loss_decoding_discriminator_rs(logits_obs, y, logits_gen)
        loss_x = L.loss_image_reconstruction(x_rec, x)
        loss_y = L.class_loss(y_logits, y)
        loss_zr = L.mse_latent(z_r_hat, z_r)
        loss_enc_adv = L.encoder_adversarial_loss(v_obs)
        loss_dec_adv = L.decoder_adversarial_loss_rs(logits_gen, m.decd_rs(x_rec, logits=True), y)

        values = {
            "encd_s": loss_encd,
            "decd_rs": loss_decd,
            "recon_x_rs": loss_x,
            "class_y": loss_y,
            "latent_z_r": loss_zr,
            "enc_rs_adv": loss_enc_adv,
            "dec_rs_adv": loss_dec_adv,
        }
        objectives = {
            "encd_s": loss_encd,
            "decd_rs": loss_decd,
            "enc_rs": loss_x + loss_y + loss_zr + cfg.gamma_enc * loss_enc_adv,
            "dec_rs": loss_x + cfg.gamma_dec * loss_dec_adv,
        }
        return values, objectives

    @torch.no_grad()
    def evaluate(self) -> dict:
        m = self.model.eval()
        try:
            n = self.images.shape[0]
            tot = {"recon_x_rs": 0.0, "latent_z_r": 0.0, "class_y": 0.0}
            correct = 0
            for x, y in zip(torch.split(self.images, EVAL_BATCH), torch.split(self.labels, EVAL_BATCH)):
                out = m.enc_rs(x, logits=True)
                y_hat = F.softmax(out["y"], dim=1)
                x_rec = m.dec_rs(torch.cat([out["z_r"], y_hat, out["z_s"]], 1))
                b = x.shape[0]
                tot["recon_x_rs"] += float(L.bce(x_rec, x)) * b
                tot["latent_z_r"] += float(L.mse_latent(out["z_r"], self.target_codes(x))) * b
                tot["class_y"] += float(L.class_loss(out["y"], y)) * b
                correct += int((out["y"].argmax(1) + 1 == y).sum())
            res = {k: v / n for k, v in tot.items()}
            res["accuracy"] = correct / n
            return res
        finally:
            m.train()


def train_reference(images, config: TrainingConfig, model_config: ModelConfig, epochs=None):
    """Train the reference model; returns ``(model, curves)``."""
    trainer = ReferenceTrainer(images, config, model_config)
    trainer.run(config.epochs_reference if epochs is None else epochs)
    return trainer.model, trainer.curves


def train_conditional(images, labels, reference: ReferenceModel, config: TrainingConfig,
                      model_config: ModelConfig, epochs=None):
    """Train the conditional model on top of a trained reference model."""
    trainer = ConditionalTrainer(images, labels, reference, config, model_config)
    trainer.run(config.epochs_conditional if epochs is None else epochs)
    return trainer.model, trainer.curves


def is_finite_curve(series) -> bool:
    return all(math.isfinite(v) for v in series)
