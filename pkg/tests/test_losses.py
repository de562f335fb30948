import math

import numpy as np
import numpy.testing as npt
import pytest
import torch
from fd_utils import check_input_grad
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from integrated_cell import losses as L
from integrated_cell.errors import LabelError, ShapeError

LN2 = math.log(2.0)


def t(values):
    return torch.tensor(values, dtype=torch.float64)


def bce_oracle(pred, target, eps=1e-7):
    # direct numpy evaluation of the mean pixel-wise cross-entropy
    p = np.clip(np.asarray(pred, dtype=np.float64), eps, 1 - eps)
    u = np.asarray(target, dtype=np.float64)
    return float(-np.mean(u * np.log(p) + (1 - u) * np.log(1 - p)))


def log_softmax_oracle(logits, y):
    z = np.asarray(logits, dtype=np.float64)
    return float(-(z[y - 1] - math.log(np.exp(z).sum())))


class TestBCE:
    def test_perfect_binary_prediction(self):
        u = t([0.0, 1.0, 1.0, 0.0])
        assert float(L.bce(u, u)) < 1e-6

    def test_uniform_predictor(self):
        u = t([0.0, 1.0, 0.3, 0.9])
        npt.assert_allclose(float(L.bce(torch.full_like(u, 0.5), u)), LN2, atol=1e-12)

    def test_hand_value(self):
        # -(ln 0.8 + ln 0.8) / 2
        npt.assert_allclose(float(L.bce(t([0.8, 0.2]), t([1.0, 0.0]))), 0.22314355, atol=1e-6)

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        p, u = rng.uniform(0.01, 0.99, 50), rng.uniform(0, 1, 50)
        npt.assert_allclose(float(L.bce(t(p), t(u))), bce_oracle(p, u), rtol=1e-12)

    def test_clamped_at_boundaries(self):
        v = float(L.bce(t([0.0, 1.0]), t([1.0, 0.0])))
        npt.assert_allclose(v, -math.log(1e-7), rtol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            L.bce(t([0.5, 0.5]), t([1.0, 0.0, 1.0]))

    def test_scalar_target_broadcasts(self):
        npt.assert_allclose(float(L.bce(t([0.5, 0.5]), 1.0)), LN2, atol=1e-12)


class TestReconstruction:
    def test_identity(self):
        x = (torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(0)) > 0.5).double()
        assert float(L.loss_image_reconstruction(x, x)) < 1e-6

    @pytest.mark.parametrize("channels", [2, 3])
    def test_any_channel_count(self, channels):
        x = torch.rand(2, channels, 8, 8, dtype=torch.float64)
        p = torch.full_like(x, 0.5)
        npt.assert_allclose(float(L.loss_image_reconstruction(p, x)), LN2, atol=1e-12)

    def test_corrupting_one_pixel_increases_loss(self):
        x = torch.zeros(1, 2, 4, 4, dtype=torch.float64)
        x[0, 0, 1, 1] = 1.0
        p = x.clamp(0.1, 0.9)
        q = p.clone()
        q[0, 1, 2, 2] = 0.5
        assert float(L.loss_image_reconstruction(q, x)) > float(L.loss_image_reconstruction(p, x))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            L.loss_image_reconstruction(torch.zeros(1, 2, 4, 4), torch.zeros(1, 3, 4, 4))


class TestDiscriminatorLosses:
    @pytest.mark.parametrize("fn", [L.loss_encoding_discriminator, L.loss_decoding_discriminator_r])
    def test_chance_level(self, fn):
        half = torch.full((7, 1), 0.5, dtype=torch.float64)
        assert abs(float(fn(half, half)) - 2 * LN2) < 1e-9

    @pytest.mark.parametrize("fn", [L.loss_encoding_discriminator, L.loss_decoding_discriminator_r])
    def test_perfect_discriminator(self, fn):
        assert float(fn(t([1e-7]), t([1 - 1e-7]))) < 1e-6

    def test_encoder_term_uses_generated_label(self):
        v = t([0.3, 0.8])
        npt.assert_allclose(float(L.encoder_adversarial_loss(v)), bce_oracle(v, [0, 0]), rtol=1e-12)

    def test_decoder_term_sums_two_observed_scores(self):
        gen, rec = t([0.3, 0.6]), t([0.2, 0.9])
        expected = bce_oracle(gen, [1, 1]) + bce_oracle(rec, [1, 1])
        npt.assert_allclose(float(L.decoder_adversarial_loss_r(gen, rec)), expected, rtol=1e-12)

    def test_perfect_fool_is_zero(self):
        one = t([1 - 1e-7])
        assert float(L.decoder_adversarial_loss_r(one, one)) < 1e-6


class TestLatentMSE:
    def test_identical(self):
        z = torch.randn(3, 16, dtype=torch.float64)
        assert float(L.mse_latent(z, z)) == 0.0

    def test_unit_offset(self):
        npt.assert_allclose(float(L.mse_latent(torch.zeros(16), torch.ones(16))), 1.0)

    def test_gradient_formula(self):
        z_hat = torch.randn(16, dtype=torch.float64, requires_grad=True)
        z = torch.randn(16, dtype=torch.float64)
        (g,) = torch.autograd.grad(L.mse_latent(z_hat, z), z_hat)
        npt.assert_allclose(g.numpy(), (2 / 16) * (z_hat - z).detach().numpy(), rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            L.mse_latent(torch.zeros(15), torch.zeros(16))


class TestClassLoss:
    def test_uniform_logits_ten_classes(self):
        assert abs(float(L.class_loss(torch.zeros(10, dtype=torch.float64), 3)) - math.log(10)) < 1e-9

    def test_hand_value(self):
        # -ln(e / (e + 2))
        npt.assert_allclose(float(L.class_loss(t([1.0, 0.0, 0.0]), 1)), 0.55144471, atol=1e-6)

    def test_matches_oracle_batch(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(6, 5))
        y = rng.integers(1, 6, size=6)
        expected = np.mean([log_softmax_oracle(z, c) for z, c in zip(logits, y)])
        npt.assert_allclose(float(L.class_loss(t(logits), y)), expected, rtol=1e-12)

    def test_from_probs_agrees(self):
        logits = torch.randn(4, 5, dtype=torch.float64)
        y = [1, 5, 2, 3]
        npt.assert_allclose(float(L.class_loss_from_probs(torch.softmax(logits, 1), y)),
                            float(L.class_loss(logits, y)), rtol=1e-10)

    @pytest.mark.parametrize("y", [0, 4])
    def test_label_out_of_range(self, y):
        with pytest.raises(LabelError):
            L.class_loss(torch.zeros(3), y)

    def test_generated_class_is_last(self):
        K = 4
        logits_obs = torch.zeros(2, K + 1, dtype=torch.float64)
        logits_gen = torch.zeros(2, K + 1, dtype=torch.float64)
        logits_gen[:, K] = 50.0
        logits_obs[:, 1] = 50.0
        # observed as class 2, generated confidently as K+1
        assert float(L.loss_decoding_discriminator_rs(logits_obs, [2, 2], logits_gen)) < 1e-9

    def test_decoder_rs_term_targets_true_labels(self):
        gen = torch.randn(3, 5, dtype=torch.float64)
        rec = torch.randn(3, 5, dtype=torch.float64)
        y = [1, 4, 2]
        expected = float(L.class_loss(gen, y) + L.class_loss(rec, y))
        npt.assert_allclose(float(L.decoder_adversarial_loss_rs(gen, rec, y)), expected)


finite = st.floats(-20, 20, allow_nan=False, width=64)
probs = st.floats(1e-3, 1 - 1e-3, allow_nan=False, width=64)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=finite), st.floats(-100, 100), st.data())
def test_class_loss_shift_invariant(logits, shift, data):
    y = data.draw(st.integers(1, len(logits)))
    a = float(L.class_loss(t(logits), y))
    b = float(L.class_loss(t(logits + shift), y))
    assert abs(a - b) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=probs), arrays(np.float64, n, elements=st.floats(0, 1)))))
def test_bce_nonnegative_and_matches_oracle(pu):
    p, u = pu
    v = float(L.bce(t(p), t(u)))
    assert v >= -1e-12
    npt.assert_allclose(v, bce_oracle(p, u), rtol=1e-10, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.sampled_from([0.0, 1.0])),
       arrays(np.float64, 20, elements=probs))
def test_bce_minimized_at_target(u, p):
    p = p[: len(u)]
    # for binary targets the loss is smallest when the prediction equals the target
    assert float(L.bce(t(p), t(u))) >= float(L.bce(t(u), t(u)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite))
def test_mse_symmetric_nonnegative(a, b):
    v = float(L.mse_latent(t(a), t(b)))
    assert v >= 0
    npt.assert_allclose(v, float(L.mse_latent(t(b), t(a))))


class TestLossGradients:
    """Autograd versus central differences (h = 1e-4) away from the clamp."""

    def _probs(self, shape, seed):
        g = torch.Generator().manual_seed(seed)
        return 0.05 + 0.9 * torch.rand(shape, generator=g, dtype=torch.float64)

    def test_bce(self):
        u = torch.rand(4, 6, dtype=torch.float64)
        assert check_input_grad(lambda p: L.bce(p, u), [self._probs((4, 6), 0)]) < 1e-3

    def test_reconstruction(self):
        x = torch.rand(2, 3, 4, 4, dtype=torch.float64)
        assert check_input_grad(lambda p: L.loss_image_reconstruction(p, x),
                                [self._probs((2, 3, 4, 4), 1)]) < 1e-3

    def test_encoding_discriminator(self):
        err = check_input_grad(L.loss_encoding_discriminator,
                               [self._probs((5, 1), 2), self._probs((5, 1), 3)])
        assert err < 1e-3

    def test_decoding_discriminator_r(self):
        err = check_input_grad(L.loss_decoding_discriminator_r,
                               [self._probs((5, 1), 4), self._probs((5, 1), 5)])
        assert err < 1e-3

    def test_adversarial_terms(self):
        assert check_input_grad(L.encoder_adversarial_loss, [self._probs((5, 1), 6)]) < 1e-3
        assert check_input_grad(L.decoder_adversarial_loss_r,
                                [self._probs((5, 1), 7), self._probs((5, 1), 8)]) < 1e-3

    def test_mse(self):
        z = torch.randn(3, 16, dtype=torch.float64)
        assert check_input_grad(lambda a: L.mse_latent(a, z), [torch.randn(3, 16)]) < 1e-3

    def test_class_losses(self):
        y = [1, 3, 2]
        assert check_input_grad(lambda z: L.class_loss(z, y), [torch.randn(3, 4)]) < 1e-3
        assert check_input_grad(lambda p: L.class_loss_from_probs(p, y),
                                [self._probs((3, 4), 9)]) < 1e-3
        assert check_input_grad(lambda a, b: L.loss_decoding_discriminator_rs(a, y, b),
                                [torch.randn(3, 5), torch.randn(3, 5)]) < 1e-3
        assert check_input_grad(lambda a, b: L.decoder_adversarial_loss_rs(a, b, y),
                                [torch.randn(3, 5), torch.randn(3, 5)]) < 1e-3
