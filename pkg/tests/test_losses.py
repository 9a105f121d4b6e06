"""Loss tests: closed-form values to high precision, oracle cross-checks,
stationarity of the uncertainty weighting, and gradient-descent convergence."""

import math

import numpy as np
import pytest

from mattekit import tensor as T
from mattekit.losses import (
    EmptyMaskWarning,
    TaskWeights,
    alpha_l1_masked,
    mask_from_trimap_batch,
    naive_combine,
    trimap_ce,
    uncertainty_combine,
    unknown_mask_from_logits,
)
from mattekit.matting import BG, FG, UNKNOWN
from mattekit.tensor import Tape, Tensor


def ce_oracle(logits, labels):
    """Direct per-pixel softmax cross-entropy, no log-sum-exp tricks."""
    n, c, h, w = logits.shape
    total = 0.0
    for i in range(n):
        for y in range(h):
            for x in range(w):
                z = logits[i, :, y, x]
                p = np.exp(z) / np.exp(z).sum()
                total += -math.log(p[labels[i, y, x]])
    return total / (n * h * w)


class TestTrimapCE:
    def test_uniform_logits_ln3(self):
        logits = Tensor(np.zeros((2, 3, 4, 4)))
        labels = np.random.default_rng(0).integers(0, 3, (2, 4, 4))
        assert trimap_ce(logits, labels).item() == pytest.approx(math.log(3.0), abs=1e-12)

    def test_saturated_logits_near_zero(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 3, (2, 4, 4))
        logits = np.zeros((2, 3, 4, 4))
        for lab in (BG, UNKNOWN, FG):
            logits[:, lab][labels == lab] = 20.0
        assert trimap_ce(Tensor(logits), labels).item() <= 1e-8

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(0, 2, (2, 3, 4, 4))
        labels = rng.integers(0, 3, (2, 4, 4))
        got = trimap_ce(Tensor(logits), labels).item()
        assert got == pytest.approx(ce_oracle(logits, labels), abs=1e-7)

    def test_large_logits_stable(self):
        logits = np.zeros((1, 3, 2, 2))
        logits[:, 0] = 1000.0
        labels = np.zeros((1, 2, 2), dtype=np.int64)
        val = trimap_ce(Tensor(logits), labels).item()
        assert np.isfinite(val) and val == pytest.approx(0.0, abs=1e-8)

    def test_bad_labels_raise(self):
        with pytest.raises(ValueError, match="labels"):
            trimap_ce(Tensor(np.zeros((1, 3, 2, 2))), np.full((1, 2, 2), 3))

    def test_wrong_channel_count(self):
        with pytest.raises(ValueError):
            trimap_ce(Tensor(np.zeros((1, 4, 2, 2))), np.zeros((1, 2, 2), dtype=int))

    def test_gradient(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 3, (2, 3, 3))
        logits = Tensor(rng.normal(0, 1, (2, 3, 3, 3)), requires_grad=True)
        report = T.grad_check(lambda z: trimap_ce(z, labels), [logits], rng=rng)
        assert report.max_rel_err <= 1e-4

    def test_nonnegative(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            logits = Tensor(rng.normal(0, 3, (1, 3, 4, 4)))
            labels = rng.integers(0, 3, (1, 4, 4))
            assert trimap_ce(logits, labels).item() >= 0.0


class TestUnknownMask:
    def test_favor_unknown_full(self):
        logits = np.zeros((2, 3, 4, 4))
        logits[:, UNKNOWN] = 5.0
        assert unknown_mask_from_logits(Tensor(logits)).all()

    def test_favor_fg_empty(self):
        logits = np.zeros((2, 3, 4, 4))
        logits[:, FG] = 5.0
        assert not unknown_mask_from_logits(Tensor(logits)).any()

    def test_three_way_tie_is_unknown(self):
        logits = np.ones((1, 3, 2, 2))
        assert unknown_mask_from_logits(Tensor(logits)).all()

    def test_two_way_tie_with_unknown(self):
        logits = np.zeros((1, 3, 1, 1))
        logits[0, UNKNOWN] = 2.0
        logits[0, FG] = 2.0
        assert unknown_mask_from_logits(Tensor(logits)).all()

    def test_mask_shape(self):
        m = unknown_mask_from_logits(Tensor(np.zeros((2, 3, 5, 7))))
        assert m.shape == (2, 5, 7) and m.dtype == bool


class TestAlphaL1:
    def test_perfect_zero(self):
        a = np.random.default_rng(5).random((1, 1, 4, 4))
        mask = np.ones((1, 4, 4), bool)
        assert alpha_l1_masked(Tensor(a), a, mask).item() == 0.0

    def test_two_pixel_mean(self):
        pred = np.zeros((1, 1, 1, 2))
        gt = np.array([[[[0.2, 0.4]]]])
        mask = np.ones((1, 1, 2), bool)
        assert alpha_l1_masked(Tensor(pred), gt, mask).item() == pytest.approx(0.3)

    def test_values_outside_mask_ignored(self):
        rng = np.random.default_rng(6)
        gt = rng.random((1, 1, 4, 4))
        mask = np.zeros((1, 4, 4), bool)
        mask[0, :2] = True
        pred1 = gt.copy()
        pred2 = gt.copy()
        pred2[0, 0, 2:] += 100.0  # outside mask
        l1 = alpha_l1_masked(Tensor(pred1), gt, mask).item()
        l2 = alpha_l1_masked(Tensor(pred2), gt, mask).item()
        assert l1 == l2 == 0.0

    def test_empty_mask_zero_with_warning(self):
        a = np.random.default_rng(7).random((1, 1, 4, 4))
        with pytest.warns(EmptyMaskWarning):
            out = alpha_l1_masked(Tensor(a, requires_grad=True), np.zeros_like(a),
                                  np.zeros((1, 4, 4), bool))
        assert out.item() == 0.0

    def test_empty_mask_fallback(self):
        pred = np.full((1, 1, 2, 2), 0.5)
        gt = np.zeros((1, 1, 2, 2))
        fallback = np.ones((1, 2, 2), bool)
        with pytest.warns(EmptyMaskWarning):
            out = alpha_l1_masked(Tensor(pred), gt, np.zeros((1, 2, 2), bool),
                                  fallback_mask=fallback)
        assert out.item() == pytest.approx(0.5)

    def test_gradient_restricted_to_mask(self):
        rng = np.random.default_rng(8)
        pred = Tensor(rng.random((1, 1, 4, 4)), requires_grad=True)
        gt = rng.random((1, 1, 4, 4))
        mask = np.zeros((1, 4, 4), bool)
        mask[0, 1, 1] = True
        mask[0, 2, 3] = True
        with Tape() as tape:
            loss = alpha_l1_masked(pred, gt, mask)
            tape.backward(loss)
        g = pred.grad[0, 0]
        assert g[1, 1] != 0.0 and g[2, 3] != 0.0
        g[1, 1] = g[2, 3] = 0.0
        assert (g == 0).all()

    def test_accepts_3d_pred(self):
        pred = Tensor(np.full((1, 2, 2), 0.25))
        gt = np.zeros((1, 2, 2))
        out = alpha_l1_masked(pred, gt, np.ones((1, 2, 2), bool))
        assert out.item() == pytest.approx(0.25)

    def test_trimap_batch_mask(self):
        t = np.array([[[BG, UNKNOWN], [FG, UNKNOWN]]], dtype=np.uint8)
        m = mask_from_trimap_batch(t)
        np.testing.assert_array_equal(m[0], [[False, True], [False, True]])


class TestUncertaintyCombine:
    def _weights(self, sigma1, sigma2):
        w = TaskWeights()
        w.s1.data[...] = math.log(sigma1)
        w.s2.data[...] = math.log(sigma2)
        return w

    def test_unit_sigmas_closed_form(self):
        w = self._weights(1.0, 1.0)
        out = uncertainty_combine(Tensor(np.array(1.0)), Tensor(np.array(1.0)), w)
        assert out.item() == pytest.approx(1.5 + math.log(2.0), abs=1e-12)

    def test_init_sigma4_zero_losses(self):
        w = TaskWeights()
        assert w.sigma1 == pytest.approx(4.0) and w.sigma2 == pytest.approx(4.0)
        out = uncertainty_combine(Tensor(np.array(0.0)), Tensor(np.array(0.0)), w)
        assert out.item() == pytest.approx(math.log(32.0), abs=1e-12)

    def test_matches_printed_formula(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            lt, la = rng.random() * 3, rng.random() * 3
            s1, s2 = rng.normal(0, 1), rng.normal(0, 1)
            w = self._weights(math.exp(s1), math.exp(s2))
            got = uncertainty_combine(Tensor(np.array(lt)), Tensor(np.array(la)), w).item()
            sig1, sig2 = math.exp(s1), math.exp(s2)
            want = lt / (2 * sig1 ** 2) + la / sig2 + math.log(2 * sig1 * sig2)
            assert got == pytest.approx(want, abs=1e-12)

    def test_kendall_strict_form(self):
        w = self._weights(2.0, 3.0)
        got = uncertainty_combine(Tensor(np.array(1.0)), Tensor(np.array(2.0)), w,
                                  kendall_strict=True).item()
        want = 1.0 / (2 * 4.0) + 2.0 / (2 * 9.0) + math.log(2.0) + math.log(3.0)
        assert got == pytest.approx(want, abs=1e-12)

    def test_stationarity_by_finite_difference(self):
        # dL/ds vanishes at sigma1=sqrt(L_T), sigma2=L_a.
        lt, la = 0.25, 0.5
        w = self._weights(math.sqrt(lt), la)
        h = 1e-6

        def eval_at(ds1, ds2):
            ww = self._weights(math.exp(math.log(math.sqrt(lt)) + ds1),
                               math.exp(math.log(la) + ds2))
            return uncertainty_combine(Tensor(np.array(lt)), Tensor(np.array(la)), ww).item()

        d1 = (eval_at(h, 0) - eval_at(-h, 0)) / (2 * h)
        d2 = (eval_at(0, h) - eval_at(0, -h)) / (2 * h)
        assert abs(d1) < 1e-9 and abs(d2) < 1e-9
        # And autodiff agrees the gradient is zero there.
        with Tape() as tape:
            loss = uncertainty_combine(Tensor(np.array(lt)), Tensor(np.array(la)), w)
            tape.backward(loss)
        assert abs(w.s1.grad) < 1e-12 and abs(w.s2.grad) < 1e-12

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(10)
        w = self._weights(1.7, 0.6)
        lt = Tensor(np.array(0.8))
        la = Tensor(np.array(1.3))
        report = T.grad_check(lambda s1, s2: uncertainty_combine(
            lt, la, type("W", (), {"s1": s1, "s2": s2})()), [w.s1, w.s2], rng=rng)
        assert report.max_rel_err <= 1e-4

    def test_gradient_descent_converges(self):
        # Constant task losses L_T=0.25, L_a=0.5: descent on (s1, s2) alone
        # must reach sigma1=0.5, sigma2=0.5 within 1%.
        w = TaskWeights()  # sigma_init 4
        lt = Tensor(np.array(0.25))
        la = Tensor(np.array(0.5))
        lr = 0.01
        for step in range(5000):
            with Tape() as tape:
                loss = uncertainty_combine(lt, la, w)
                tape.backward(loss)
            w.s1.data -= lr * w.s1.grad
            w.s2.data -= lr * w.s2.grad
            w.s1.zero_grad()
            w.s2.zero_grad()
        assert abs(w.sigma1 - 0.5) / 0.5 <= 0.01
        assert abs(w.sigma2 - 0.5) / 0.5 <= 0.01

    def test_loss_gradient_flows_to_task_losses(self):
        w = self._weights(1.0, 1.0)
        lt = Tensor(np.array(2.0), requires_grad=True)
        la = Tensor(np.array(3.0), requires_grad=True)
        with Tape() as tape:
            loss = uncertainty_combine(lt, la, w)
            tape.backward(loss)
        assert lt.grad == pytest.approx(0.5)   # 1/(2 sigma1^2)
        assert la.grad == pytest.approx(1.0)   # 1/sigma2


class TestNaiveCombine:
    def test_midpoint(self):
        out = naive_combine(Tensor(np.array(2.0)), Tensor(np.array(4.0)), 0.5)
        assert out.item() == pytest.approx(3.0)

    def test_sigma_one_pure_alpha(self):
        lt = Tensor(np.array(7.0), requires_grad=True)
        la = Tensor(np.array(2.0), requires_grad=True)
        with Tape() as tape:
            out = naive_combine(lt, la, 1.0)
            tape.backward(out)
        assert out.item() == pytest.approx(2.0)
        assert (lt.grad == 0.0 or lt.grad is None) and la.grad == pytest.approx(1.0)

    def test_sigma_zero_pure_trimap(self):
        out = naive_combine(Tensor(np.array(7.0)), Tensor(np.array(2.0)), 0.0)
        assert out.item() == pytest.approx(7.0)

    def test_out_of_range_raises(self):
        with pytest.raises(ValueError):
            naive_combine(Tensor(np.array(1.0)), Tensor(np.array(1.0)), 1.5)
        with pytest.raises(ValueError):
            naive_combine(Tensor(np.array(1.0)), Tensor(np.array(1.0)), -0.1)
