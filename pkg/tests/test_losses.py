"""Base losses, attenuated regression terms, and the multi-task objective."""

import math

import numpy as np
import pytest

from lidardet.errors import ShapeError
from lidardet.losses import (HeadOutputs, HeadTargets, LIKELIHOOD_FORMS,
                             attenuated_term, cross_entropy, multi_loss,
                             smooth_l1)


class TestSmoothL1:
    def test_quadratic_region(self):
        v, d = smooth_l1(0.5)
        assert v == pytest.approx(0.125)
        assert d == pytest.approx(0.5)

    def test_linear_region(self):
        v, d = smooth_l1(2.0)
        assert v == pytest.approx(1.5)
        assert d == 1.0
        v, d = smooth_l1(-2.0)
        assert v == pytest.approx(1.5)
        assert d == -1.0

    def test_zero(self):
        v, d = smooth_l1(0.0)
        assert v == 0.0 and d == 0.0

    def test_continuous_at_boundary(self):
        lo, _ = smooth_l1(1.0 - 1e-9)
        hi, _ = smooth_l1(1.0 + 1e-9)
        assert abs(hi - lo) < 1e-8

    def test_vector_form(self):
        v, d = smooth_l1(np.array([-3.0, 0.25, 1.5]))
        np.testing.assert_allclose(v, [2.5, 0.03125, 1.0])
        np.testing.assert_allclose(d, [-1.0, 0.25, 1.0])

    def test_derivative_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        h = 1e-7
        for r in rng.uniform(-4, 4, 200):
            if abs(abs(r) - 1.0) < 1e-3:
                continue  # kink
            _, d = smooth_l1(r)
            fp, _ = smooth_l1(r + h)
            fm, _ = smooth_l1(r - h)
            assert d == pytest.approx((fp - fm) / (2 * h), abs=1e-6)


class TestCrossEntropy:
    def test_huge_logit_gap_is_stable(self):
        v, g = cross_entropy(np.array([1000.0, 0.0]), 0)
        assert v == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(g))

    def test_uniform_logits_give_log_c(self):
        v, _ = cross_entropy(np.zeros(4), 2)
        assert v == pytest.approx(math.log(4))

    def test_gradient_is_softmax_minus_onehot(self):
        z = np.array([0.3, -1.2, 2.0])
        _, g = cross_entropy(z, 1)
        e = np.exp(z - z.max())
        p = e / e.sum()
        p[1] -= 1.0
        np.testing.assert_allclose(g, p, atol=1e-12)

    def test_batch_matches_per_row(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(6, 3))
        labels = rng.integers(0, 3, 6)
        vb, gb = cross_entropy(z, labels)
        for i in range(6):
            vi, gi = cross_entropy(z[i], int(labels[i]))
            assert vb[i] == pytest.approx(vi)
            np.testing.assert_allclose(gb[i], gi)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros(3), 3)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cross_entropy(np.zeros((2, 3)), np.zeros(3, dtype=int))


class TestAttenuatedTerm:
    def test_gaussian_value_and_partials(self):
        L, s = 0.8, 0.3
        v, dr, ds = attenuated_term(L, s, "gaussian")
        w = 0.5 * math.exp(-s)
        assert v == pytest.approx(w * L + s)
        assert dr == pytest.approx(w)
        assert ds == pytest.approx(1.0 - w * L)

    def test_laplace_value_and_partials(self):
        L, s = 0.8, -0.4
        v, dr, ds = attenuated_term(L, s, "laplace")
        w = math.exp(-s)
        assert v == pytest.approx(w * L + s)
        assert dr == pytest.approx(w)
        assert ds == pytest.approx(1.0 - w * L)

    def test_residual_weight_strictly_decreasing_in_s(self):
        grid = np.linspace(-6, 6, 241)
        _, dr, _ = attenuated_term(np.full_like(grid, 2.0), grid, "gaussian")
        assert np.all(np.diff(dr) < 0)
        np.testing.assert_allclose(dr, 0.5 * np.exp(-grid), rtol=1e-12)

    def test_laplace_minimizer_is_log_residual(self):
        for L in (0.05, 0.7, 3.0, 40.0):
            s_grid = np.linspace(math.log(L) - 2, math.log(L) + 2, 400001)
            v, _, _ = attenuated_term(L, s_grid, "laplace")
            s_star = s_grid[np.argmin(v)]
            assert s_star == pytest.approx(math.log(L), abs=1e-5)

    def test_gaussian_minimizer_is_log_half_residual(self):
        for L in (0.5, 2.0, 10.0):
            s_grid = np.linspace(math.log(0.5 * L) - 2, math.log(0.5 * L) + 2, 400001)
            v, _, _ = attenuated_term(L, s_grid, "gaussian")
            s_star = s_grid[np.argmin(v)]
            assert s_star == pytest.approx(math.log(0.5 * L), abs=1e-5)

    def test_stationary_point_has_zero_s_partial(self):
        for form, L in (("laplace", 1.7), ("gaussian", 1.7)):
            coeff = 1.0 if form == "laplace" else 0.5
            _, _, ds = attenuated_term(L, math.log(coeff * L), form)
            assert ds == pytest.approx(0.0, abs=1e-12)

    def test_unknown_form_rejected(self):
        assert set(LIKELIHOOD_FORMS) == {"gaussian", "laplace"}
        with pytest.raises(ValueError):
            attenuated_term(1.0, 0.0, "student-t")


def _random_batch(rng, n=7, m=5, d1=6, d2=10, d3=2):
    outputs = HeadOutputs(
        rpn_logits=rng.normal(size=(n, 2)),
        rpn_reg=rng.normal(size=(n, d1)),
        rpn_log_var=rng.normal(scale=0.5, size=(n, d1)),
        frh_logits=rng.normal(size=(m, 2)),
        frh_loc=rng.normal(size=(m, d2)),
        frh_loc_log_var=rng.normal(scale=0.5, size=(m, d2)),
        frh_orient=rng.normal(size=(m, d3)),
        frh_orient_log_var=rng.normal(scale=0.5, size=(m, d3)))
    rpn_cls = rng.integers(-1, 2, n)
    frh_cls = rng.integers(-1, 2, m)
    rpn_cls[0] = 1
    frh_cls[0] = 1
    targets = HeadTargets(
        rpn_reg=rng.normal(size=(n, d1)),
        rpn_cls=rpn_cls,
        frh_loc=rng.normal(size=(m, d2)),
        frh_orient=rng.normal(size=(m, d3)),
        frh_cls=frh_cls)
    return outputs, targets


class TestMultiLoss:
    def test_breakdown_matches_hand_composition(self):
        rng = np.random.default_rng(10)
        outputs, targets = _random_batch(rng)
        breakdown, _ = multi_loss(outputs, targets, form="laplace")

        def reg_term(pred, target, lv, pos):
            r = pred[pos] - target[pos]
            L, _ = smooth_l1(r)
            s = lv[pos]
            return float((np.exp(-s) * L + s).sum()) / int(pos.sum())

        rpn_pos = targets.rpn_cls == 1
        frh_pos = targets.frh_cls == 1
        assert breakdown.rpn_reg == pytest.approx(
            reg_term(outputs.rpn_reg, targets.rpn_reg, outputs.rpn_log_var, rpn_pos))
        assert breakdown.frh_loc == pytest.approx(
            reg_term(outputs.frh_loc, targets.frh_loc, outputs.frh_loc_log_var, frh_pos))
        assert breakdown.frh_orient == pytest.approx(
            reg_term(outputs.frh_orient, targets.frh_orient,
                     outputs.frh_orient_log_var, frh_pos))
        valid = targets.rpn_cls >= 0
        ce, _ = cross_entropy(outputs.rpn_logits[valid], targets.rpn_cls[valid])
        assert breakdown.rpn_cls == pytest.approx(float(ce.mean()))
        assert breakdown.total == pytest.approx(
            breakdown.rpn_reg + breakdown.rpn_cls + breakdown.frh_loc
            + breakdown.frh_cls + breakdown.frh_orient)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        outputs, targets = _random_batch(rng)
        h = 1e-6
        for form in LIKELIHOOD_FORMS:
            _, grads = multi_loss(outputs, targets, form=form)
            for field in ("rpn_logits", "rpn_reg", "rpn_log_var", "frh_logits",
                          "frh_loc", "frh_loc_log_var", "frh_orient",
                          "frh_orient_log_var"):
                arr = getattr(outputs, field)
                g = getattr(grads, field)
                for idx in [(0, 0), (0, arr.shape[1] - 1)]:
                    orig = arr[idx]
                    arr[idx] = orig + h
                    up, _ = multi_loss(outputs, targets, form=form)
                    arr[idx] = orig - h
                    dn, _ = multi_loss(outputs, targets, form=form)
                    arr[idx] = orig
                    fd = (up.total - dn.total) / (2 * h)
                    assert g[idx] == pytest.approx(fd, abs=2e-5), (form, field, idx)

    def test_baseline_ignores_log_variance(self):
        rng = np.random.default_rng(12)
        outputs, targets = _random_batch(rng)
        base, grads = multi_loss(outputs, targets, attenuate=False)
        assert np.all(grads.rpn_log_var == 0.0)
        assert np.all(grads.frh_loc_log_var == 0.0)
        assert np.all(grads.frh_orient_log_var == 0.0)
        shifted = HeadOutputs(**{f: getattr(outputs, f).copy()
                                 for f in ("rpn_logits", "rpn_reg", "rpn_log_var",
                                           "frh_logits", "frh_loc", "frh_loc_log_var",
                                           "frh_orient", "frh_orient_log_var")})
        shifted.rpn_log_var += 5.0
        again, _ = multi_loss(shifted, targets, attenuate=False)
        assert again.total == pytest.approx(base.total)

    def test_baseline_equals_attenuated_at_zero_log_variance(self):
        rng = np.random.default_rng(13)
        outputs, targets = _random_batch(rng)
        outputs.rpn_log_var[:] = 0.0
        outputs.frh_loc_log_var[:] = 0.0
        outputs.frh_orient_log_var[:] = 0.0
        att, _ = multi_loss(outputs, targets, attenuate=True)
        base, _ = multi_loss(outputs, targets, attenuate=False)
        # the + s regularizer vanishes at s = 0, leaving identical weighting
        assert att.total == pytest.approx(base.total, abs=1e-12)

    def test_ignored_rows_do_not_contribute(self):
        rng = np.random.default_rng(14)
        outputs, targets = _random_batch(rng)
        value, _ = multi_loss(outputs, targets)
        ig = np.flatnonzero(targets.rpn_cls == -1)
        if len(ig):
            outputs.rpn_logits[ig] += 100.0
            outputs.rpn_reg[ig] += 100.0
            again, _ = multi_loss(outputs, targets)
            assert again.total == pytest.approx(value.total)

    def test_no_positives_zero_regression(self):
        rng = np.random.default_rng(15)
        outputs, targets = _random_batch(rng)
        targets.rpn_cls[:] = 0
        breakdown, grads = multi_loss(outputs, targets)
        assert breakdown.rpn_reg == 0.0
        assert np.all(grads.rpn_reg == 0.0)

    def test_order_invariance(self):
        rng = np.random.default_rng(16)
        outputs, targets = _random_batch(rng)
        value, _ = multi_loss(outputs, targets)
        perm = rng.permutation(len(outputs.rpn_logits))
        shuffled = HeadOutputs(
            rpn_logits=outputs.rpn_logits[perm], rpn_reg=outputs.rpn_reg[perm],
            rpn_log_var=outputs.rpn_log_var[perm], frh_logits=outputs.frh_logits,
            frh_loc=outputs.frh_loc, frh_loc_log_var=outputs.frh_loc_log_var,
            frh_orient=outputs.frh_orient,
            frh_orient_log_var=outputs.frh_orient_log_var)
        tshuf = HeadTargets(rpn_reg=targets.rpn_reg[perm], rpn_cls=targets.rpn_cls[perm],
                            frh_loc=targets.frh_loc, frh_orient=targets.frh_orient,
                            frh_cls=targets.frh_cls)
        again, _ = multi_loss(shuffled, tshuf)
        assert again.total == pytest.approx(value.total)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(17)
        outputs, targets = _random_batch(rng)
        targets.rpn_reg = targets.rpn_reg[:, :4]
        with pytest.raises(ShapeError):
            multi_loss(outputs, targets)
