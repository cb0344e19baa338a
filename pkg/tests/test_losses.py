import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpu import autodiff as ad
from vpu import losses as ls
from vpu import model as md


def value(t):
    return float(t.value)


def logit(p):
    return math.log(p / (1.0 - p))


@pytest.fixture(scope="module")
def net():
    return md.init(md.MlpArchitecture(2, (4, 3), "tanh"), seed=3)


@pytest.fixture(scope="module")
def batches():
    rng = np.random.default_rng(5)
    bp = ls.Batch(rng.normal(size=(6, 2)) + [2, 0], "positive")
    bu = ls.Batch(rng.normal(size=(6, 2)), "unlabeled")
    return bp, bu


def saturated_model(input_dim=2):
    """All raw outputs exactly 1.0 (output bias 40)."""
    base = md.init(md.MlpArchitecture(input_dim, (4,), "relu"), seed=0)
    values = np.zeros_like(base.params.values)
    values[base.params.segment("b1").start] = 40.0
    return base.with_params(values)


class TestVariationalLoss:
    def test_phi_one_gives_zero(self, batches):
        bp, bu = batches
        m = saturated_model()
        assert value(ls.variational_loss(m, None, bp, bu)) == 0.0

    def test_direct_substitution(self):
        # log mean(0.25, 0.75) - mean(log 0.5) = log 0.5 - log 0.5 = 0
        got = value(ls.variational_loss_values(np.array([0.5]), np.array([0.25, 0.75])))
        assert got == pytest.approx(0.0, abs=1e-15)

    def test_constant_phi_is_zero(self):
        for c in (0.2, 0.7, 1.0):
            got = value(ls.variational_loss_values(np.full(5, c), np.full(9, c)))
            assert got == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000), c=st.sampled_from([0.1, 0.5, 0.9]))
    def test_batch_scale_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        phi_p = rng.uniform(1e-3, 1.0, size=rng.integers(1, 20))
        phi_u = rng.uniform(1e-3, 1.0, size=rng.integers(1, 20))
        base = value(ls.variational_loss_values(phi_p, phi_u))
        scaled = value(ls.variational_loss_values(c * phi_p, c * phi_u))
        assert abs(scaled - base) <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        phi_p = rng.uniform(1e-3, 1.0, size=8)
        phi_u = rng.uniform(1e-3, 1.0, size=11)
        base = value(ls.variational_loss_values(phi_p, phi_u))
        perm = value(ls.variational_loss_values(rng.permutation(phi_p),
                                                rng.permutation(phi_u)))
        assert perm == pytest.approx(base, abs=1e-12)

    def test_wrong_origin_rejected(self, net, batches):
        bp, bu = batches
        with pytest.raises(ValueError):
            ls.variational_loss(net, None, bu, bp)


class TestMixupReg:
    def test_zero_residual(self):
        # phi(x_mix) == target everywhere -> penalty 0
        m = saturated_model()
        x = np.zeros((3, 2))
        assert value(ls.mixup_reg_from_pairs(m, None, x, np.ones(3))) == 0.0

    def test_underestimation_blows_up(self):
        # (log 0.9 - log 1e-12)^2 =~ 757: the msle penalty explodes as phi -> 0
        target = np.array([0.9])
        phi_mix = ad.Tensor(np.array([1e-12]))
        d = ad.log(ad.Tensor(target)) - ad.log(phi_mix)
        assert value(ad.mean(d * d)) > 100.0

    def test_guessed_probability_value(self, net):
        bp = ls.Batch(np.array([[1.0, 0.0]]), "positive")
        bu = ls.Batch(np.array([[0.0, 1.0]]), "unlabeled")
        from vpu.sampling import build_mixup_pairs
        x_mix, t = build_mixup_pairs(bp, bu, 0.3, net)
        np.testing.assert_allclose(x_mix, [[0.3, 0.7]])
        phi_u = float(net.raw_values(bu.features)[0])
        assert t[0] == pytest.approx(0.3 + 0.7 * phi_u)

    def test_msle_dominates_mse_near_zero(self):
        # at target 0.9, msle/mse -> infinity as the prediction collapses
        target, phi = 0.9, 1e-6
        msle = (math.log(target) - math.log(phi)) ** 2
        mse = (target - phi) ** 2
        assert msle / mse > 100.0

    def test_stop_gradient_default(self, net, batches):
        bp, bu = batches
        frozen = ls.mixup_consistency_reg(net, None, bp, bu, 0.4, "msle_mixup_pu")
        # same value as the non-stop variant, but the target subtree is constant
        live = ls.mixup_consistency_reg(net, None, bp, bu, 0.4, "msle_mixup_pu",
                                        target_stop_gradient=False)
        assert value(frozen) == pytest.approx(value(live), abs=1e-15)

    def test_p_only_targets_one(self, net):
        bp = ls.Batch(np.array([[1.0, 0.0], [0.0, 1.0]]), "positive")
        bu = ls.Batch(np.array([[9.9, 9.9], [9.9, 9.9]]), "unlabeled")
        reg = ls.mixup_consistency_reg(net, None, bp, bu, 0.5, "msle_mixup_p_only")
        mixed = 0.5 * bp.features + 0.5 * np.roll(bp.features, -1, axis=0)
        expected = np.mean(np.log(net.raw_values(mixed)) ** 2)
        assert value(reg) == pytest.approx(expected, abs=1e-12)

    def test_size_mismatch_rejected(self, net):
        bp = ls.Batch(np.zeros((2, 2)), "positive")
        bu = ls.Batch(np.zeros((3, 2)), "unlabeled")
        with pytest.raises(ValueError):
            ls.mixup_consistency_reg(net, None, bp, bu, 0.5, "msle_mixup_pu")


class TestLargeMargin:
    def test_zero_at_confident_positive(self):
        m = saturated_model()
        bp = ls.Batch(np.zeros((4, 2)), "positive")
        assert value(ls.large_margin_reg(m, None, bp, alpha=1.0)) == 0.0

    def test_half_alpha_one(self):
        # phi 0.5, alpha 1 -> log 2
        got = value(ls.large_margin_values(np.array([0.5]), alpha=1.0))
        assert got == pytest.approx(math.log(2.0), abs=1e-12)

    def test_monotone_decreasing_in_phi(self):
        grid = np.linspace(0.05, 0.99, 40)
        vals = [value(ls.large_margin_values(np.array([p]), alpha=0.7)) for p in grid]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestBaselineRisks:
    def test_upu_zero_margin(self):
        # g=0 everywhere, pi 0.5 -> 0.5*(0.5-0.5) + 0.5
        got = value(ls.upu_risk_from_margins(np.zeros(3), np.zeros(5), 0.5))
        assert got == pytest.approx(0.5, abs=1e-15)

    def test_upu_direct_substitution(self):
        # mean_p l+ = 0.2, mean_p l- = 0.8, mean_u l- = 0.6, pi 0.5 -> 0.3
        gp = np.array([logit(0.8)])
        gu = np.array([logit(0.6)])
        got = value(ls.upu_risk_from_margins(gp, gu, 0.5))
        assert got == pytest.approx(0.5 * (0.2 - 0.8) + 0.6, abs=1e-12)

    def test_nnpu_direct_substitution(self):
        gp = np.array([logit(0.8)])
        gu = np.array([logit(0.6)])
        got = value(ls.nnpu_risk_from_margins(gp, gu, 0.5))
        assert got == pytest.approx(0.5 * 0.2 + max(0.0, 0.6 - 0.4), abs=1e-12)

    def test_nnpu_clamps_to_zero(self):
        # mean_u l- < pi * mean_p l-: second term exactly 0
        gp = np.array([logit(0.9)])
        gu = np.array([logit(0.1)])
        got = value(ls.nnpu_risk_from_margins(gp, gu, 0.5))
        assert got == pytest.approx(0.5 * 0.1, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000), pi=st.floats(0.05, 0.95))
    def test_nnpu_nonnegative_upu_maybe_not(self, seed, pi):
        rng = np.random.default_rng(seed)
        gp = rng.normal(size=6)
        gu = rng.normal(size=6)
        assert value(ls.nnpu_risk_from_margins(gp, gu, pi)) >= 0.0

    def test_upu_can_go_negative(self):
        # confident positives, confidently-negative unlabeled, large pi:
        # risk = pi*(0 - 1) + 0 < 0; nnpu clamps the same inputs to >= 0
        gp = np.full(4, 8.0)
        gu = np.full(4, -8.0)
        assert value(ls.upu_risk_from_margins(gp, gu, 0.9)) < 0.0
        assert value(ls.nnpu_risk_from_margins(gp, gu, 0.9)) >= 0.0

    def test_pi_required(self):
        with pytest.raises(ValueError):
            ls.upu_risk_from_margins(np.zeros(2), np.zeros(2), 1.0)


class TestLossSpec:
    def test_baseline_requires_pi(self):
        with pytest.raises(ValueError):
            ls.LossSpec(objective="nnpu", reg_variant="none", lam=0.0)

    def test_vpu_rejects_pi(self):
        with pytest.raises(ValueError):
            ls.LossSpec(objective="vpu", pi_p=0.5)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            ls.LossSpec(reg_variant="dropout")


class TestL2Loss:
    def test_phi_one(self):
        got = value(ls.l2_variational_loss_values(np.ones(4), np.ones(6)))
        assert got == pytest.approx(-1.0, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000), c=st.floats(0.05, 1.0))
    def test_scale_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        phi_p = rng.uniform(1e-3, 1.0, size=7)
        phi_u = rng.uniform(1e-3, 1.0, size=9)
        base = value(ls.l2_variational_loss_values(phi_p, phi_u))
        scaled = value(ls.l2_variational_loss_values(c * phi_p, c * phi_u))
        assert abs(scaled - base) <= 1e-10


class TestTotalLoss:
    def test_lambda_zero_is_objective(self, net, batches):
        bp, bu = batches
        spec = ls.LossSpec("vpu", "msle_mixup_pu", lam=0.0)
        got = value(ls.total_loss(spec, net, None, bp, bu, gamma=0.3))
        want = value(ls.variational_loss(net, None, bp, bu))
        assert got == want

    def test_zero_reg_residual_equals_objective(self, batches):
        bp, bu = batches
        m = saturated_model()
        spec = ls.LossSpec("vpu", "msle_mixup_pu", lam=0.3)
        got = value(ls.total_loss(spec, m, None, bp, bu, gamma=0.6))
        assert got == value(ls.variational_loss(m, None, bp, bu))

    def test_linear_combination(self, net, batches):
        bp, bu = batches
        spec = ls.LossSpec("vpu", "msle_mixup_pu", lam=0.3)
        v = value(ls.variational_loss(net, None, bp, bu))
        r = value(ls.mixup_consistency_reg(net, None, bp, bu, 0.5, "msle_mixup_pu"))
        got = value(ls.total_loss(spec, net, None, bp, bu, gamma=0.5))
        assert got == pytest.approx(v + 0.3 * r, abs=1e-12)

    def test_baselines_ignore_reg(self, net, batches):
        bp, bu = batches
        spec = ls.LossSpec("nnpu", "msle_mixup_pu", lam=0.3, pi_p=0.4)
        got = value(ls.total_loss(spec, net, None, bp, bu, gamma=0.5))
        assert got == value(ls.nnpu_risk(net, None, bp, bu, 0.4))

    def test_mixup_needs_gamma(self, net, batches):
        bp, bu = batches
        spec = ls.LossSpec("vpu", "msle_mixup_pu", lam=0.3)
        with pytest.raises(ValueError):
            ls.total_loss(spec, net, None, bp, bu, gamma=None)


class TestGradientsAgainstFiniteDiff:
    """Every loss variant passes the central-difference check."""

    CASES = {
        "vpu": lambda m, bp, bu: (lambda t: ls.variational_loss(m, t, bp, bu)),
        "vpu_l2": lambda m, bp, bu: (lambda t: ls.l2_variational_loss(m, t, bp, bu)),
        "upu": lambda m, bp, bu: (lambda t: ls.upu_risk(m, t, bp, bu, 0.4)),
        "nnpu": lambda m, bp, bu: (lambda t: ls.nnpu_risk(m, t, bp, bu, 0.4)),
        "large_margin": lambda m, bp, bu: (lambda t: ls.large_margin_reg(m, t, bp, 0.3)),
        "msle_mixup_pu": lambda m, bp, bu: (lambda t: ls.mixup_consistency_reg(
            m, t, bp, bu, 0.3, "msle_mixup_pu", target_stop_gradient=False)),
        "msle_mixup_p_only": lambda m, bp, bu: (lambda t: ls.mixup_consistency_reg(
            m, t, bp, bu, 0.3, "msle_mixup_p_only")),
        "msle_mixup_pupu": lambda m, bp, bu: (lambda t: ls.mixup_consistency_reg(
            m, t, bp, bu, 0.3, "msle_mixup_pupu", target_stop_gradient=False)),
        "mse_mixup_pu": lambda m, bp, bu: (lambda t: ls.mixup_consistency_reg(
            m, t, bp, bu, 0.3, "mse_mixup_pu", target_stop_gradient=False)),
    }

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_matches_finite_differences(self, name):
        rng = np.random.default_rng(7)
        m = md.init(md.MlpArchitecture(2, (4, 3), "tanh"), seed=7)
        for trial in range(5):
            params = m.params.replaced(rng.normal(scale=0.6, size=len(m.params)))
            bp = ls.Batch(rng.normal(size=(5, 2)) + [1.5, 0], "positive")
            bu = ls.Batch(rng.normal(size=(5, 2)), "unlabeled")
            fn = self.CASES[name](m, bp, bu)
            g = ad.gradient(fn, params)
            fd = ad.finite_diff_gradient(fn, params, 1e-6)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8,
                                       err_msg=f"{name} trial {trial}")

    def test_stop_gradient_path_matches_frozen_pairs(self):
        # the trainer's default gradient: targets held constant
        from vpu.sampling import build_mixup_pairs
        rng = np.random.default_rng(9)
        m = md.init(md.MlpArchitecture(2, (4, 3), "tanh"), seed=9)
        bp = ls.Batch(rng.normal(size=(5, 2)) + [1.5, 0], "positive")
        bu = ls.Batch(rng.normal(size=(5, 2)), "unlabeled")
        x_mix, t_const = build_mixup_pairs(bp, bu, 0.4, m)
        fn = lambda th: ls.mixup_reg_from_pairs(m, th, x_mix, t_const, "msle")
        g = ad.gradient(fn, m.params)
        fd = ad.finite_diff_gradient(fn, m.params, 1e-6)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)
        full = ad.gradient(lambda th: ls.mixup_consistency_reg(
            m, th, bp, bu, 0.4, "msle_mixup_pu"), m.params)
        assert np.array_equal(g, full)

    def test_full_vpu_loss_seed7(self):
        # complete training objective on a 2-layer MLP, random params, seed 7
        rng = np.random.default_rng(7)
        m = md.init(md.MlpArchitecture(2, (6, 4), "tanh"), seed=7)
        params = m.params.replaced(rng.normal(scale=0.5, size=len(m.params)))
        bp = ls.Batch(rng.normal(size=(8, 2)) + [2, 0], "positive")
        bu = ls.Batch(rng.normal(size=(8, 2)), "unlabeled")
        spec = ls.LossSpec("vpu", "msle_mixup_pu", lam=0.3)
        fn = lambda t: ls.total_loss(spec, m, t, bp, bu, gamma=0.35,
                                     target_stop_gradient=False)
        g = ad.gradient(fn, params)
        fd = ad.finite_diff_gradient(fn, params, 1e-6)
        big = np.abs(g) > 1e-8
        rel = np.abs(g - fd)[big] / np.abs(g)[big]
        assert np.max(rel, initial=0.0) <= 1e-5
        assert np.max(np.abs(g - fd)[~big], initial=0.0) <= 1e-8
