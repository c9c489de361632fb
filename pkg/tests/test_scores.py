import numpy as np
import pytest

from sdesync.editing import reverse_drift
from sdesync.schedule import ConstantOU, RectifiedFlow, ScheduleDomainError
from sdesync.scores import (ConditionalGaussianFamily, ConditionalMixtureFamily,
                            guided_score, log_marginal_density,
                            reverse_rf_velocity, rf_sde_drift, rf_velocity,
                            score)


class TestScore:
    def test_standard_normal_at_data_time(self, ou_driftless, std_normal_family):
        # t = 0 marginal is the data law N(0, 1): score(x) = -x
        s = score(std_normal_family, np.array([1.0]), "c", 0.0, ou_driftless)
        np.testing.assert_allclose(s, [-1.0], rtol=1e-14)

    def test_rectified_gaussian_closed_form(self):
        # -(x - (1-t) mu) / ((1-t)^2 sigma^2 + t^2), checked against central
        # differences of the log marginal density
        fam = ConditionalGaussianFamily({"a": ([0.7], 1.3)})
        sched = RectifiedFlow(t_max=0.99)
        h = 1e-5
        rng = np.random.default_rng(0)
        for _ in range(50):
            t = float(rng.uniform(0.05, 0.95))
            x = rng.normal(scale=2.0, size=1)
            got = score(fam, x, "a", t, sched)
            mu, sig = 0.7, 1.3
            expected = -(x - (1 - t) * mu) / ((1 - t) ** 2 * sig**2 + t**2)
            np.testing.assert_allclose(got, expected, rtol=1e-12)
            fd = (log_marginal_density(fam, x + h, "a", t, sched)
                  - log_marginal_density(fam, x - h, "a", t, sched)) / (2 * h)
            assert abs(got[0] - fd) <= 1e-6

    def test_symmetric_mixture_zero_at_origin(self, ou):
        fam = ConditionalMixtureFamily(
            {"pm": [(0.5, [-2.0], 0.5), (0.5, [2.0], 0.5)]})
        s = score(fam, np.array([0.0]), "pm", 0.4, ou)
        np.testing.assert_allclose(s, [0.0], atol=1e-15)

    def test_single_component_mixture_equals_gaussian(self, ou):
        mix = ConditionalMixtureFamily({"a": [(1.0, [0.3, -0.2], 0.8)]})
        gauss = ConditionalGaussianFamily({"a": ([0.3, -0.2], 0.8)})
        x = np.array([0.5, 1.5])
        np.testing.assert_allclose(score(mix, x, "a", 0.6, ou),
                                   score(gauss, x, "a", 0.6, ou), rtol=1e-14)

    def test_finite_difference_sweep(self, mixture_family, ou):
        from sdesync.verify import finite_diff_score_check
        err = finite_diff_score_check(mixture_family, ou, trials=200,
                                      h=1e-5, seed=3)
        assert err <= 1e-5

    def test_fd_error_scales_quadratically(self, mixture_family, ou):
        from sdesync.verify import finite_diff_score_check
        errs = [finite_diff_score_check(mixture_family, ou, trials=60, h=h, seed=5)
                for h in (1e-1, 1e-2, 1e-3)]
        assert errs[0] > 30 * errs[1] > 30 * 30 * errs[2]

    def test_unknown_label(self, std_normal_family, ou):
        with pytest.raises(KeyError):
            score(std_normal_family, np.array([0.0]), "nope", 0.5, ou)

    def test_time_out_of_range(self, std_normal_family):
        sched = RectifiedFlow(t_max=0.9)
        with pytest.raises(ScheduleDomainError):
            score(std_normal_family, np.array([0.0]), "c", 0.95, sched)

    def test_batched_matches_loop(self, mixture_family, ou):
        xs = np.random.default_rng(8).normal(size=(7, 1))
        batched = score(mixture_family, xs, "skew", 0.3, ou)
        for i, x in enumerate(xs):
            np.testing.assert_allclose(batched[i], score(mixture_family, x, "skew", 0.3, ou))


class TestGuidedScore:
    def test_unit_weight_is_exactly_conditional(self, pair_family, ou):
        x = np.array([0.4])
        a = guided_score(pair_family, x, "src", 0.5, ou, w=1.0)
        b = score(pair_family, x, "src", 0.5, ou)
        np.testing.assert_array_equal(a, b)

    def test_zero_weight_is_unconditional(self, pair_family, ou):
        # pool = equal-weight mixture of the two labels
        pooled = ConditionalMixtureFamily(
            {"u": [(0.5, [-2.0], 0.5), (0.5, [2.0], 0.5)]})
        x = np.array([0.7])
        a = guided_score(pair_family, x, "src", 0.5, ou, w=0.0)
        b = score(pooled, x, "u", 0.5, ou)
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_single_label_family_ignores_weight(self, std_normal_family, ou):
        x = np.array([1.2])
        for w in (0.0, 1.0, 2.5):
            np.testing.assert_allclose(
                guided_score(std_normal_family, x, "c", 0.5, ou, w=w),
                score(std_normal_family, x, "c", 0.5, ou), rtol=1e-13)

    def test_interpolation_identity(self, pair_family, ou):
        x = np.array([0.9])
        s_c = score(pair_family, x, "tar", 0.4, ou)
        s_u = guided_score(pair_family, x, "tar", 0.4, ou, w=0.0)
        got = guided_score(pair_family, x, "tar", 0.4, ou, w=2.5)
        np.testing.assert_allclose(got, s_u + 2.5 * (s_c - s_u), rtol=1e-12)


class TestRfVelocity:
    def test_zero_by_symmetry(self):
        fam = ConditionalGaussianFamily({"a": ([0.0], 1.0)})
        for t in (0.0, 0.3, 0.9):
            v = rf_velocity(fam, np.array([0.0]), "a", t)
            np.testing.assert_allclose(v, [0.0], atol=1e-15)

    def test_slope_matches_std_finite_difference(self):
        # d/dx v = s'_t / s_t; compare with central differences of s_t
        fam = ConditionalGaussianFamily({"a": ([0.0], 1.0)})
        h = 1e-6
        for t in (0.0, 0.2, 0.7):
            slope = rf_velocity(fam, np.array([1.0]), "a", t)[0]

            def s(u):
                return np.sqrt((1 - u) ** 2 + u**2)

            fd = (s(t + h) - s(t - h)) / (2 * h) / s(t)
            assert abs(slope - fd) <= 1e-6

    def test_conditional_expectation_oracle(self):
        # v(x, t) = E[eps - X_0 | (1-t) X_0 + t eps = x], Gaussian conditioning
        mu, sig = 0.6, 0.8
        fam = ConditionalGaussianFamily({"a": ([mu], sig)})
        rng = np.random.default_rng(4)
        for _ in range(50):
            t = float(rng.uniform(0.02, 0.98))
            x = float(rng.normal(scale=2.0))
            s2 = (1 - t) ** 2 * sig**2 + t**2
            cov = t - (1 - t) * sig**2  # Cov(eps - X_0, X_t)
            oracle = -mu + cov / s2 * (x - (1 - t) * mu)
            got = rf_velocity(fam, np.array([x]), "a", t)[0]
            assert got == pytest.approx(oracle, rel=1e-12, abs=1e-12)

    def test_rejects_t_one(self):
        fam = ConditionalGaussianFamily({"a": ([0.0], 1.0)})
        with pytest.raises(ValueError):
            rf_velocity(fam, np.array([0.0]), "a", 1.0)

    def test_rejects_mixture_labels(self, ou):
        fam = ConditionalMixtureFamily({"m": [(0.5, [0.0], 1.0), (0.5, [1.0], 1.0)]})
        with pytest.raises(ValueError):
            rf_velocity(fam, np.array([0.0]), "m", 0.5)


class TestRfSdeDrift:
    def test_zero_velocity_zero_state(self):
        sched = RectifiedFlow(t_max=0.99)
        b = rf_sde_drift(lambda x, c, t: np.zeros_like(x), np.array([0.0]),
                         "a", 0.5, sched)
        np.testing.assert_allclose(b, [0.0], atol=1e-15)

    def test_matches_score_form_pointwise(self):
        # the operational content of the flow/SDE equivalence: the
        # velocity-form drift equals alpha(1-t) x + g^2(1-t) score pointwise
        fam = ConditionalGaussianFamily({"a": ([0.4], 0.9)})
        sched = RectifiedFlow(t_max=0.999)
        vel = reverse_rf_velocity(fam)
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(200):
            t_rev = float(rng.uniform(0.01, 0.99))
            x = rng.normal(scale=2.0, size=1)
            lhs = rf_sde_drift(vel, x, "a", t_rev, sched)
            rhs = reverse_drift(fam, x, "a", t_rev, sched)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        assert worst <= 1e-8

    def test_rejects_reverse_time_zero(self):
        fam = ConditionalGaussianFamily({"a": ([0.0], 1.0)})
        sched = RectifiedFlow(t_max=0.99)
        with pytest.raises(ValueError):
            rf_sde_drift(reverse_rf_velocity(fam), np.array([0.0]), "a", 0.0, sched)

    def test_requires_rectified_schedule(self, ou):
        fam = ConditionalGaussianFamily({"a": ([0.0], 1.0)})
        with pytest.raises(ValueError):
            rf_sde_drift(reverse_rf_velocity(fam), np.array([0.0]), "a", 0.5, ou)


class TestFamilies:
    def test_weights_must_normalize(self):
        with pytest.raises(ValueError):
            ConditionalMixtureFamily({"a": [(0.5, [0.0], 1.0), (0.4, [1.0], 1.0)]})

    def test_positive_std_required(self):
        with pytest.raises(ValueError):
            ConditionalGaussianFamily({"a": ([0.0], 0.0)})

    def test_shared_dimension_required(self):
        with pytest.raises(ValueError):
            ConditionalGaussianFamily({"a": ([0.0], 1.0), "b": ([0.0, 1.0], 1.0)})

    def test_marginal_moments_match_sampling(self, mixture_family, ou, rng):
        mean, var = mixture_family.marginal_moments("skew", 0.35, ou)
        draws = mixture_family.sample_forward_marginal("skew", 0.35, 40_000, rng, ou)
        se_mean = np.sqrt(var / len(draws))
        np.testing.assert_array_less(np.abs(draws.mean(axis=0) - mean), 4 * se_mean)
        se_var = var * np.sqrt(2.0 / (len(draws) - 1))
        # mixtures have excess kurtosis, keep a wide gate
        np.testing.assert_array_less(np.abs(draws.var(axis=0, ddof=1) - var), 6 * se_var)
