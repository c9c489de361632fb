import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from sdesync.coupling import (FixedOrthonormal, RandomOrthonormal, Reflection,
                              Synchronous, apply_rule, coupled_edit,
                              expected_increment_cost,
                              greedy_optimality_experiment, mc_increment_cost,
                              random_orthonormal, trace_identity_check)
from sdesync.editing import EditConfig, sync_edit
from sdesync.paths import TimeGrid
from sdesync.schedule import ConstantOU
from sdesync.scores import ConditionalGaussianFamily


def antisymmetric_orthonormal(d, seed):
    """exp(A - A^T) is orthogonal; an independent construction from QR."""
    a = np.random.default_rng(seed).standard_normal((d, d))
    return expm(a - a.T)


class TestApplyRule:
    def test_synchronous_identity(self):
        dw = np.array([0.3, -0.8])
        out = apply_rule(Synchronous(), dw, np.zeros(2), np.ones(2))
        np.testing.assert_array_equal(out, dw)

    def test_reflection_1d_negates(self):
        out = apply_rule(Reflection(), np.array([0.5]), np.array([1.0]),
                         np.array([-1.0]))
        np.testing.assert_allclose(out, [-0.5], rtol=1e-15)

    def test_reflection_tie_falls_back_to_identity(self):
        dw = np.array([0.4, 0.1])
        y = np.array([0.7, 0.7])
        out = apply_rule(Reflection(), dw, y, y + 1e-14)
        np.testing.assert_array_equal(out, dw)

    @given(st.integers(0, 10_000))
    def test_reflection_preserves_norm(self, seed):
        rng = np.random.default_rng(seed)
        dw = rng.standard_normal(3)
        y, z = rng.standard_normal(3), rng.standard_normal(3)
        out = apply_rule(Reflection(), dw, y, z)
        assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(dw), abs=1e-10)

    @given(st.integers(0, 10_000))
    def test_random_orthonormal_preserves_norm(self, seed):
        rng = np.random.default_rng(seed)
        dw = rng.standard_normal(4)
        rule = RandomOrthonormal(seed=seed)
        out = apply_rule(rule, dw, np.zeros(4), np.zeros(4))
        assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(dw), abs=1e-10)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            apply_rule(Synchronous(), np.zeros(2), np.zeros(3), np.zeros(2))


class TestOrthonormalRules:
    def test_fixed_rule_validates(self):
        with pytest.raises(ValueError):
            FixedOrthonormal(np.array([[1.0, 0.1], [0.0, 1.0]]))
        FixedOrthonormal(np.eye(3))  # fine

    def test_random_orthonormal_deterministic(self):
        a = random_orthonormal(4, 11)
        b = random_orthonormal(4, 11)
        np.testing.assert_array_equal(a, b)
        resid = np.max(np.abs(a.T @ a - np.eye(4)))
        assert resid < 1e-12


class TestIncrementCost:
    def test_identity_is_free(self):
        assert expected_increment_cost(np.eye(3), 0.7) == 0.0

    def test_negated_identity_2d(self):
        # 2 tr(I - (-I)) dt = 2 * 4 * 0.1 = 0.8, plus the MC oracle
        q = -np.eye(2)
        assert expected_increment_cost(q, 0.1) == pytest.approx(0.8, rel=1e-15)
        chk = trace_identity_check(q, 0.1, 200_000, seed=0)
        assert abs(chk.mc_mean - 0.8) <= 3 * chk.mc_se

    def test_reflection_cost_exactly_four_dt(self):
        for d in (1, 2, 4, 8):
            q = np.eye(d)
            q[0, 0] = -1.0
            assert expected_increment_cost(q, 0.25) == 1.0  # 4 dt, exact floats

    def test_mc_zero_for_identity(self):
        assert mc_increment_cost(np.eye(2), 0.3, 1000, seed=1) == 0.0

    def test_mc_converges_to_formula(self):
        q = random_orthonormal(3, 5)
        expected = expected_increment_cost(q, 0.2)
        got = mc_increment_cost(q, 0.2, 400_000, seed=2)
        assert got == pytest.approx(expected, rel=0.01)

    def test_antisymmetric_generator_q(self):
        q = antisymmetric_orthonormal(4, 9)
        chk = trace_identity_check(q, 0.05, 200_000, seed=3)
        assert chk.passed

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError):
            expected_increment_cost(np.array([[1.0, 0.0], [0.0, 2.0]]), 0.1)


class TestCoupledEdit:
    def test_synchronous_reproduces_sync_edit_bitwise(self, pair_family):
        sched = ConstantOU(1.0, np.sqrt(2.0))
        cfg = EditConfig(TimeGrid.uniform(64), seed=21)
        y0 = np.array([-1.8])
        a = sync_edit(y0, "src", "tar", pair_family, sched, cfg)
        b = coupled_edit(y0, "src", "tar", Synchronous(), pair_family, sched, cfg)
        np.testing.assert_array_equal(a.edited, b.edited)
        np.testing.assert_array_equal(a.target_reverse.states,
                                      b.target_reverse.states)

    def test_reflection_deviates_more_than_synchronous(self, pair_family):
        sched = ConstantOU(1.0, np.sqrt(2.0))
        rng = np.random.default_rng(3)
        diffs = []
        for seed in range(200):
            cfg = EditConfig(TimeGrid.uniform(64), seed=seed)
            y0 = pair_family.sample_data("src", 1, rng)[0]
            monge = y0 + 4.0
            s = coupled_edit(y0, "src", "tar", Synchronous(), pair_family, sched, cfg)
            r = coupled_edit(y0, "src", "tar", Reflection(), pair_family, sched, cfg)
            diffs.append(np.sum((s.edited - monge) ** 2) - np.sum((r.edited - monge) ** 2))
        diffs = np.array(diffs)
        z = diffs.mean() / (diffs.std(ddof=1) / np.sqrt(len(diffs)))
        assert z < -2.33


class TestGreedyExperiment:
    def _setup(self, d=2):
        means = {"src": ([-1.0] + [0.0] * (d - 1), 0.6),
                 "tar": ([1.0] + [0.0] * (d - 1), 0.6)}
        oracle = ConditionalGaussianFamily(means)
        sched = ConstantOU(1.0, 1.0)
        cfg = EditConfig(TimeGrid.uniform(64), seed=13)
        return oracle, sched, cfg

    def test_requires_synchronous(self):
        oracle, sched, cfg = self._setup()
        with pytest.raises(ValueError):
            greedy_optimality_experiment(oracle, sched, cfg, [Reflection()],
                                         200, "src", "tar")

    def test_single_rule_trivially_minimal(self):
        oracle, sched, cfg = self._setup()
        report = greedy_optimality_experiment(oracle, sched, cfg,
                                              [Synchronous()], 200, "src", "tar")
        assert report.synchronous_is_argmin

    def test_reflection_gap_matches_trace_formula(self):
        # at matched states the paired one-step gap is g^2 * 2 tr(I - Q) dt
        # = 4 dt for a reflection (g = 1 here); drift terms cancel
        oracle, sched, cfg = self._setup(d=2)
        report = greedy_optimality_experiment(
            oracle, sched, cfg, [Synchronous(), Reflection()], 4000,
            "src", "tar")
        refl = next(s for s in report.rules if s.rule == "reflection")
        expected_gap = 4.0 * report.dt
        assert abs(refl.gap_mean - expected_gap) <= 3 * refl.gap_se
        assert report.synchronous_is_argmin

    def test_synchronous_beats_random_rules(self):
        oracle, sched, cfg = self._setup(d=2)
        rules = [Synchronous()] + [RandomOrthonormal(seed=100 + i) for i in range(3)]
        report = greedy_optimality_experiment(oracle, sched, cfg, rules, 2000,
                                              "src", "tar")
        assert report.synchronous_is_argmin
        for s in report.rules:
            if s.rule != "synchronous":
                assert s.gap_mean > 0
