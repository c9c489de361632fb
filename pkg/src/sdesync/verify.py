"""Independent oracles and statistical checks.

Everything here is deterministic given the seeds: multi-seed studies derive
one child stream per replicate from a spawned ``numpy.random.SeedSequence``
and each stream draws in a fixed documented order (data point first, then
increments), so single-replicate public-API calls can be reproduced from a
study's child seed.  Gates are 3-standard-error z-score checks with frozen
seeds; Kolmogorov-Smirnov statistics are reported alongside and only the
two-sampler comparisons treat the 0.01 KS threshold as the claim.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from . import _backend
from .editing import reverse_integrate
from .paths import TimeGrid, backward_increments, forward_closed_form, \
    reverse_trajectory, sample_brownian
from .schedule import NoiseSchedule, RectifiedFlow
from .scores import (ConditionalGaussianFamily, PromptLabel, ScoreOracle,
                     log_marginal_density, reverse_rf_velocity, score)

__all__ = [
    "pathwise_reversal_error",
    "convergence_study",
    "ConvergenceResult",
    "marginal_check",
    "MarginalReport",
    "finite_diff_score_check",
    "empirical_w2_1d",
    "backward_increment_variance_study",
    "VarianceStudy",
    "sample_reverse_endpoints",
]


def _child_seeds(base_seed: int, n: int):
    return np.random.SeedSequence(base_seed).spawn(n)


def pathwise_reversal_error(y0, oracle: ScoreOracle, c: PromptLabel,
                            sched: NoiseSchedule, n_steps: int, seed, *,
                            guidance: float = 1.0) -> float:
    """Sup-norm gap between the reverse integration and the reversed forward path.

    Runs forward_closed_form -> backward_increments -> reverse_integrate with
    the same label and returns max_k ||Z_k - Y_{1-t_k}||.  The gap is the
    Euler discretization error, O(dt).

    ``guidance`` biases only the backward-increment construction (where the
    editing pipeline applies its source weight); the integrator keeps the
    exact score, so any w != 1 breaks the score cancellation and leaves an
    O(1) error floor.  (Biasing both sides identically would cancel again
    and retrace regardless of w.)
    """
    grid = TimeGrid.uniform(n_steps)
    rng = np.random.default_rng(seed)
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    path = sample_brownian(grid, y0.shape[0], rng)
    fwd = forward_closed_form(y0, sched, grid, path)
    rev = reverse_trajectory(fwd)
    dwbar = backward_increments(path, rev, oracle, c, sched, guidance=guidance)
    traj = reverse_integrate(rev.states[0], dwbar, oracle, c, sched)
    return float(np.max(np.linalg.norm(traj.states - rev.states, axis=1)))


@dataclass(frozen=True)
class ConvergenceResult:
    """Median retrace errors per step count and the fitted log-log order."""

    n_steps: tuple
    medians: tuple
    order: float | None  # None when a single N gives nothing to fit

    @property
    def monotone(self) -> bool:
        return all(a > b for a, b in zip(self.medians, self.medians[1:]))


def _batched_retrace_errors(oracle: ScoreOracle, label: PromptLabel,
                            sched: NoiseSchedule, n_steps: int, seeds: int,
                            base_seed: int) -> np.ndarray:
    """Per-seed sup-norm retrace errors, vectorized across seeds."""
    grid = TimeGrid.uniform(n_steps)
    d = oracle.dim
    sqdt = np.sqrt(grid.dt)[:, None]
    y0s = np.empty((seeds, d))
    dws = np.empty((seeds, n_steps, d))
    for i, ss in enumerate(_child_seeds(base_seed, seeds)):
        rng = np.random.default_rng(ss)
        y0s[i] = oracle.sample_data(label, 1, rng)[0]
        dws[i] = rng.standard_normal((n_steps, d)) * sqdt
    tables = _backend.build_tables(sched, grid)
    fwd = _backend.forward_closed_form(y0s, tables, dws)
    rev = fwd[:, ::-1, :]
    tab = oracle.table(label)
    dwbar = _backend.backward_increments(dws, rev, tables, tab, None, 1.0)
    states, _ = _backend.reverse_euler(rev[:, 0, :], dwbar, tables, tab, None, 1.0)
    return np.max(np.linalg.norm(states - rev, axis=2), axis=1)


def convergence_study(oracle: ScoreOracle, label: PromptLabel,
                      sched: NoiseSchedule, n_steps_list, seeds: int,
                      base_seed: int = 0) -> ConvergenceResult:
    """Median retrace error at each step count plus the fitted order.

    Requires an increasing list of step counts; per-seed source points are
    drawn from the oracle's data distribution.  The order is the slope of
    -log(median) against log(N).
    """
    ns = list(n_steps_list)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("step counts must increase")
    medians = []
    for n in ns:
        errs = _batched_retrace_errors(oracle, label, sched, n, seeds, base_seed)
        medians.append(float(np.median(errs)))
    order = None
    if len(ns) > 1:
        slope = np.polyfit(np.log(ns), np.log(medians), 1)[0]
        order = float(-slope)
    return ConvergenceResult(tuple(ns), tuple(medians), order)


@dataclass(frozen=True)
class MarginalReport:
    """Per-coordinate z-scores of mean and variance plus one-sample KS stats."""

    n: int
    z_mean: np.ndarray
    z_var: np.ndarray
    ks_stat: np.ndarray | None
    ks_p: np.ndarray | None

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z_mean) <= 3.0)
                    and np.all(np.abs(self.z_var) <= 3.0))


def marginal_check(samples, target_mean, target_cov_diag) -> MarginalReport:
    """Moment z-test of samples against a diagonal-covariance target.

    Standard errors are analytic under the target: sd/sqrt(n) for the mean,
    var * sqrt(2/(n-1)) for the variance (the Gaussian sampling error of s^2).
    Passing means every |z| <= 3.  KS statistics against the per-coordinate
    normal are informational.  Drawing the samples exactly from the target
    keeps all gates green with overwhelming (not certain) probability; the
    suite freezes seeds so reruns are stable.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[0] < 100:
        raise ValueError(f"need at least 100 samples, got {x.shape[0]}")
    mean = np.asarray(target_mean, dtype=float)
    var = np.asarray(target_cov_diag, dtype=float)
    n = x.shape[0]
    z_mean = (x.mean(axis=0) - mean) / np.sqrt(var / n)
    z_var = (x.var(axis=0, ddof=1) - var) / (var * np.sqrt(2.0 / (n - 1)))
    ks_stat = np.empty(x.shape[1])
    ks_p = np.empty(x.shape[1])
    for i in range(x.shape[1]):
        res = sstats.kstest(x[:, i], "norm", args=(mean[i], np.sqrt(var[i])))
        ks_stat[i], ks_p[i] = res.statistic, res.pvalue
    return MarginalReport(n=n, z_mean=z_mean, z_var=z_var, ks_stat=ks_stat, ks_p=ks_p)


def finite_diff_score_check(oracle: ScoreOracle, sched: NoiseSchedule,
                            trials: int, h: float, seed) -> float:
    """Max abs gap between the analytic score and central differences of log p_t.

    Random (x, c, t) triples; the gap scales as O(h^2) plus the h-division
    roundoff, so h around 1e-5 lands near 1e-6 agreement.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    rng = np.random.default_rng(seed)
    labels = oracle.labels
    worst = 0.0
    d = oracle.dim
    for _ in range(trials):
        c = labels[rng.integers(len(labels))]
        t = float(rng.uniform(0.0, sched.t_max))
        x = rng.normal(scale=2.0, size=d)
        s = score(oracle, x, c, t, sched)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd = (log_marginal_density(oracle, x + e, c, t, sched)
                  - log_marginal_density(oracle, x - e, c, t, sched)) / (2.0 * h)
            worst = max(worst, abs(float(s[i]) - float(fd)))
    return worst


def empirical_w2_1d(a, b) -> float:
    """Quantile-coupling W2: RMS difference of the sorted samples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two 1-D sample sets of equal length")
    return float(np.sqrt(np.mean((np.sort(a) - np.sort(b)) ** 2)))


@dataclass(frozen=True)
class VarianceStudy:
    """Empirical per-step variance of the backward increments vs dt."""

    dt: np.ndarray
    variance: np.ndarray
    z: np.ndarray
    n_seeds: int

    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))


def backward_increment_variance_study(oracle: ScoreOracle, label: PromptLabel,
                                      sched: NoiseSchedule, n_steps: int,
                                      n_seeds: int, base_seed: int = 0,
                                      dim: int | None = None) -> VarianceStudy:
    """Sample variance of each backward increment coordinate across seeds.

    Under the reversed information flow the increments are Brownian, so the
    per-coordinate variance over step k should be dt_k; z-scores use the
    Gaussian standard error dt_k * sqrt(2/(n-1)).
    """
    grid = TimeGrid.uniform(n_steps)
    d = oracle.dim if dim is None else dim
    sqdt = np.sqrt(grid.dt)[:, None]
    y0s = np.empty((n_seeds, d))
    dws = np.empty((n_seeds, n_steps, d))
    for i, ss in enumerate(_child_seeds(base_seed, n_seeds)):
        rng = np.random.default_rng(ss)
        y0s[i] = oracle.sample_data(label, 1, rng)[0]
        dws[i] = rng.standard_normal((n_steps, d)) * sqdt
    tables = _backend.build_tables(sched, grid)
    fwd = _backend.forward_closed_form(y0s, tables, dws)
    rev = fwd[:, ::-1, :]
    dwbar = _backend.backward_increments(dws, rev, tables, oracle.table(label),
                                         None, 1.0)
    var = dwbar.var(axis=0, ddof=1).mean(axis=1)  # average coordinates
    se = grid.dt * np.sqrt(2.0 / (n_seeds - 1))
    return VarianceStudy(dt=grid.dt, variance=var, z=(var - grid.dt) / se,
                         n_seeds=n_seeds)


def sample_reverse_endpoints(oracle: ScoreOracle, label: PromptLabel,
                             sched: NoiseSchedule, n_steps: int, n_samples: int,
                             seed, *, start_step: int = 0, form: str = "score",
                             guidance: float = 1.0) -> np.ndarray:
    """Fresh-noise reverse sampling: endpoints distributed as p(. | label).

    The chain starts at the exact forward marginal at time 1 - t_{start}
    (drawn analytically) and integrates the reverse SDE with independent
    increments.  ``form`` selects the drift: "score" uses
    alpha(1-t) x + g^2(1-t) S, "velocity" uses the rectified-flow velocity
    identity 2 v(x, t) - alpha(1-t) x (rectified schedules with
    single-Gaussian labels only).
    """
    if form not in ("score", "velocity"):
        raise ValueError(f"form must be 'score' or 'velocity', got {form!r}")
    grid = TimeGrid.uniform(n_steps)
    d = oracle.dim
    rng = np.random.default_rng(seed)
    t_fwd = 1.0 - grid.nodes[start_step]
    x = oracle.sample_forward_marginal(label, t_fwd, n_samples, rng, sched)
    inc = np.full((n_samples, n_steps, d), np.nan)
    inc[:, start_step:, :] = rng.standard_normal((n_samples, n_steps - start_step, d)) \
        * np.sqrt(grid.dt[start_step:])[:, None]
    tables = _backend.build_tables(sched, grid, start=start_step)
    if form == "score":
        pool = oracle.pool_table if guidance != 1.0 else None
        states, _ = _backend.reverse_euler(x, inc, tables, oracle.table(label),
                                           pool, guidance)
        return states[:, n_steps, :]
    if not isinstance(sched, RectifiedFlow):
        raise ValueError("the velocity form requires the rectified schedule")
    if not isinstance(oracle, ConditionalGaussianFamily):
        raise ValueError("the velocity form requires a Gaussian family")
    vel = reverse_rf_velocity(oracle)
    z = x
    for k in range(start_step, n_steps):
        t_rev = grid.nodes[k]
        a = tables.alpha_rev[k]
        b = 2.0 * vel(z, label, t_rev) - a * z
        z = z + b * grid.dt[k] + tables.g_rev[k] * inc[:, k, :]
    return z
