"""Analytic conditional score oracles and the rectified-flow velocity.

The oracles stand in for a pretrained network S(x, c, t): each prompt label c
indexes an isotropic Gaussian (or Gaussian-mixture) data distribution, and
the forward schedule turns it into the exact time-t marginal

    p_t(. | c) = sum_i w_i Normal(m(t) mu_i, (m(t)^2 sigma_i^2 + V(t)) I),

whose score is available in closed form.  Guidance blends the conditional
score with the score of the unconditional pool (the equal-weight mixture
over all labels).

Time convention used everywhere: forward time t runs from 0 (data) to 1
(noise); reverse time is 1 - t.  ``rf_velocity`` is expressed in forward
time (data -> noise); reverse-time consumers negate and time-flip it, which
is what ``reverse_rf_velocity`` packages.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .schedule import NoiseSchedule, RectifiedFlow

__all__ = [
    "PromptLabel",
    "ScoreTable",
    "ConditionalGaussianFamily",
    "ConditionalMixtureFamily",
    "score",
    "guided_score",
    "log_marginal_density",
    "rf_velocity",
    "reverse_rf_velocity",
    "rf_sde_drift",
]

PromptLabel = Union[str, int]


@dataclass(frozen=True)
class ScoreTable:
    """Mixture components of one condition: log-weights, means, variances."""

    log_weights: np.ndarray  # (K,)
    means: np.ndarray        # (K, d)
    sigma2: np.ndarray       # (K,)


def _table(weights, means, stds) -> ScoreTable:
    w = np.asarray(weights, dtype=float)
    mu = np.atleast_2d(np.asarray(means, dtype=float))
    sd = np.asarray(stds, dtype=float)
    return ScoreTable(np.log(w), np.ascontiguousarray(mu), np.ascontiguousarray(sd**2))


class _FamilyBase:
    """Label bookkeeping plus everything derivable from per-label tables."""

    def table(self, c: PromptLabel) -> ScoreTable:
        try:
            return self._tables[c]
        except KeyError:
            raise KeyError(f"unknown prompt label {c!r}") from None

    @property
    def labels(self):
        return tuple(self._tables)

    @cached_property
    def pool_table(self) -> ScoreTable:
        """Equal-weight mixture over all labels (the unconditional pool)."""
        tables = list(self._tables.values())
        log_w = np.concatenate([t.log_weights - np.log(len(tables)) for t in tables])
        means = np.concatenate([t.means for t in tables])
        sigma2 = np.concatenate([t.sigma2 for t in tables])
        return ScoreTable(log_w, means, sigma2)

    def sample_data(self, c: PromptLabel, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n points from p(. | c)."""
        t = self.table(c)
        idx = rng.choice(len(t.sigma2), size=n, p=np.exp(t.log_weights))
        eps = rng.standard_normal((n, self.dim))
        return t.means[idx] + np.sqrt(t.sigma2[idx])[:, None] * eps

    def sample_forward_marginal(self, c: PromptLabel, t: float, n: int,
                                rng: np.random.Generator, sched: NoiseSchedule) -> np.ndarray:
        """Draw n points from the exact forward marginal p_t(. | c)."""
        tab = self.table(c)
        m, v = sched.decay_m(t), sched.perturbation_variance(t)
        idx = rng.choice(len(tab.sigma2), size=n, p=np.exp(tab.log_weights))
        var = m * m * tab.sigma2[idx] + v
        eps = rng.standard_normal((n, self.dim))
        return m * tab.means[idx] + np.sqrt(var)[:, None] * eps

    def marginal_moments(self, c: PromptLabel, t: float, sched: NoiseSchedule):
        """Mean vector and per-coordinate variance of p_t(. | c)."""
        tab = self.table(c)
        m, v = sched.decay_m(t), sched.perturbation_variance(t)
        w = np.exp(tab.log_weights)
        centers = m * tab.means                      # (K, d)
        mean = w @ centers
        var_comp = m * m * tab.sigma2 + v            # (K,)
        second = w @ (centers**2 + var_comp[:, None])
        return mean, second - mean**2


class ConditionalGaussianFamily(_FamilyBase):
    """One isotropic Gaussian N(mu_c, sigma_c^2 I) per prompt label."""

    def __init__(self, labels: Mapping[PromptLabel, tuple[Sequence[float], float]]):
        if not labels:
            raise ValueError("need at least one label")
        tables = {}
        dim = None
        for c, (mean, std) in labels.items():
            if std <= 0:
                raise ValueError(f"label {c!r}: std must be positive, got {std}")
            tables[c] = _table([1.0], [mean], [std])
            d = tables[c].means.shape[1]
            if dim is None:
                dim = d
            elif d != dim:
                raise ValueError("all labels must share the dimension")
        self._tables = tables
        self.dim = dim

    def mean(self, c: PromptLabel) -> np.ndarray:
        return self.table(c).means[0]

    def std(self, c: PromptLabel) -> float:
        return float(np.sqrt(self.table(c).sigma2[0]))


class ConditionalMixtureFamily(_FamilyBase):
    """Per label: an isotropic Gaussian mixture [(weight, mean, std), ...]."""

    def __init__(self, labels: Mapping[PromptLabel, Sequence[tuple[float, Sequence[float], float]]]):
        if not labels:
            raise ValueError("need at least one label")
        tables = {}
        dim = None
        for c, comps in labels.items():
            weights = np.array([w for w, _, _ in comps], dtype=float)
            if np.any(weights <= 0):
                raise ValueError(f"label {c!r}: weights must be positive")
            if abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError(f"label {c!r}: weights sum to {weights.sum()}, not 1")
            stds = np.array([s for _, _, s in comps], dtype=float)
            if np.any(stds <= 0):
                raise ValueError(f"label {c!r}: stds must be positive")
            tables[c] = _table(weights, [mu for _, mu, _ in comps], stds)
            d = tables[c].means.shape[1]
            if dim is None:
                dim = d
            elif d != dim:
                raise ValueError("all labels must share the dimension")
        self._tables = tables
        self.dim = dim


ScoreOracle = _FamilyBase


def _mixture_score(x: np.ndarray, table: ScoreTable, m: float, v: float) -> np.ndarray:
    """Score of the time-t mixture marginal; x has shape (..., d)."""
    centers = m * table.means                       # (K, d)
    var = m * m * table.sigma2 + v                  # (K,)
    diff = x[..., None, :] - centers                # (..., K, d)
    sq = np.sum(diff * diff, axis=-1)               # (..., K)
    d = table.means.shape[1]
    logp = table.log_weights - 0.5 * (sq / var + d * np.log(2.0 * np.pi * var))
    logp -= logp.max(axis=-1, keepdims=True)
    r = np.exp(logp)
    r /= r.sum(axis=-1, keepdims=True)
    return -np.sum((r / var)[..., None] * diff, axis=-2)


def _mixture_logpdf(x: np.ndarray, table: ScoreTable, m: float, v: float) -> np.ndarray:
    centers = m * table.means
    var = m * m * table.sigma2 + v
    diff = x[..., None, :] - centers
    sq = np.sum(diff * diff, axis=-1)
    d = table.means.shape[1]
    logp = table.log_weights - 0.5 * (sq / var + d * np.log(2.0 * np.pi * var))
    peak = logp.max(axis=-1)
    return peak + np.log(np.sum(np.exp(logp - peak[..., None]), axis=-1))


def score(oracle: ScoreOracle, x: np.ndarray, c: PromptLabel, t: float,
          sched: NoiseSchedule) -> np.ndarray:
    """Exact grad_x log p_t(x | c) for the forward marginal of the oracle."""
    m = sched.decay_m(t)
    v = sched.perturbation_variance(t)
    return _mixture_score(np.asarray(x, dtype=float), oracle.table(c), m, v)


def guided_score(oracle: ScoreOracle, x: np.ndarray, c: PromptLabel, t: float,
                 sched: NoiseSchedule, w: float = 1.0) -> np.ndarray:
    """s_uncond + w (s_cond - s_uncond); w = 1 returns the conditional score exactly."""
    if w == 1.0:
        return score(oracle, x, c, t, sched)
    x = np.asarray(x, dtype=float)
    m = sched.decay_m(t)
    v = sched.perturbation_variance(t)
    s_c = _mixture_score(x, oracle.table(c), m, v)
    s_u = _mixture_score(x, oracle.pool_table, m, v)
    return s_u + w * (s_c - s_u)


def log_marginal_density(oracle: ScoreOracle, x: np.ndarray, c: PromptLabel, t: float,
                         sched: NoiseSchedule) -> np.ndarray:
    """log p_t(x | c); the finite-difference reference for `score`."""
    m = sched.decay_m(t)
    v = sched.perturbation_variance(t)
    return _mixture_logpdf(np.asarray(x, dtype=float), oracle.table(c), m, v)


def rf_velocity(family: ConditionalGaussianFamily, x: np.ndarray, c: PromptLabel,
                t: float) -> np.ndarray:
    """Marginal-flow velocity of the rectified Gaussian path, forward in time.

    Along (1-t) X_0 + t eps the conditional marginal stays Gaussian with mean
    mu_t = (1-t) mu_c and variance s_t^2 = (1-t)^2 sigma_c^2 + t^2; the unique
    affine velocity transporting that family is

        v(x, t) = mu_t' + (s_t'/s_t) (x - mu_t).

    Forward (data -> noise) parameterization: integrate dx = v dt upward in t.
    """
    if not 0.0 <= t < 1.0:
        raise ValueError(f"rf_velocity needs t in [0, 1), got {t}")
    tab = family.table(c)
    if len(tab.sigma2) != 1:
        raise ValueError("rf_velocity is defined for single-Gaussian labels")
    mu, sig2 = tab.means[0], float(tab.sigma2[0])
    s2 = (1.0 - t) ** 2 * sig2 + t * t
    ds2 = 2.0 * (t - (1.0 - t) * sig2)
    x = np.asarray(x, dtype=float)
    return -mu + (0.5 * ds2 / s2) * (x - (1.0 - t) * mu)


def reverse_rf_velocity(family: ConditionalGaussianFamily) -> Callable:
    """The velocity in the reverse-time (noise -> data) convention.

    Returns v(x, c, t_rev) = -rf_velocity(x, c, 1 - t_rev), the field whose
    ODE dx = v dt carries the noise marginal at t_rev = 0 to data at 1.
    """

    def vel(x: np.ndarray, c: PromptLabel, t_rev: float) -> np.ndarray:
        return -rf_velocity(family, x, c, 1.0 - t_rev)

    return vel


def rf_sde_drift(vel_fn: Callable, x: np.ndarray, c: PromptLabel, t_rev: float,
                 sched: NoiseSchedule) -> np.ndarray:
    """Reverse-SDE drift expressed through a reverse-time velocity field.

    ``vel_fn(x, c, t_rev)`` must be the reverse-time (noise -> data) velocity,
    i.e. the negated, time-flipped marginal-flow velocity.  The SDE

        dX_t = [2 v(X_t, c, t) - alpha(1-t) X_t] dt + g(1-t) dW_t

    then shares all marginals with the score-form reverse SDE: since the
    flow velocity is v = alpha(1-t) x + (1/2) g^2(1-t) score, the drift above
    equals alpha(1-t) x + g^2(1-t) score pointwise.  (Writing + alpha instead
    of - alpha is off by 2 alpha(1-t) x; the identity test pins the sign.)
    """
    if not isinstance(sched, RectifiedFlow):
        raise ValueError("rf_sde_drift requires the rectified schedule")
    if t_rev == 0.0:
        raise ValueError("t_rev = 0 hits the alpha(1) singularity; start at t_rev > 0")
    a = sched.alpha(1.0 - t_rev)
    x = np.asarray(x, dtype=float)
    return 2.0 * np.asarray(vel_fn(x, c, t_rev), dtype=float) - a * x
