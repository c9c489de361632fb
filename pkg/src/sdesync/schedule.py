"""Noise schedules of the forward Ornstein-Uhlenbeck family.

A schedule is the coefficient pair (alpha, g) of the linear forward SDE

    dX_t = -alpha(t) X_t dt + g(t) dW_t,      t in [0, 1],

together with the deterministic kernels derived from it:

    m(t)      = exp(-int_0^t alpha(u) du)          data-decay factor
    Phi(t, s) = exp(-int_s^t alpha(u) du)          transition factor, s <= t
    V(t)      = int_0^t Phi(t, u)^2 g(u)^2 du      accumulated noise variance

so that X_t | X_0 ~ Normal(m(t) X_0, V(t) I).  Closed forms are used where
the schedule admits them; `decay_m_quadrature` and
`perturbation_variance_quadrature` provide an independent adaptive-quadrature
route used as the numerical oracle in the test suite.

The rectified schedule (alpha = 1/(1-t), g = sqrt(2t/(1-t))) diverges at
t = 1, so it carries a usable horizon ``t_max < 1``.  The derived kernels
still have finite limits at t = 1 (m = 0, Phi = 0, V = 1) and those exact
limits are returned for t == 1 even though alpha and g are undefined there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

__all__ = [
    "ScheduleDomainError",
    "QuadratureError",
    "ConstantOU",
    "RectifiedFlow",
    "Tabulated",
    "NoiseSchedule",
    "decay_m_quadrature",
    "transition_phi_quadrature",
    "perturbation_variance_quadrature",
]

QUAD_TOL = 1e-9


class ScheduleDomainError(ValueError):
    """Time argument outside the schedule's usable range."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class _ScheduleBase:
    """Shared domain checks and generic kernels."""

    t_max: float

    def _check_t(self, t: float, *, allow_one: bool = False) -> None:
        if not (0.0 <= t <= self.t_max or (allow_one and t == 1.0)):
            raise ScheduleDomainError(
                f"t={t!r} outside [0, {self.t_max}]"
                + (" (t=1 limit allowed)" if allow_one else "")
            )

    def alpha(self, t: float) -> float:
        raise NotImplementedError

    def diffusion(self, t: float) -> float:
        raise NotImplementedError

    def decay_m(self, t: float) -> float:
        raise NotImplementedError

    def perturbation_variance(self, t: float) -> float:
        raise NotImplementedError

    def transition_phi(self, t: float, s: float) -> float:
        """Phi(t, s) = m(t) / m(s) for s <= t."""
        if s > t:
            raise ScheduleDomainError(f"transition_phi requires s <= t, got s={s}, t={t}")
        return self.decay_m(t) / self.decay_m(s)


@dataclass(frozen=True)
class ConstantOU(_ScheduleBase):
    """Constant-coefficient OU schedule: alpha(t) = alpha, g(t) = g.

    Kernels: m(t) = exp(-alpha t), V(t) = g^2 (1 - exp(-2 alpha t)) / (2 alpha)
    with the alpha -> 0 limit V(t) = g^2 t.
    """

    alpha_const: float
    g_const: float
    t_max: float = 1.0

    def __post_init__(self):
        if self.alpha_const < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha_const}")
        if self.g_const < 0:
            raise ValueError(f"g must be nonnegative, got {self.g_const}")
        if not 0.0 < self.t_max <= 1.0:
            raise ValueError(f"t_max must lie in (0, 1], got {self.t_max}")

    def alpha(self, t: float) -> float:
        self._check_t(t)
        return self.alpha_const

    def diffusion(self, t: float) -> float:
        self._check_t(t)
        return self.g_const

    def decay_m(self, t: float) -> float:
        self._check_t(t, allow_one=True)
        return math.exp(-self.alpha_const * t)

    def transition_phi(self, t: float, s: float) -> float:
        if s > t:
            raise ScheduleDomainError(f"transition_phi requires s <= t, got s={s}, t={t}")
        self._check_t(s)
        self._check_t(t, allow_one=True)
        return math.exp(-self.alpha_const * (t - s))

    def perturbation_variance(self, t: float) -> float:
        self._check_t(t, allow_one=True)
        if self.alpha_const == 0.0:
            return self.g_const**2 * t
        # -expm1(-2 a t) is stable for small alpha * t
        return self.g_const**2 * (-math.expm1(-2.0 * self.alpha_const * t)) / (2.0 * self.alpha_const)


@dataclass(frozen=True)
class RectifiedFlow(_ScheduleBase):
    """Rectified schedule: alpha(t) = 1/(1-t), g(t) = sqrt(2t/(1-t)).

    The forward marginal interpolates (1-t) X_0 + t * eps with eps standard
    normal: m(t) = 1 - t and V(t) = t^2.  Both coefficients diverge at t = 1,
    hence t_max < 1; pick ``RectifiedFlow.for_steps(n)`` to leave half a step
    of headroom below the last interior node of a uniform n-step grid.
    """

    t_max: float = 1.0 - 1.0 / 56.0  # headroom for the default 28-step grid

    def __post_init__(self):
        if not 0.0 < self.t_max < 1.0:
            raise ValueError(f"rectified schedule needs t_max in (0, 1), got {self.t_max}")

    @classmethod
    def for_steps(cls, n_steps: int) -> "RectifiedFlow":
        """Horizon 1 - 1/(2 n) for a uniform n-step grid on [0, 1]."""
        if n_steps < 1:
            raise ValueError(f"n_steps must be positive, got {n_steps}")
        return cls(t_max=1.0 - 1.0 / (2.0 * n_steps))

    def alpha(self, t: float) -> float:
        self._check_t(t)
        return 1.0 / (1.0 - t)

    def diffusion(self, t: float) -> float:
        self._check_t(t)
        return math.sqrt(2.0 * t / (1.0 - t))

    def decay_m(self, t: float) -> float:
        self._check_t(t, allow_one=True)
        return 1.0 - t

    def transition_phi(self, t: float, s: float) -> float:
        if s > t:
            raise ScheduleDomainError(f"transition_phi requires s <= t, got s={s}, t={t}")
        self._check_t(s)
        self._check_t(t, allow_one=True)
        return (1.0 - t) / (1.0 - s)

    def perturbation_variance(self, t: float) -> float:
        self._check_t(t, allow_one=True)
        return t * t


@dataclass(frozen=True)
class Tabulated(_ScheduleBase):
    """Schedule given by samples of alpha and g, linearly interpolated.

    ``decay_m`` integrates the interpolant exactly (the trapezoid rule is
    exact for piecewise-linear integrands); ``perturbation_variance`` falls
    back to adaptive quadrature and raises :class:`QuadratureError` when the
    integrator cannot certify the 1e-9 tolerance.
    """

    times: np.ndarray
    alphas: np.ndarray
    gs: np.ndarray
    t_max: float = field(init=False)
    _cum_alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        alphas = np.asarray(self.alphas, dtype=float)
        gs = np.asarray(self.gs, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("need at least two sample times")
        if times[0] != 0.0 or not np.all(np.diff(times) > 0) or times[-1] > 1.0:
            raise ValueError("times must increase strictly from 0 and stay within [0, 1]")
        if alphas.shape != times.shape or gs.shape != times.shape:
            raise ValueError("alphas and gs must match the time samples")
        if np.any(alphas < 0) or np.any(gs < 0):
            raise ValueError("alpha and g samples must be nonnegative")
        # cumulative exact integral of the piecewise-linear alpha at the nodes
        seg = 0.5 * (alphas[1:] + alphas[:-1]) * np.diff(times)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        for name, value in (("times", times), ("alphas", alphas), ("gs", gs),
                            ("t_max", float(times[-1])), ("_cum_alpha", cum)):
            object.__setattr__(self, name, value)

    def alpha(self, t: float) -> float:
        self._check_t(t)
        return float(np.interp(t, self.times, self.alphas))

    def diffusion(self, t: float) -> float:
        self._check_t(t)
        return float(np.interp(t, self.times, self.gs))

    def _int_alpha(self, t: float) -> float:
        """Exact int_0^t of the interpolated alpha."""
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(i, len(self.times) - 2)
        t0 = self.times[i]
        a0 = self.alphas[i]
        at = a0 + (self.alphas[i + 1] - a0) * (t - t0) / (self.times[i + 1] - t0)
        return float(self._cum_alpha[i] + 0.5 * (a0 + at) * (t - t0))

    def decay_m(self, t: float) -> float:
        self._check_t(t)
        return math.exp(-self._int_alpha(t))

    def transition_phi(self, t: float, s: float) -> float:
        if s > t:
            raise ScheduleDomainError(f"transition_phi requires s <= t, got s={s}, t={t}")
        self._check_t(s)
        self._check_t(t)
        return math.exp(-(self._int_alpha(t) - self._int_alpha(s)))

    def perturbation_variance(self, t: float) -> float:
        self._check_t(t)
        if t == 0.0:
            return 0.0
        mt = self.decay_m(t)

        def integrand(u):
            phi = mt / self.decay_m(u)
            return phi * phi * self.diffusion(u) ** 2

        interior = [x for x in self.times if 0.0 < x < t]
        value, err = quad(integrand, 0.0, t, epsabs=QUAD_TOL, epsrel=QUAD_TOL,
                          points=interior or None, limit=200)
        if err > 1e3 * QUAD_TOL:
            raise QuadratureError(
                f"variance quadrature error estimate {err:.2e} exceeds tolerance at t={t}"
            )
        return value


# Any of the concrete classes; they share the _ScheduleBase interface.
NoiseSchedule = _ScheduleBase


def _quad(fn, a: float, b: float, tol: float) -> float:
    value, err = quad(fn, a, b, epsabs=tol, epsrel=tol, limit=500)
    if err > 1e4 * tol and err > 1e-12:
        raise QuadratureError(f"quadrature error estimate {err:.2e} exceeds tolerance")
    return value


def decay_m_quadrature(sched: NoiseSchedule, t: float, tol: float = QUAD_TOL) -> float:
    """m(t) from adaptive quadrature of alpha; independent of the closed forms."""
    sched._check_t(t)
    return math.exp(-_quad(sched.alpha, 0.0, t, tol))


def transition_phi_quadrature(sched: NoiseSchedule, t: float, s: float,
                              tol: float = QUAD_TOL) -> float:
    """Phi(t, s) from adaptive quadrature of alpha over [s, t]."""
    if s > t:
        raise ScheduleDomainError(f"requires s <= t, got s={s}, t={t}")
    sched._check_t(s)
    sched._check_t(t)
    return math.exp(-_quad(sched.alpha, s, t, tol))


def perturbation_variance_quadrature(sched: NoiseSchedule, t: float,
                                     tol: float = QUAD_TOL) -> float:
    """V(t) by nested quadrature of Phi(t, u)^2 g(u)^2.

    Uses only alpha and g evaluations, never the closed-form kernels, so it
    can serve as the independent oracle for them.
    """
    sched._check_t(t)
    if t == 0.0:
        return 0.0

    def integrand(u):
        log_phi = -_quad(sched.alpha, u, t, tol)
        return math.exp(2.0 * log_phi) * sched.diffusion(u) ** 2

    return _quad(integrand, 0.0, t, tol)
