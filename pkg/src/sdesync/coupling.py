"""Orthonormal coupling rules and the greedy-optimality experiment.

Driving two reverse SDEs with noises related by an orthonormal matrix
process (dW^Z = Q dW^Y) parameterizes the couplings considered here:
Q = I (synchronous), Q = I - 2 n n^T with n the normalized source-target
difference (reflection), or a fixed/random orthonormal Q.  The one-step
expected squared source-target deviation decomposes into a drift part plus

    E || (Q - I) dW ||^2 = 2 tr(I - Q) dt,

so among orthonormal Q the synchronous choice, which maximizes the trace,
is the myopic minimizer.  `mc_increment_cost` is the Monte-Carlo oracle for
that identity; `greedy_optimality_experiment` measures the one-step and
end-to-end deviations for a set of rules at matched states.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence, Union

import numpy as np
from scipy.stats import norm as _normal

from . import _backend, _kernels_py
from .editing import EditConfig, EditResult, _run_coupled
from .schedule import NoiseSchedule
from .scores import PromptLabel, ScoreOracle, _mixture_score

__all__ = [
    "Synchronous",
    "Reflection",
    "FixedOrthonormal",
    "RandomOrthonormal",
    "CouplingRule",
    "random_orthonormal",
    "apply_rule",
    "expected_increment_cost",
    "mc_increment_cost",
    "trace_identity_check",
    "coupled_edit",
    "greedy_optimality_experiment",
    "RuleStats",
    "GreedyReport",
    "TraceCheck",
]

ORTHONORMAL_TOL = 1e-10
TIE_TOL = _backend.REFLECT_TIE_TOL


def _check_orthonormal(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError(f"Q must be square, got shape {q.shape}")
    resid = np.max(np.abs(q.T @ q - np.eye(q.shape[0])))
    if resid > ORTHONORMAL_TOL:
        raise ValueError(f"Q is not orthonormal: max|Q^T Q - I| = {resid:.3e}")
    return q


def random_orthonormal(d: int, seed) -> np.ndarray:
    """Sign-fixed QR orthonormalization of a Gaussian matrix."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


@dataclass(frozen=True)
class Synchronous:
    name: str = "synchronous"

    def matrix(self, d: int) -> np.ndarray:
        return np.eye(d)


@dataclass(frozen=True)
class Reflection:
    name: str = "reflection"


@dataclass(frozen=True)
class FixedOrthonormal:
    q: np.ndarray
    name: str = "fixed"

    def __post_init__(self):
        object.__setattr__(self, "q", _check_orthonormal(self.q))

    def matrix(self, d: int) -> np.ndarray:
        if self.q.shape[0] != d:
            raise ValueError(f"Q is {self.q.shape[0]}x{self.q.shape[0]}, need {d}x{d}")
        return self.q


@dataclass(frozen=True)
class RandomOrthonormal:
    seed: int
    name: str = "random"

    def matrix(self, d: int) -> np.ndarray:
        return random_orthonormal(d, self.seed)


CouplingRule = Union[Synchronous, Reflection, FixedOrthonormal, RandomOrthonormal]


def rule_label(rule: CouplingRule) -> str:
    if isinstance(rule, RandomOrthonormal):
        return f"random(seed={rule.seed})"
    return rule.name


def _rule_kernel(rule: CouplingRule, d: int):
    """Map a rule to the (kind, matrix) encoding of the integrator kernels."""
    if isinstance(rule, Synchronous):
        return _backend.RULE_SYNC, None
    if isinstance(rule, Reflection):
        return _backend.RULE_REFLECT, None
    return _backend.RULE_MATRIX, np.ascontiguousarray(rule.matrix(d))


def apply_rule(rule: CouplingRule, dw, y, z) -> np.ndarray:
    """Q dW with Q chosen by the rule from the current states.

    Reflection uses n = (y - z)/||y - z|| and falls back to the identity when
    the states coincide within 1e-12 (coupled processes that meet stay
    together).
    """
    dw = np.asarray(dw, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if not (dw.shape == y.shape == z.shape):
        raise ValueError("dw, y, z must share a shape")
    if isinstance(rule, Synchronous):
        return dw.copy()
    if isinstance(rule, Reflection):
        return _kernels_py._apply_rule(dw, _backend.RULE_REFLECT, None, y, z)
    return rule.matrix(dw.shape[-1]) @ dw


def expected_increment_cost(q: np.ndarray, dt: float) -> float:
    """E ||(Q - I) dW||^2 for dW ~ Normal(0, dt I): 2 tr(I - Q) dt."""
    q = _check_orthonormal(q)
    return 2.0 * float(np.trace(np.eye(q.shape[0]) - q)) * dt


def mc_increment_cost(q: np.ndarray, dt: float, n: int, seed) -> float:
    """Monte-Carlo mean of ||(Q - I) dW||^2 over n draws."""
    return trace_identity_check(q, dt, n, seed).mc_mean


@dataclass(frozen=True)
class TraceCheck:
    """Monte-Carlo estimate of the increment cost against the trace formula."""

    mc_mean: float
    mc_se: float
    expected: float

    @property
    def z(self) -> float:
        if self.mc_se == 0.0:
            return 0.0 if self.mc_mean == self.expected else np.inf
        return (self.mc_mean - self.expected) / self.mc_se

    @property
    def passed(self) -> bool:
        return abs(self.mc_mean - self.expected) <= 3.0 * self.mc_se or \
            self.mc_mean == self.expected


def trace_identity_check(q: np.ndarray, dt: float, n: int, seed) -> TraceCheck:
    if n < 1:
        raise ValueError(f"need at least one draw, got {n}")
    q = np.asarray(q, dtype=float)
    rng = np.random.default_rng(seed)
    d = q.shape[0]
    a = q - np.eye(d)
    expected = expected_increment_cost(q, dt)
    # batch the draws to bound memory at large n
    total = 0.0
    total_sq = 0.0
    remaining = n
    while remaining > 0:
        chunk = min(remaining, 1 << 18)
        w = rng.standard_normal((chunk, d)) * np.sqrt(dt)
        cost = np.sum((w @ a.T) ** 2, axis=1)
        total += float(cost.sum())
        total_sq += float((cost * cost).sum())
        remaining -= chunk
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    se = float(np.sqrt(var / n))
    return TraceCheck(mc_mean=mean, mc_se=se, expected=expected)


def coupled_edit(y0, c_src: PromptLabel, c_tar: PromptLabel, rule: CouplingRule,
                 oracle: ScoreOracle, sched: NoiseSchedule,
                 cfg: EditConfig) -> EditResult:
    """sync_edit with the target noise transformed per the rule at each step.

    The synchronous rule reproduces sync_edit exactly (same seed, same
    floats); reflection reflects each backward increment across the current
    source-target direction.
    """
    kind, q = _rule_kernel(rule, oracle.dim)
    return _run_coupled(y0, c_src, c_tar, oracle, sched, cfg, rule_kind=kind, q=q)


@dataclass(frozen=True)
class RuleStats:
    rule: str
    one_step_mean: float
    one_step_se: float
    end_mean: float
    end_se: float
    # paired one-step comparison against the synchronous rule
    gap_mean: float
    gap_se: float
    gap_z: float
    gap_p: float


@dataclass(frozen=True)
class GreedyReport:
    step_index: int
    dt: float
    n_draws: int
    rules: tuple
    synchronous_is_argmin: bool

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "dt": self.dt,
            "n_draws": self.n_draws,
            "synchronous_is_argmin": self.synchronous_is_argmin,
            "rules": [asdict(r) for r in self.rules],
        }


def greedy_optimality_experiment(oracle: ScoreOracle, sched: NoiseSchedule,
                                 cfg: EditConfig, rules: Sequence[CouplingRule],
                                 n_draws: int, c_src: PromptLabel,
                                 c_tar: PromptLabel, *, step_index: int | None = None,
                                 offset: float = 1e-6) -> GreedyReport:
    """One-step and end-to-end deviation costs for a set of coupling rules.

    One-step probe: matched states y = z = x with x drawn from the forward
    marginal of c_src at the probe step, perturbed by ``offset`` along a
    random unit direction so the reflection direction is defined (the trace
    cost does not depend on the direction).  All rules share the x and dW
    draws, so paired differences cancel the drift term exactly up to O(offset).

    End-to-end: full coupled edits per rule on shared seeds, measuring
    E||Z_N - Ybar_N||^2 against the reversed source path.
    """
    if not any(isinstance(r, Synchronous) for r in rules):
        raise ValueError("rules must include the synchronous rule")
    grid = cfg.grid
    n = grid.n_steps
    k_star = n // 2 if step_index is None else step_index
    if not cfg.start_step <= k_star < n:
        raise ValueError(f"step_index must lie in [{cfg.start_step}, {n}), got {k_star}")
    d = oracle.dim
    dt = float(grid.dt[k_star])
    t_rev = float(grid.nodes[k_star])
    s_fwd = 1.0 - t_rev
    a_k = sched.alpha(s_fwd)
    g_k = sched.diffusion(s_fwd)
    m_k = sched.decay_m(s_fwd)
    v_k = sched.perturbation_variance(s_fwd)

    rng = np.random.default_rng(cfg.seed)
    x = oracle.sample_forward_marginal(c_src, s_fwd, n_draws, rng, sched)
    u = rng.standard_normal((n_draws, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    dw = rng.standard_normal((n_draws, d)) * np.sqrt(dt)

    y = x
    z = x + offset * u
    src_tab, tar_tab = oracle.table(c_src), oracle.table(c_tar)
    b_y = a_k * y + g_k**2 * _mixture_score(y, src_tab, m_k, v_k)
    b_z = a_k * z + g_k**2 * _mixture_score(z, tar_tab, m_k, v_k)
    base = (z - y) + (b_z - b_y) * dt  # shared across rules

    one_step = {}
    for rule in rules:
        kind, q = _rule_kernel(rule, d)
        dw_used = _kernels_py._apply_rule(dw, kind, q, y, z)
        delta = base + g_k * (dw_used - dw)
        one_step[rule_label(rule)] = np.sum(delta * delta, axis=1)

    end_costs = {label: np.empty(n_draws) for label in one_step}
    streams = np.random.SeedSequence(cfg.seed).spawn(n_draws)
    y0s = np.empty((n_draws, d))
    dws = np.empty((n_draws, n, d))
    sqdt = np.sqrt(grid.dt)[:, None]
    for i, ss in enumerate(streams):
        r = np.random.default_rng(ss)
        y0s[i] = oracle.sample_data(c_src, 1, r)[0]
        dws[i] = r.standard_normal((n, d)) * sqdt
    tables = _backend.build_tables(sched, grid, start=cfg.start_step)
    fwd = _backend.forward_closed_form(y0s, tables, dws)
    rev = fwd[:, ::-1, :]
    dwbar = _backend.backward_increments(dws, rev, tables, src_tab, None, 1.0)
    z0 = rev[:, cfg.start_step, :]
    for rule in rules:
        kind, q = _rule_kernel(rule, d)
        states, _ = _backend.reverse_euler(z0, dwbar, tables, tar_tab, None,
                                           cfg.w_tar, rule_kind=kind, q=q, ybar=rev)
        end_costs[rule_label(rule)] = np.sum((states[:, n, :] - rev[:, n, :]) ** 2, axis=1)

    sync_label = rule_label(next(r for r in rules if isinstance(r, Synchronous)))
    sync_cost = one_step[sync_label]
    stats = []
    for rule in rules:
        label = rule_label(rule)
        cost = one_step[label]
        gap = cost - sync_cost
        gap_se = float(np.std(gap, ddof=1) / np.sqrt(n_draws)) if label != sync_label else 0.0
        gap_mean = float(gap.mean())
        if gap_se > 0:
            gap_z = gap_mean / gap_se
            gap_p = float(_normal.sf(gap_z))
        else:
            gap_z, gap_p = 0.0, 1.0
        stats.append(RuleStats(
            rule=label,
            one_step_mean=float(cost.mean()),
            one_step_se=float(np.std(cost, ddof=1) / np.sqrt(n_draws)),
            end_mean=float(end_costs[label].mean()),
            end_se=float(np.std(end_costs[label], ddof=1) / np.sqrt(n_draws)),
            gap_mean=gap_mean,
            gap_se=gap_se,
            gap_z=gap_z,
            gap_p=gap_p,
        ))
    argmin = all(s.gap_mean >= -3.0 * s.gap_se for s in stats)
    return GreedyReport(step_index=k_star, dt=dt, n_draws=n_draws,
                        rules=tuple(stats), synchronous_is_argmin=argmin)
