"""Semantic-editing algorithms on analytic-score toy models.

Three routes from a source point ``y0`` (described by label ``c_src``) to an
edited point consistent with label ``c_tar``:

* ``sync_edit`` - noise the source forward, build the structured backward
  increments along the reversed path with the source score, then integrate
  the target reverse SDE driven by those *same* increments.  The shared
  noise cancels pathwise and the edit differs from the source only through
  the drift difference of the two conditions.
* ``resampling_ode_edit`` - evolve the source-target difference process
  deterministically, resampling a fresh exact forward path for the
  reference state at every step; no stochastic term is ever integrated for
  the target, so identical prompts return ``y0`` exactly.
* ``independent_edit`` - the noising baseline: push ``y0`` to forward time
  1 - t_s with the closed form and reverse-integrate with fresh noise,
  sharing nothing with the source path.

Coupling starts at reverse step ``start_step`` (the target state is
initialized to the source reverse state there); earlier steps contribute no
target dynamics.  Rectified schedules require ``start_step >= 1`` because
their coefficients diverge at forward time 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .paths import (BrownianPath, Direction, TimeGrid, Trajectory,
                    forward_closed_form, reverse_trajectory, sample_brownian)
from .schedule import NoiseSchedule
from .scores import PromptLabel, ScoreOracle, guided_score

__all__ = [
    "EditConfig",
    "EditDiagnostics",
    "EditResult",
    "reverse_drift",
    "reverse_integrate",
    "sync_edit",
    "resampling_ode_edit",
    "independent_edit",
]


@dataclass(frozen=True)
class EditConfig:
    """Grid, coupling start, guidance weights and seed of one edit.

    ``start_step`` may equal ``n_steps``: the degenerate edit performs no
    reverse steps and returns the source point (useful for the baseline).
    Guidance weights other than 1 bias the scores; w_src != 1 voids the
    exact-retrace property of the backward increments.
    """

    grid: TimeGrid
    start_step: int = 0
    w_src: float = 1.0
    w_tar: float = 1.0
    seed: int = 0

    def __post_init__(self):
        n = self.grid.n_steps
        if n < 2:
            raise ValueError(f"need at least 2 steps, got {n}")
        if not 0 <= self.start_step <= n:
            raise ValueError(f"start_step must lie in [0, {n}], got {self.start_step}")

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps


@dataclass(frozen=True)
class EditDiagnostics:
    """Per reverse step: target drift norm and source-target deviation norm."""

    drift_norms: np.ndarray      # (N,), NaN below start_step
    deviation_norms: np.ndarray  # (N,), ||Z_k - Y_k|| at the step's node


@dataclass(frozen=True)
class EditResult:
    edited: np.ndarray
    source_reverse: Trajectory
    target_reverse: Trajectory
    backward_path: BrownianPath | None  # None when no shared path exists
    diagnostics: EditDiagnostics


def reverse_drift(oracle: ScoreOracle, x, c: PromptLabel, t_rev: float,
                  sched: NoiseSchedule, w: float = 1.0) -> np.ndarray:
    """Reverse-SDE drift alpha(1-t) x + g^2(1-t) S_w(x, c, 1-t)."""
    s = 1.0 - t_rev
    a = sched.alpha(s)
    g = sched.diffusion(s)
    x = np.asarray(x, dtype=float)
    return a * x + g * g * guided_score(oracle, x, c, s, sched, w)


def reverse_integrate(init, increments: BrownianPath, oracle: ScoreOracle,
                      c: PromptLabel, sched: NoiseSchedule, *,
                      start_step: int = 0, guidance: float = 1.0) -> Trajectory:
    """Euler-Maruyama for the reverse SDE driven by supplied increments.

    Z_{k+1} = Z_k + reverse_drift(Z_k, c, t_k) dt_k + g(1 - t_k) dWbar_k for
    k = start_step .. N-1; nodes below start_step are NaN.
    """
    grid = increments.grid
    init = np.atleast_1d(np.asarray(init, dtype=float))
    if init.shape != (increments.dim,):
        raise ValueError(f"init has shape {init.shape}, increments have d={increments.dim}")
    tables = _backend.build_tables(sched, grid, start=start_step)
    pool = oracle.pool_table if guidance != 1.0 else None
    states, _ = _backend.reverse_euler(init, increments.increments, tables,
                                       oracle.table(c), pool, guidance)
    return Trajectory(grid, states, Direction.REVERSED)


def _prepare(y0, oracle: ScoreOracle) -> np.ndarray:
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if y0.shape != (oracle.dim,):
        raise ValueError(f"y0 has shape {y0.shape}, oracle dimension is {oracle.dim}")
    if not np.all(np.isfinite(y0)):
        raise ValueError("y0 must be finite")
    return y0


def _run_coupled(y0, c_src: PromptLabel, c_tar: PromptLabel, oracle: ScoreOracle,
                 sched: NoiseSchedule, cfg: EditConfig,
                 rule_kind: int = _backend.RULE_SYNC, q=None) -> EditResult:
    """Shared body of sync_edit and coupled_edit (rule applied to the target noise)."""
    grid = cfg.grid
    if not grid.symmetric:
        raise ValueError("coupled editing requires a symmetric time grid")
    y0 = _prepare(y0, oracle)
    rng = np.random.default_rng(cfg.seed)
    path = sample_brownian(grid, oracle.dim, rng)
    fwd = forward_closed_form(y0, sched, grid, path)
    rev = reverse_trajectory(fwd)

    tables = _backend.build_tables(sched, grid, start=cfg.start_step)
    pool_src = oracle.pool_table if cfg.w_src != 1.0 else None
    pool_tar = oracle.pool_table if cfg.w_tar != 1.0 else None
    dwbar = _backend.backward_increments(path.increments, rev.states, tables,
                                         oracle.table(c_src), pool_src, cfg.w_src)
    z0 = rev.states[cfg.start_step]
    states, drift_norms = _backend.reverse_euler(
        z0, dwbar, tables, oracle.table(c_tar), pool_tar, cfg.w_tar,
        rule_kind=rule_kind, q=q, ybar=rev.states)
    n = grid.n_steps
    deviation = np.sqrt(np.sum((states[:n] - rev.states[:n]) ** 2, axis=1))
    return EditResult(
        edited=states[n].copy(),
        source_reverse=rev,
        target_reverse=Trajectory(grid, states, Direction.REVERSED),
        backward_path=BrownianPath(grid, dwbar),
        diagnostics=EditDiagnostics(drift_norms, deviation),
    )


def sync_edit(y0, c_src: PromptLabel, c_tar: PromptLabel, oracle: ScoreOracle,
              sched: NoiseSchedule, cfg: EditConfig) -> EditResult:
    """Shared-backward-noise edit.

    Forward path from y0, reversed; backward increments built with c_src
    (weight w_src); target state initialized to the source reverse state at
    start_step and integrated with c_tar (weight w_tar) driven by the same
    increments.  With c_tar = c_src and unit guidance this degenerates to the
    pathwise retrace of the forward path.
    """
    return _run_coupled(y0, c_src, c_tar, oracle, sched, cfg)


def resampling_ode_edit(y0, c_src: PromptLabel, c_tar: PromptLabel,
                        oracle: ScoreOracle, sched: NoiseSchedule,
                        cfg: EditConfig) -> EditResult:
    """Difference-process edit with per-step reference resampling.

    Maintains D with D_{start} = 0; at step k a fresh full forward path from
    y0 gives the reference Ybar_k = Y_{1-t_k}, the target is reconstructed as
    Zbar_k = D_k + Ybar_k, and D updates deterministically by the drift
    difference [b_tar(t_k, Zbar_k) - b_src(t_k, Ybar_k)] dt_k.  Returns
    D_N + y0; identical prompts keep D at exactly zero, so the output is y0
    bit for bit.
    """
    grid = cfg.grid
    if not grid.symmetric:
        raise ValueError("resampling editing requires a symmetric time grid")
    y0 = _prepare(y0, oracle)
    n = grid.n_steps
    start = cfg.start_step
    rng = np.random.default_rng(cfg.seed)
    blocks = rng.standard_normal((n - start, n, oracle.dim)) * np.sqrt(grid.dt)[:, None]

    tables = _backend.build_tables(sched, grid, start=start)
    pool = oracle.pool_table if (cfg.w_src != 1.0 or cfg.w_tar != 1.0) else None
    d_states, y_diag, drift_norms = _backend.resampling_diff(
        y0, blocks, tables, oracle.table(c_src), oracle.table(c_tar), pool,
        cfg.w_src, cfg.w_tar)
    edited = y0 + d_states[n]
    target_states = d_states + y_diag
    target_states[n] = edited
    deviation = np.sqrt(np.sum(d_states[:n] ** 2, axis=1))
    return EditResult(
        edited=edited,
        source_reverse=Trajectory(grid, y_diag, Direction.REVERSED),
        target_reverse=Trajectory(grid, target_states, Direction.REVERSED),
        backward_path=None,
        diagnostics=EditDiagnostics(drift_norms, deviation),
    )


def independent_edit(y0, c_tar: PromptLabel, oracle: ScoreOracle,
                     sched: NoiseSchedule, cfg: EditConfig) -> np.ndarray:
    """Noising baseline: closed-form forward noise to 1 - t_s, fresh reverse.

    start_step = N performs no noising and no reverse steps and returns y0
    exactly (on a symmetric grid, where 1 - t_N = 0).
    """
    grid = cfg.grid
    y0 = _prepare(y0, oracle)
    n = grid.n_steps
    start = cfg.start_step
    rng = np.random.default_rng(cfg.seed)
    t_fwd = 1.0 - grid.nodes[start]
    m = sched.decay_m(t_fwd)
    v = sched.perturbation_variance(t_fwd)
    x = m * y0 + np.sqrt(v) * rng.standard_normal(oracle.dim)

    inc = np.full((n, oracle.dim), np.nan)
    inc[start:] = rng.standard_normal((n - start, oracle.dim)) * np.sqrt(grid.dt[start:])[:, None]
    tables = _backend.build_tables(sched, grid, start=start)
    pool = oracle.pool_table if cfg.w_tar != 1.0 else None
    states, _ = _backend.reverse_euler(x, inc, tables, oracle.table(c_tar),
                                       pool, cfg.w_tar)
    return states[n].copy()
