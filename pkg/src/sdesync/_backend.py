"""Kernel backend selection and the per-grid schedule tables.

The compiled extension (built from ``_kernels.pyx``) is preferred for
single-trajectory calls when it imported successfully; set the environment
variable ``SDESYNC_PURE_PYTHON=1`` before import to force the numpy
fallback.  Batched calls (leading replicate axes) always take the
vectorized numpy path, which is what the Monte-Carlo experiments use.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py as _py
from .schedule import NoiseSchedule, ScheduleDomainError
from .scores import ScoreTable

try:  # pragma: no cover - exercised implicitly by the import
    from . import _kernels as _c
except ImportError:
    _c = None

_FORCE_PY = os.environ.get("SDESYNC_PURE_PYTHON", "") == "1"
HAVE_COMPILED = _c is not None and not _FORCE_PY

RULE_SYNC = _py.RULE_SYNC
RULE_REFLECT = _py.RULE_REFLECT
RULE_MATRIX = _py.RULE_MATRIX
REFLECT_TIE_TOL = _py.REFLECT_TIE_TOL

_DUMMY2 = np.zeros((1, 1))


def backend_name() -> str:
    """Which kernel implementation single-trajectory calls will use."""
    return "compiled" if HAVE_COMPILED else "python"


@dataclass(frozen=True)
class ScheduleTables:
    """Schedule coefficients evaluated once per (schedule, grid, start).

    Forward tables cover every node (m also at the terminal node, where the
    rectified schedule takes its exact limit m = 0).  Reverse tables hold the
    coefficients at forward times 1 - t_k and are NaN below ``start``: the
    rectified schedule cannot evaluate alpha or g at forward time 1, so
    reverse integration must begin at start >= 1 there.
    """

    dt: np.ndarray         # (N,)
    m_fwd: np.ndarray      # (N+1,)
    g_fwd: np.ndarray      # (N,)
    alpha_fwd: np.ndarray  # (N,)
    alpha_rev: np.ndarray  # (N,)
    g_rev: np.ndarray      # (N,)
    m_rev: np.ndarray      # (N,)
    v_rev: np.ndarray      # (N,)
    start: int


def build_tables(sched: NoiseSchedule, grid, start: int = 0,
                 reverse: bool = True) -> ScheduleTables:
    nodes = grid.nodes
    n = grid.n_steps
    dt = np.diff(nodes)
    m_fwd = np.array([sched.decay_m(t) for t in nodes])
    g_fwd = np.array([sched.diffusion(t) for t in nodes[:-1]])
    alpha_fwd = np.array([sched.alpha(t) for t in nodes[:-1]])
    alpha_rev = np.full(n, np.nan)
    g_rev = np.full(n, np.nan)
    m_rev = np.full(n, np.nan)
    v_rev = np.full(n, np.nan)
    if reverse:
        for k in range(start, n):
            s = 1.0 - nodes[k]
            try:
                alpha_rev[k] = sched.alpha(s)
                g_rev[k] = sched.diffusion(s)
            except ScheduleDomainError as exc:
                raise ScheduleDomainError(
                    f"reverse step {k} needs coefficients at forward time {s}, "
                    f"outside the schedule range (raise start_step)"
                ) from exc
            m_rev[k] = sched.decay_m(s)
            v_rev[k] = sched.perturbation_variance(s)
    return ScheduleTables(dt, m_fwd, g_fwd, alpha_fwd,
                          alpha_rev, g_rev, m_rev, v_rev, start)


def _c_args(table: ScoreTable):
    return (np.ascontiguousarray(table.log_weights),
            np.ascontiguousarray(table.means),
            np.ascontiguousarray(table.sigma2))


def forward_closed_form(y0, tables: ScheduleTables, dw):
    if HAVE_COMPILED and np.ndim(y0) == 1:
        return _c.forward_closed_form(np.ascontiguousarray(y0, dtype=float),
                                      tables.m_fwd, tables.g_fwd,
                                      np.ascontiguousarray(dw, dtype=float))
    return _py.forward_closed_form(y0, tables.m_fwd, tables.g_fwd, dw)


def forward_euler(y0, tables: ScheduleTables, dw):
    if HAVE_COMPILED and np.ndim(y0) == 1:
        return _c.forward_euler(np.ascontiguousarray(y0, dtype=float),
                                tables.alpha_fwd, tables.g_fwd, tables.dt,
                                np.ascontiguousarray(dw, dtype=float))
    return _py.forward_euler(y0, tables.alpha_fwd, tables.g_fwd, tables.dt, dw)


def backward_increments(dw, ybar, tables: ScheduleTables, cond: ScoreTable,
                        pool: ScoreTable | None, w: float):
    start = tables.start
    if HAVE_COMPILED and np.ndim(dw) == 2:
        pc = _c_args(pool if pool is not None else cond)
        return _c.backward_increments(np.ascontiguousarray(dw, dtype=float),
                                      np.ascontiguousarray(ybar, dtype=float),
                                      tables.dt, tables.g_rev, tables.m_rev,
                                      tables.v_rev, *_c_args(cond), *pc,
                                      int(pool is not None), w, start)
    return _py.backward_increments(dw, ybar, tables.dt, tables.g_rev,
                                   tables.m_rev, tables.v_rev, cond, pool,
                                   w, start)


def reverse_euler(z0, dwbar, tables: ScheduleTables, cond: ScoreTable,
                  pool: ScoreTable | None, w: float,
                  rule_kind: int = RULE_SYNC, q=None, ybar=None):
    start = tables.start
    if HAVE_COMPILED and np.ndim(z0) == 1:
        pc = _c_args(pool if pool is not None else cond)
        qa = _DUMMY2 if q is None else np.ascontiguousarray(q, dtype=float)
        ya = _DUMMY2 if ybar is None else np.ascontiguousarray(ybar, dtype=float)
        return _c.reverse_euler(np.ascontiguousarray(z0, dtype=float),
                                np.ascontiguousarray(dwbar, dtype=float),
                                tables.dt, tables.alpha_rev, tables.g_rev,
                                tables.m_rev, tables.v_rev, *_c_args(cond),
                                *pc, int(pool is not None), w, start,
                                rule_kind, qa, ya)
    return _py.reverse_euler(z0, dwbar, tables.dt, tables.alpha_rev,
                             tables.g_rev, tables.m_rev, tables.v_rev,
                             cond, pool, w, start, rule_kind, q, ybar)


def resampling_diff(y0, dw_blocks, tables: ScheduleTables, src: ScoreTable,
                    tar: ScoreTable, pool: ScoreTable | None,
                    w_src: float, w_tar: float):
    start = tables.start
    if HAVE_COMPILED and np.ndim(y0) == 1:
        pc = _c_args(pool if pool is not None else src)
        return _c.resampling_diff(np.ascontiguousarray(y0, dtype=float),
                                  np.ascontiguousarray(dw_blocks, dtype=float),
                                  tables.m_fwd, tables.g_fwd, tables.dt,
                                  tables.alpha_rev, tables.g_rev,
                                  tables.m_rev, tables.v_rev,
                                  *_c_args(src), *_c_args(tar), *pc,
                                  int(pool is not None), w_src, w_tar, start)
    return _py.resampling_diff(y0, dw_blocks, tables.m_fwd, tables.g_fwd,
                               tables.dt, tables.alpha_rev, tables.g_rev,
                               tables.m_rev, tables.v_rev, src, tar, pool,
                               w_src, w_tar, start)
