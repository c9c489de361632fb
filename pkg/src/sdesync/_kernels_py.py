"""Pure-numpy kernels for the hot per-trajectory loops.

These are the fallback implementations mirrored by the compiled extension
(`sdesync._kernels`).  They operate on raw arrays plus the precomputed
schedule tables, and accept arbitrary leading batch axes so that Monte-Carlo
experiments can run vectorized across replicates.

State layout: trajectories are (..., N+1, d) aligned to the grid nodes,
increments are (..., N, d).  Entries at node/step indices below ``start``
are NaN-filled when the operation is undefined there (rectified schedules
cannot evaluate coefficients at forward time 1).
"""

from __future__ import annotations

import numpy as np

from .scores import ScoreTable, _mixture_score

RULE_SYNC = 0
RULE_REFLECT = 1
RULE_MATRIX = 2

REFLECT_TIE_TOL = 1e-12


def _guided(x, cond: ScoreTable, pool: ScoreTable | None, w: float,
            m: float, v: float) -> np.ndarray:
    if w == 1.0 or pool is None:
        return _mixture_score(x, cond, m, v)
    s_c = _mixture_score(x, cond, m, v)
    s_u = _mixture_score(x, pool, m, v)
    return s_u + w * (s_c - s_u)


def forward_closed_form(y0, m_fwd, g_fwd, dw):
    """Exact forward path: states[k] = m_k (y0 + sum_{j<k} (g_j/m_j) dW_j).

    Rearranged as a prefix sum so each path costs O(N).  Only m at interior
    nodes is divided by, so a vanishing terminal m (rectified at t=1) is fine.
    """
    y0 = np.asarray(y0, dtype=float)
    dw = np.asarray(dw, dtype=float)
    n = dw.shape[-2]
    scaled = dw * (g_fwd[:n] / m_fwd[:n])[:, None]
    prefix = np.zeros(dw.shape[:-2] + (n + 1, dw.shape[-1]))
    np.cumsum(scaled, axis=-2, out=prefix[..., 1:, :])
    states = m_fwd[:, None] * (y0[..., None, :] + prefix)
    states[..., 0, :] = y0  # exact, no roundoff from the m_0 multiply
    return states


def forward_state_at(y0, node, m_fwd, g_fwd, dw):
    """Single forward state at one grid node (used by the resampling loop)."""
    y0 = np.asarray(y0, dtype=float)
    dw = np.asarray(dw, dtype=float)
    if node == 0:
        return y0.copy()
    scaled = dw[..., :node, :] * (g_fwd[:node] / m_fwd[:node])[:, None]
    return m_fwd[node] * (y0 + scaled.sum(axis=-2))


def forward_euler(y0, alpha_fwd, g_fwd, dt, dw):
    """Euler-Maruyama forward path: y <- y (1 - alpha_k dt_k) + g_k dW_k."""
    y0 = np.asarray(y0, dtype=float)
    dw = np.asarray(dw, dtype=float)
    n = dw.shape[-2]
    states = np.empty(dw.shape[:-2] + (n + 1, dw.shape[-1]))
    y = y0.copy()
    states[..., 0, :] = y
    for k in range(n):
        y = y * (1.0 - alpha_fwd[k] * dt[k]) + g_fwd[k] * dw[..., k, :]
        states[..., k + 1, :] = y
    return states


def backward_increments(dw, ybar, dt, g_rev, m_rev, v_rev,
                        cond: ScoreTable, pool: ScoreTable | None,
                        w: float, start: int):
    """Structured backward increments from the forward noise and the score.

    For reverse step k (forward interval [1 - t_{k+1}, 1 - t_k], forward
    increment index N-1-k on a symmetric grid):

        dWbar_k = -dW_{N-1-k} - g(1-t_k) S_w(Ybar_k, 1-t_k) dt_k.

    Rows below ``start`` are NaN.
    """
    dw = np.asarray(dw, dtype=float)
    ybar = np.asarray(ybar, dtype=float)
    n = dw.shape[-2]
    out = np.full_like(dw, np.nan)
    for k in range(start, n):
        s = _guided(ybar[..., k, :], cond, pool, w, m_rev[k], v_rev[k])
        out[..., k, :] = -dw[..., n - 1 - k, :] - g_rev[k] * dt[k] * s
    return out


def _apply_rule(dwk, rule_kind, q, ybar_k, z):
    if rule_kind == RULE_SYNC:
        return dwk
    if rule_kind == RULE_MATRIX:
        return dwk @ q.T
    # reflection across n = (y - z)/||y - z||; identity when states coincide
    nvec = ybar_k - z
    nn = np.sum(nvec * nvec, axis=-1, keepdims=True)
    proj = np.sum(nvec * dwk, axis=-1, keepdims=True)
    safe = nn >= REFLECT_TIE_TOL**2
    with np.errstate(invalid="ignore", divide="ignore"):
        reflected = dwk - nvec * (2.0 * (proj / nn))
    return np.where(safe, reflected, dwk)


def reverse_euler(z0, dwbar, dt, alpha_rev, g_rev, m_rev, v_rev,
                  cond: ScoreTable, pool: ScoreTable | None, w: float,
                  start: int, rule_kind: int = RULE_SYNC,
                  q: np.ndarray | None = None, ybar: np.ndarray | None = None):
    """Reverse-time Euler-Maruyama driven by supplied increments.

        Z_{k+1} = Z_k + [alpha(1-t_k) Z_k + g^2(1-t_k) S_w(Z_k, 1-t_k)] dt_k
                  + g(1-t_k) Q_k dWbar_k,     k = start .. N-1.

    Returns (states, drift_norms); nodes below ``start`` and steps below
    ``start`` are NaN.
    """
    z0 = np.asarray(z0, dtype=float)
    dwbar = np.asarray(dwbar, dtype=float)
    n = dwbar.shape[-2]
    states = np.full(dwbar.shape[:-2] + (n + 1, dwbar.shape[-1]), np.nan)
    drift_norms = np.full(dwbar.shape[:-2] + (n,), np.nan)
    z = z0.copy()
    states[..., start, :] = z
    for k in range(start, n):
        s = _guided(z, cond, pool, w, m_rev[k], v_rev[k])
        b = alpha_rev[k] * z + g_rev[k] ** 2 * s
        drift_norms[..., k] = np.sqrt(np.sum(b * b, axis=-1))
        dwk = dwbar[..., k, :]
        if rule_kind != RULE_SYNC:
            dwk = _apply_rule(dwk, rule_kind, q, ybar[..., k, :], z)
        z = z + b * dt[k] + g_rev[k] * dwk
        states[..., k + 1, :] = z
    return states, drift_norms


def resampling_diff(y0, dw_blocks, m_fwd, g_fwd, dt, alpha_rev, g_rev,
                    m_rev, v_rev, src: ScoreTable, tar: ScoreTable,
                    pool: ScoreTable | None, w_src: float, w_tar: float,
                    start: int):
    """Difference-process editing loop with per-step path resampling.

    Iteration k = start .. N-1 consumes the fresh increment block
    ``dw_blocks[..., k - start, :, :]``:

        Ybar_k = forward state at node N-k from the fresh path,
        Zbar_k = D_k + Ybar_k,
        D_{k+1} = D_k + [b_tar(t_k, Zbar_k) - b_src(t_k, Ybar_k)] dt_k.

    Returns (d_states, y_diag, drift_norms): the difference process on the
    grid nodes, the per-iteration reference states (y_diag[N] is y0 itself,
    exact), and the per-step target drift norms.  With identical
    source/target conditions the bracket is a difference of identical
    floats, so D stays exactly zero.
    """
    y0 = np.asarray(y0, dtype=float)
    dw_blocks = np.asarray(dw_blocks, dtype=float)
    n = len(dt)
    batch = dw_blocks.shape[:-3]
    dim = dw_blocks.shape[-1]
    d_states = np.full(batch + (n + 1, dim), np.nan)
    y_diag = np.full(batch + (n + 1, dim), np.nan)
    drift_norms = np.full(batch + (n,), np.nan)
    d = np.zeros(batch + (dim,))
    d_states[..., start, :] = d
    for k in range(start, n):
        dwk = dw_blocks[..., k - start, :, :]
        y = forward_state_at(y0, n - k, m_fwd, g_fwd, dwk)
        z = d + y
        s_tar = _guided(z, tar, pool, w_tar, m_rev[k], v_rev[k])
        s_src = _guided(y, src, pool, w_src, m_rev[k], v_rev[k])
        b_tar = alpha_rev[k] * z + g_rev[k] ** 2 * s_tar
        b_src = alpha_rev[k] * y + g_rev[k] ** 2 * s_src
        drift_norms[..., k] = np.sqrt(np.sum(b_tar * b_tar, axis=-1))
        d = d + (b_tar - b_src) * dt[k]
        y_diag[..., k, :] = y
        d_states[..., k + 1, :] = d
    y_diag[..., n, :] = y0
    return d_states, y_diag, drift_norms
