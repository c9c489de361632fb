# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled single-trajectory kernels.

Mirrors `sdesync._kernels_py` for unbatched inputs; the import-time backend
selector prefers these loops for per-trajectory work.  All schedule
coefficients arrive as precomputed per-node tables, so the kernels are
schedule-agnostic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, M_PI, NAN

cnp.import_array()

RULE_SYNC = 0
RULE_REFLECT = 1
RULE_MATRIX = 2

cdef double TIE_TOL2 = 1e-24  # squared reflection tie tolerance (1e-12)^2


cdef void _mix_score(const double* x, int d, int K,
                     const double* logw, const double* means,
                     const double* sig2, double m, double v,
                     double* logp, double* out) noexcept nogil:
    """Score of the time-t mixture marginal at one point."""
    cdef int i, j
    cdef double var, sq, diff, mx, rsum, r_over_var
    for i in range(K):
        var = m * m * sig2[i] + v
        sq = 0.0
        for j in range(d):
            diff = x[j] - m * means[i * d + j]
            sq += diff * diff
        logp[i] = logw[i] - 0.5 * (sq / var + d * log(2.0 * M_PI * var))
    mx = logp[0]
    for i in range(1, K):
        if logp[i] > mx:
            mx = logp[i]
    rsum = 0.0
    for i in range(K):
        logp[i] = exp(logp[i] - mx)
        rsum += logp[i]
    for j in range(d):
        out[j] = 0.0
    for i in range(K):
        var = m * m * sig2[i] + v
        r_over_var = (logp[i] / rsum) / var
        for j in range(d):
            out[j] -= r_over_var * (x[j] - m * means[i * d + j])


cdef void _guided_score(const double* x, int d,
                        int Kc, const double* c_logw, const double* c_means, const double* c_sig2,
                        int Kp, const double* p_logw, const double* p_means, const double* p_sig2,
                        double w, double m, double v,
                        double* logp, double* tmp, double* out) noexcept nogil:
    cdef int j
    if w == 1.0 or Kp == 0:
        _mix_score(x, d, Kc, c_logw, c_means, c_sig2, m, v, logp, out)
        return
    _mix_score(x, d, Kc, c_logw, c_means, c_sig2, m, v, logp, out)
    _mix_score(x, d, Kp, p_logw, p_means, p_sig2, m, v, logp, tmp)
    for j in range(d):
        out[j] = tmp[j] + w * (out[j] - tmp[j])


def forward_closed_form(const double[::1] y0, const double[::1] m_fwd,
                        const double[::1] g_fwd, const double[:, ::1] dw):
    cdef int n = dw.shape[0], d = dw.shape[1]
    cdef cnp.ndarray[double, ndim=2] states = np.empty((n + 1, d))
    cdef double[:, ::1] s = states
    cdef double[::1] acc = np.zeros(d)
    cdef int k, j
    cdef double gm
    for j in range(d):
        s[0, j] = y0[j]
    for k in range(n):
        gm = g_fwd[k] / m_fwd[k]
        for j in range(d):
            acc[j] = acc[j] + gm * dw[k, j]
            s[k + 1, j] = m_fwd[k + 1] * (y0[j] + acc[j])
    return states


def forward_state_at(const double[::1] y0, int node, const double[::1] m_fwd,
                     const double[::1] g_fwd, const double[:, ::1] dw):
    cdef int d = dw.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(d)
    cdef double[::1] o = out
    cdef double[::1] acc = np.zeros(d)
    cdef int k, j
    cdef double gm
    for k in range(node):
        gm = g_fwd[k] / m_fwd[k]
        for j in range(d):
            acc[j] = acc[j] + gm * dw[k, j]
    if node == 0:
        for j in range(d):
            o[j] = y0[j]
    else:
        for j in range(d):
            o[j] = m_fwd[node] * (y0[j] + acc[j])
    return out


def forward_euler(const double[::1] y0, const double[::1] alpha_fwd,
                  const double[::1] g_fwd, const double[::1] dt,
                  const double[:, ::1] dw):
    cdef int n = dw.shape[0], d = dw.shape[1]
    cdef cnp.ndarray[double, ndim=2] states = np.empty((n + 1, d))
    cdef double[:, ::1] s = states
    cdef int k, j
    for j in range(d):
        s[0, j] = y0[j]
    for k in range(n):
        for j in range(d):
            s[k + 1, j] = s[k, j] * (1.0 - alpha_fwd[k] * dt[k]) + g_fwd[k] * dw[k, j]
    return states


def backward_increments(const double[:, ::1] dw, const double[:, ::1] ybar,
                        const double[::1] dt, const double[::1] g_rev,
                        const double[::1] m_rev, const double[::1] v_rev,
                        const double[::1] c_logw, const double[:, ::1] c_means,
                        const double[::1] c_sig2,
                        const double[::1] p_logw, const double[:, ::1] p_means,
                        const double[::1] p_sig2, int use_pool,
                        double w, int start):
    cdef int n = dw.shape[0], d = dw.shape[1]
    cdef int Kc = c_sig2.shape[0]
    cdef int Kp = p_sig2.shape[0] if use_pool else 0
    cdef cnp.ndarray[double, ndim=2] out = np.full((n, d), np.nan)
    cdef double[:, ::1] o = out
    cdef double[::1] logp = np.empty(max(Kc, Kp, 1))
    cdef double[::1] tmp = np.empty(d)
    cdef double[::1] sc = np.empty(d)
    cdef int k, j
    for k in range(start, n):
        _guided_score(&ybar[k, 0], d, Kc, &c_logw[0], &c_means[0, 0], &c_sig2[0],
                      Kp, &p_logw[0], &p_means[0, 0], &p_sig2[0],
                      w, m_rev[k], v_rev[k], &logp[0], &tmp[0], &sc[0])
        for j in range(d):
            o[k, j] = -dw[n - 1 - k, j] - g_rev[k] * dt[k] * sc[j]
    return out


def reverse_euler(const double[::1] z0, const double[:, ::1] dwbar,
                  const double[::1] dt, const double[::1] alpha_rev,
                  const double[::1] g_rev, const double[::1] m_rev,
                  const double[::1] v_rev,
                  const double[::1] c_logw, const double[:, ::1] c_means,
                  const double[::1] c_sig2,
                  const double[::1] p_logw, const double[:, ::1] p_means,
                  const double[::1] p_sig2, int use_pool,
                  double w, int start, int rule_kind,
                  const double[:, ::1] q, const double[:, ::1] ybar):
    cdef int n = dwbar.shape[0], d = dwbar.shape[1]
    cdef int Kc = c_sig2.shape[0]
    cdef int Kp = p_sig2.shape[0] if use_pool else 0
    cdef cnp.ndarray[double, ndim=2] states = np.full((n + 1, d), np.nan)
    cdef cnp.ndarray[double, ndim=1] drift_norms = np.full(n, np.nan)
    cdef double[:, ::1] s = states
    cdef double[::1] dn = drift_norms
    cdef double[::1] logp = np.empty(max(Kc, Kp, 1))
    cdef double[::1] tmp = np.empty(d)
    cdef double[::1] sc = np.empty(d)
    cdef double[::1] z = np.empty(d)
    cdef double[::1] b = np.empty(d)
    cdef double[::1] dwu = np.empty(d)
    cdef int k, j, i
    cdef double g2, nrm, nn, proj, factor, nvj
    for j in range(d):
        z[j] = z0[j]
        s[start, j] = z[j]
    for k in range(start, n):
        _guided_score(&z[0], d, Kc, &c_logw[0], &c_means[0, 0], &c_sig2[0],
                      Kp, &p_logw[0], &p_means[0, 0], &p_sig2[0],
                      w, m_rev[k], v_rev[k], &logp[0], &tmp[0], &sc[0])
        g2 = g_rev[k] * g_rev[k]
        nrm = 0.0
        for j in range(d):
            b[j] = alpha_rev[k] * z[j] + g2 * sc[j]
            nrm += b[j] * b[j]
        dn[k] = sqrt(nrm)
        if rule_kind == RULE_SYNC:
            for j in range(d):
                dwu[j] = dwbar[k, j]
        elif rule_kind == RULE_MATRIX:
            for i in range(d):
                nrm = 0.0
                for j in range(d):
                    nrm += q[i, j] * dwbar[k, j]
                dwu[i] = nrm
        else:  # reflection, identity fallback at coincident states
            nn = 0.0
            proj = 0.0
            for j in range(d):
                nvj = ybar[k, j] - z[j]
                nn += nvj * nvj
                proj += nvj * dwbar[k, j]
            if nn >= TIE_TOL2:
                factor = 2.0 * (proj / nn)
                for j in range(d):
                    dwu[j] = dwbar[k, j] - (ybar[k, j] - z[j]) * factor
            else:
                for j in range(d):
                    dwu[j] = dwbar[k, j]
        for j in range(d):
            z[j] = z[j] + b[j] * dt[k] + g_rev[k] * dwu[j]
            s[k + 1, j] = z[j]
    return states, drift_norms


def resampling_diff(const double[::1] y0, const double[:, :, ::1] dw_blocks,
                    const double[::1] m_fwd, const double[::1] g_fwd,
                    const double[::1] dt, const double[::1] alpha_rev,
                    const double[::1] g_rev, const double[::1] m_rev,
                    const double[::1] v_rev,
                    const double[::1] s_logw, const double[:, ::1] s_means,
                    const double[::1] s_sig2,
                    const double[::1] t_logw, const double[:, ::1] t_means,
                    const double[::1] t_sig2,
                    const double[::1] p_logw, const double[:, ::1] p_means,
                    const double[::1] p_sig2, int use_pool,
                    double w_src, double w_tar, int start):
    cdef int n = dt.shape[0], d = dw_blocks.shape[2]
    cdef int Ks = s_sig2.shape[0], Kt = t_sig2.shape[0]
    cdef int Kp = p_sig2.shape[0] if use_pool else 0
    cdef cnp.ndarray[double, ndim=2] d_states = np.full((n + 1, d), np.nan)
    cdef cnp.ndarray[double, ndim=2] y_diag = np.full((n + 1, d), np.nan)
    cdef cnp.ndarray[double, ndim=1] drift_norms = np.full(n, np.nan)
    cdef double[:, ::1] ds = d_states
    cdef double[:, ::1] yd = y_diag
    cdef double[::1] dn = drift_norms
    cdef double[::1] logp = np.empty(max(Ks, Kt, Kp, 1))
    cdef double[::1] tmp = np.empty(d)
    cdef double[::1] sc_t = np.empty(d)
    cdef double[::1] sc_s = np.empty(d)
    cdef double[::1] dvec = np.zeros(d)
    cdef double[::1] y = np.empty(d)
    cdef double[::1] z = np.empty(d)
    cdef int k, j, i, node
    cdef double gm, g2, bt, bs, nrm
    for j in range(d):
        ds[start, j] = 0.0
        yd[n, j] = y0[j]
    for k in range(start, n):
        node = n - k
        for j in range(d):
            y[j] = 0.0
        for i in range(node):
            gm = g_fwd[i] / m_fwd[i]
            for j in range(d):
                y[j] = y[j] + gm * dw_blocks[k - start, i, j]
        for j in range(d):
            y[j] = m_fwd[node] * (y0[j] + y[j])
            z[j] = dvec[j] + y[j]
            yd[k, j] = y[j]
        _guided_score(&z[0], d, Kt, &t_logw[0], &t_means[0, 0], &t_sig2[0],
                      Kp, &p_logw[0], &p_means[0, 0], &p_sig2[0],
                      w_tar, m_rev[k], v_rev[k], &logp[0], &tmp[0], &sc_t[0])
        _guided_score(&y[0], d, Ks, &s_logw[0], &s_means[0, 0], &s_sig2[0],
                      Kp, &p_logw[0], &p_means[0, 0], &p_sig2[0],
                      w_src, m_rev[k], v_rev[k], &logp[0], &tmp[0], &sc_s[0])
        g2 = g_rev[k] * g_rev[k]
        nrm = 0.0
        for j in range(d):
            bt = alpha_rev[k] * z[j] + g2 * sc_t[j]
            bs = alpha_rev[k] * y[j] + g2 * sc_s[j]
            nrm += bt * bt
            dvec[j] = dvec[j] + (bt - bs) * dt[k]
            ds[k + 1, j] = dvec[j]
        dn[k] = sqrt(nrm)
    return d_states, y_diag, drift_norms
