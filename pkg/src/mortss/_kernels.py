"""Hot numerical kernels with numba acceleration and a numpy fallback.

The Kalman forward pass, FFBS backward pass and the bootstrap particle
filter dominate runtime inside MCMC loops, so they are compiled with
``numba.njit`` when available.  Setting the environment variable
``MORTSS_NUMBA=0`` (or running without numba installed) selects the pure
numpy path instead; ``benchmarks/bench_kernels.py`` compares the two.

All kernels take a ``numpy.random.Generator`` where randomness is needed;
numba >= 0.57 consumes the same bit stream as numpy, so results on the two
paths agree to floating-point reordering error.

Status codes returned by kernels: 0 = ok, 1 = singular predicted
observation covariance, 2 = FFBS hit a zero predicted state variance,
3 = particle weights collapsed.
"""

from __future__ import annotations

import os

import numpy as np

LN_2PI = float(np.log(2.0 * np.pi))

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via MORTSS_NUMBA=0 instead
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("MORTSS_NUMBA", "1") != "0"


class NumericalError(RuntimeError):
    """Numerical failure inside a filter or sampler (singular matrix, collapse)."""


def _maybe_jit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# Kalman forward pass, scalar state.
#
# Two implementations: a loop kernel with a hand-rolled Cholesky (compiled by
# numba) and a per-step numpy.linalg version.  Both factorize Q_t, add a
# 1e-10 diagonal jitter once on failure, and report the failing step.
# ---------------------------------------------------------------------------


def _kalman_loop(y, alpha, beta, s2e, theta, state_var, m0, C0):
    p, T = y.shape
    a = np.empty(T)
    R = np.empty(T)
    f = np.empty((T, p))
    Q = np.empty((T, p, p))
    v = np.empty((T, p))
    m = np.empty(T)
    C = np.empty(T)
    ll_inc = np.empty(T)

    L = np.empty((p, p))
    qv = np.empty(p)   # Q^{-1} v
    qb = np.empty(p)   # Q^{-1} beta
    tmp = np.empty(p)

    m_prev = m0
    C_prev = C0
    for t in range(T):
        a_t = m_prev + theta
        R_t = C_prev + state_var[t]
        for i in range(p):
            f[t, i] = alpha[i] + beta[i] * a_t
            v[t, i] = y[i, t] - f[t, i]
        for i in range(p):
            for j in range(p):
                Q[t, i, j] = R_t * beta[i] * beta[j]
            Q[t, i, i] += s2e[i]
        # symmetrize (exact here, but shared contract with the vector form)
        for i in range(p):
            for j in range(i):
                s = 0.5 * (Q[t, i, j] + Q[t, j, i])
                Q[t, i, j] = s
                Q[t, j, i] = s

        ok = _chol_inplace(Q[t], L)
        if ok != 0:
            for i in range(p):
                Q[t, i, i] += 1e-10
            ok = _chol_inplace(Q[t], L)
            if ok != 0:
                return a, R, f, Q, v, m, C, ll_inc, 1, t + 1

        logdet = 0.0
        for i in range(p):
            logdet += 2.0 * np.log(L[i, i])
        _chol_solve(L, v[t], qv, tmp)
        _chol_solve(L, beta, qb, tmp)

        vQv = 0.0
        bQv = 0.0
        bQb = 0.0
        for i in range(p):
            vQv += v[t, i] * qv[i]
            bQv += beta[i] * qv[i]
            bQb += beta[i] * qb[i]

        ll_inc[t] = -0.5 * (p * LN_2PI + logdet + vQv)
        m_t = a_t + R_t * bQv
        C_t = R_t - R_t * bQb * R_t
        if C_t < 0.0:
            C_t = 0.0

        a[t] = a_t
        R[t] = R_t
        m[t] = m_t
        C[t] = C_t
        m_prev = m_t
        C_prev = C_t

    return a, R, f, Q, v, m, C, ll_inc, 0, 0


def _chol_inplace_py(A, L):
    """Lower Cholesky factor of A into L; returns 1 on a non-positive pivot."""
    p = A.shape[0]
    for i in range(p):
        s = A[i, i]
        for k in range(i):
            s -= L[i, k] * L[i, k]
        if s <= 0.0:
            return 1
        L[i, i] = np.sqrt(s)
        for j in range(i + 1, p):
            s2 = A[j, i]
            for k in range(i):
                s2 -= L[j, k] * L[i, k]
            L[j, i] = s2 / L[i, i]
    return 0


def _chol_solve_py(L, b, out, tmp):
    """Solve (L L^T) out = b by forward/backward substitution."""
    p = L.shape[0]
    for i in range(p):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * tmp[k]
        tmp[i] = s / L[i, i]
    for i in range(p - 1, -1, -1):
        s = tmp[i]
        for k in range(i + 1, p):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]
    return 0


if USE_NUMBA:
    _chol_inplace = numba.njit(cache=True)(_chol_inplace_py)
    _chol_solve = numba.njit(cache=True)(_chol_solve_py)
    _kalman_numba = numba.njit(cache=True)(_kalman_loop)
else:
    _chol_inplace = _chol_inplace_py
    _chol_solve = _chol_solve_py


def _kalman_numpy(y, alpha, beta, s2e, theta, state_var, m0, C0):
    p, T = y.shape
    a = np.empty(T)
    R = np.empty(T)
    f = np.empty((T, p))
    Q = np.empty((T, p, p))
    v = np.empty((T, p))
    m = np.empty(T)
    C = np.empty(T)
    ll_inc = np.empty(T)

    bb = np.outer(beta, beta)
    Sig = np.diag(s2e)
    m_prev, C_prev = m0, C0
    for t in range(T):
        a[t] = m_prev + theta
        R[t] = C_prev + state_var[t]
        f[t] = alpha + beta * a[t]
        Qt = R[t] * bb + Sig
        Qt = 0.5 * (Qt + Qt.T)
        v[t] = y[:, t] - f[t]
        try:
            L = np.linalg.cholesky(Qt)
        except np.linalg.LinAlgError:
            Qt = Qt + 1e-10 * np.eye(p)
            try:
                L = np.linalg.cholesky(Qt)
            except np.linalg.LinAlgError:
                Q[t] = Qt
                return a, R, f, Q, v, m, C, ll_inc, 1, t + 1
        Q[t] = Qt
        qv = _cho_solve_np(L, v[t])
        qb = _cho_solve_np(L, beta)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        ll_inc[t] = -0.5 * (p * LN_2PI + logdet + v[t] @ qv)
        m[t] = a[t] + R[t] * (beta @ qv)
        C[t] = max(R[t] - R[t] * (beta @ qb) * R[t], 0.0)
        m_prev, C_prev = m[t], C[t]

    return a, R, f, Q, v, m, C, ll_inc, 0, 0


def _cho_solve_np(L, b):
    from scipy.linalg import solve_triangular

    z = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L.T, z, lower=False, check_finite=False)


def kalman_core(y, alpha, beta, s2e, theta, state_var, m0, C0):
    """Dispatch the scalar-state Kalman forward pass to the active path."""
    args = (
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(alpha, dtype=np.float64),
        np.ascontiguousarray(beta, dtype=np.float64),
        np.ascontiguousarray(s2e, dtype=np.float64),
        float(theta),
        np.ascontiguousarray(state_var, dtype=np.float64),
        float(m0),
        float(C0),
    )
    if USE_NUMBA:
        return _kalman_numba(*args)
    return _kalman_numpy(*args)


# ---------------------------------------------------------------------------
# FFBS backward pass and fixed-interval smoother (single source, scalar ops).
# ---------------------------------------------------------------------------


def _ffbs_core(m, C, a, R, m0, C0, rng):
    T = m.shape[0]
    kappa = np.empty(T + 1)
    kappa[T] = m[T - 1] + np.sqrt(C[T - 1]) * rng.standard_normal()
    for t in range(T - 1, -1, -1):
        if t == 0:
            mt, Ct = m0, C0
        else:
            mt, Ct = m[t - 1], C[t - 1]
        Rn = R[t]
        if Rn <= 0.0:
            return kappa, 2, t + 1
        g = Ct / Rn
        h = mt + g * (kappa[t + 1] - a[t])
        H = Ct - g * Ct
        if H < 0.0:
            H = 0.0
        kappa[t] = h + np.sqrt(H) * rng.standard_normal()
    return kappa, 0, 0


def _smoother_core(m, C, a, R, m0, C0):
    T = m.shape[0]
    s = np.empty(T + 1)
    S = np.empty(T + 1)
    s[T] = m[T - 1]
    S[T] = C[T - 1]
    for t in range(T - 1, -1, -1):
        if t == 0:
            mt, Ct = m0, C0
        else:
            mt, Ct = m[t - 1], C[t - 1]
        g = Ct / R[t]
        s[t] = mt + g * (s[t + 1] - a[t])
        S[t] = Ct + g * g * (S[t + 1] - R[t])
        if S[t] < 0.0:
            S[t] = 0.0
    return s, S


ffbs_core = _maybe_jit(_ffbs_core)
smoother_core = _maybe_jit(_smoother_core)


# ---------------------------------------------------------------------------
# Bootstrap particle filter for the log-volatility state of the SV models
# (single source, vectorized over particles inside the time loop).
#
# Weight bookkeeping: carried log normalized weights logW (reset to -ln N at
# a resample) are combined with the incremental log likelihood lg each step;
# the step's contribution to the log marginal likelihood is
# logsumexp(logW + lg), which keeps the estimator unbiased under
# intermittent resampling.
# ---------------------------------------------------------------------------


def _lcsv_bootstrap_core(kappa, theta, lam1, lam2, s2g, gamma0, N,
                         resample_frac, rng):
    T = kappa.shape[0] - 1
    G = np.empty((T, N))
    anc = np.empty((T, N), dtype=np.int64)
    ess_hist = np.empty(T)
    resampled = np.zeros(T, dtype=np.bool_)
    sd_g = np.sqrt(s2g)

    logW = np.full(N, -np.log(N))
    log_marginal = 0.0
    gam = np.empty(N)

    for t in range(1, T + 1):
        if t == 1:
            gam = lam1 * gamma0 + lam2 + sd_g * rng.standard_normal(N)
        else:
            gam = lam1 * gam + lam2 + sd_g * rng.standard_normal(N)
        G[t - 1] = gam

        dk = kappa[t] - kappa[t - 1] - theta
        lg = -0.5 * (LN_2PI + gam + dk * dk * np.exp(-gam))
        lw = logW + lg
        mx = np.max(lw)
        if mx < -700.0 or np.isnan(mx):
            return G, anc, np.exp(logW), log_marginal, ess_hist, resampled, 3, t
        e = np.exp(lw - mx)
        wsum = np.sum(e)
        log_marginal += mx + np.log(wsum)
        logW = lw - (mx + np.log(wsum))
        W = e / wsum
        ess = 1.0 / np.sum(W * W)
        ess_hist[t - 1] = ess

        if ess < resample_frac * N:
            cum = np.cumsum(W)
            cum[N - 1] = 1.0
            u = rng.random(N)
            idx = np.searchsorted(cum, u, side="right")
            anc[t - 1] = idx
            gam = gam[idx]
            logW = np.full(N, -np.log(N))
            resampled[t - 1] = True
        # rows of anc for non-resampled steps stay unwritten (identity map)

    return G, anc, np.exp(logW), log_marginal, ess_hist, resampled, 0, 0


def _reconstruct_paths_core(G, anc, resampled):
    T, N = G.shape
    paths = np.empty((N, T))
    slot = np.arange(N)
    for t in range(T - 1, -1, -1):
        if resampled[t]:
            slot = anc[t][slot]
        paths[:, t] = G[t][slot]
    return paths


lcsv_bootstrap_core = _maybe_jit(_lcsv_bootstrap_core)
reconstruct_paths_core = _maybe_jit(_reconstruct_paths_core)


def warmup():
    """Trigger JIT compilation of every kernel on a tiny problem."""
    y = np.zeros((2, 3))
    alpha = np.zeros(2)
    beta = np.full(2, 0.2)
    s2e = np.full(2, 0.1)
    sv = np.full(3, 0.1)
    out = kalman_core(y, alpha, beta, s2e, -0.1, sv, 0.0, 10.0)
    rng = np.random.default_rng(0)
    ffbs_core(out[5], out[6], out[0], out[1], 0.0, 10.0, rng)
    smoother_core(out[5], out[6], out[0], out[1], 0.0, 10.0)
    res = lcsv_bootstrap_core(np.zeros(4), 0.0, 0.5, 0.0, 0.1, 0.0, 8, 0.8, rng)
    reconstruct_paths_core(res[0], res[1], res[5])
