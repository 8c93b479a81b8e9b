"""Closed-form score/information recursions, Newton MLE, SVD baseline.

The marginal log-likelihood of the heteroscedastic Lee-Carter state-space
model admits exact derivative recursions alongside the Kalman filter.
The free parameter vector is ordered

    psi = (alpha_{x2:xp}, beta_{x2:xp}, sigma2_eps_{x1:xp}, theta, sigma2_omega)

with dimension n = 3p; the constrained coordinates alpha_{x1}, beta_{x1}
are fixed and carry zero partials.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._kernels import NumericalError
from .data import MortalityPanel
from .kalman import StateInit, kalman_filter
from .models import ConstraintSpec, StaticParams


@dataclass
class GradientOutput:
    """Score vector, expected information and per-step derivative states."""

    score: np.ndarray          # (n,)
    info: np.ndarray           # (n, n)
    loglik: float
    dm: np.ndarray             # (T, n) filtered-mean sensitivities
    dC: np.ndarray             # (T, n)
    da: np.ndarray             # (T, n)
    dR: np.ndarray             # (T, n)
    dv: np.ndarray             # (T, n, p)
    dQ: np.ndarray             # (T, n, p, p)


@dataclass(frozen=True)
class StoppingRule:
    grad_tol: float = 1e-4
    max_iter: int = 200
    min_step: float = 1e-8

    def __post_init__(self):
        if self.grad_tol <= 0 or self.max_iter < 1 or self.min_step <= 0:
            raise ValueError("invalid stopping rule")


def _pack(params: StaticParams) -> np.ndarray:
    """Free-parameter vector, Appendix ordering; constrained coords excluded."""
    return np.concatenate([
        params.alpha[1:],
        params.beta[1:],
        params.sigma2_eps_vector(),
        [params.theta, params.sigma2_omega],
    ])


def _unpack(psi: np.ndarray, constraints: ConstraintSpec, p: int) -> StaticParams:
    alpha = np.concatenate([[constraints.alpha_x1], psi[: p - 1]])
    beta = np.concatenate([[constraints.beta_x1], psi[p - 1: 2 * p - 2]])
    s2e = psi[2 * p - 2: 3 * p - 2].copy()
    return StaticParams(alpha=alpha, beta=beta, theta=float(psi[3 * p - 2]),
                        sigma2_eps=s2e, sigma2_omega=float(psi[3 * p - 1]))


def score_and_info(panel, params: StaticParams,
                   init: StateInit | None = None) -> GradientOutput:
    """Exact score and expected-information of the marginal log-likelihood.

    Runs the Kalman filter once and propagates the derivative recursions
    for all n = 3p free parameters simultaneously.  The expectation in the
    cross term of the information matrix is dropped (the observed and
    expected versions are asymptotically equivalent).
    """
    y = panel.y if isinstance(panel, MortalityPanel) else np.asarray(panel, dtype=float)
    p, T = y.shape
    n = 3 * p
    if params.sigma2_omega is None:
        raise ValueError("score recursions require the constant-variance parameterization")
    if np.ndim(params.sigma2_eps) == 0:
        raise ValueError("score recursions use the per-age variance vector (n = 3p)")
    filt = kalman_filter(y, params, init=init)

    beta = params.beta
    # constant differentiation matrices; first-group coordinates are pinned
    dalpha = np.zeros((n, p))
    dbeta = np.zeros((n, p))
    dSig = np.zeros((n, p))
    for i in range(p - 1):
        dalpha[i, i + 1] = 1.0
        dbeta[p - 1 + i, i + 1] = 1.0
    for i in range(p):
        dSig[2 * p - 2 + i, i] = 1.0
    dtheta = np.zeros(n)
    dtheta[3 * p - 2] = 1.0
    ds2w = np.zeros(n)
    ds2w[3 * p - 1] = 1.0
    dSig_embed = np.zeros((n, p, p))
    rows, cols = np.diag_indices(p)
    dSig_embed[:, rows, cols] = dSig

    score = np.zeros(n)
    info = np.zeros((n, n))
    da_s = np.empty((T, n))
    dR_s = np.empty((T, n))
    dm_s = np.empty((T, n))
    dC_s = np.empty((T, n))
    dv_s = np.empty((T, n, p))
    dQ_s = np.empty((T, n, p, p))

    dm = np.zeros(n)
    dC = np.zeros(n)
    for t in range(T):
        a_t, R_t, v_t = filt.a[t], filt.R[t], filt.v[t]
        cf = cho_factor(filt.Q[t], lower=True, check_finite=False)
        qv = cho_solve(cf, v_t, check_finite=False)
        qb = cho_solve(cf, beta, check_finite=False)
        Qinv = cho_solve(cf, np.eye(p), check_finite=False)
        bqv = beta @ qv
        s_bb = beta @ qb

        da = dm + dtheta
        dR = dC + ds2w
        dv = -dalpha - dbeta * a_t - np.outer(da, beta)
        dQ = (np.einsum("ip,q->ipq", dbeta, beta)
              + np.einsum("p,iq->ipq", beta, dbeta)) * R_t
        dQ += dR[:, None, None] * np.outer(beta, beta)
        dQ += dSig_embed

        A = np.einsum("pq,iqr->ipr", Qinv, dQ)
        trA = np.einsum("ipp->i", A)
        vAqv = np.einsum("p,ipq,q->i", v_t, A, qv)
        # true gradient of the log-likelihood (see module tests vs finite
        # differences); the information below is its positive counterpart
        score += -0.5 * (trA - vAqv) - dv @ qv

        info += 0.5 * np.einsum("ipq,jqp->ij", A, A)
        qdv = dv @ Qinv
        info += qdv @ dv.T

        dQqv = np.einsum("ipq,q->ip", dQ, qv)
        dQqb = np.einsum("ipq,q->ip", dQ, qb)
        dm_new = (da + dR * bqv + R_t * (dbeta @ qv)
                  - R_t * (dQqv @ qb) + R_t * (dv @ qb))
        dC_new = (dR * (1.0 - 2.0 * s_bb * R_t)
                  - 2.0 * R_t * R_t * (dbeta @ qb)
                  + R_t * R_t * (dQqb @ qb))

        da_s[t], dR_s[t], dv_s[t], dQ_s[t] = da, dR, dv, dQ
        dm_s[t], dC_s[t] = dm_new, dC_new
        dm, dC = dm_new, dC_new

    info = 0.5 * (info + info.T)
    return GradientOutput(score=score, info=info, loglik=filt.loglik,
                          dm=dm_s, dC=dC_s, da=da_s, dR=dR_s, dv=dv_s, dQ=dQ_s)


def fit_mle(panel, init_params: StaticParams, stopping: StoppingRule | None = None,
            constraints: ConstraintSpec | None = None,
            init: StateInit | None = None):
    """Newton-type maximization of the marginal likelihood.

    Iterates psi <- psi + info^{-1} score with step-halving on any
    log-likelihood decrease.  Variance coordinates are updated on the log
    scale (score and information chain-rule adjusted) so iterates stay in
    the valid region.

    Returns (fitted StaticParams, GradientOutput at the optimum, trace),
    where trace is a list of (iteration, loglik, sup-norm of score) rows.
    """
    if stopping is None:
        stopping = StoppingRule()
    y = panel.y if isinstance(panel, MortalityPanel) else np.asarray(panel, dtype=float)
    p = y.shape[0]
    if constraints is None:
        constraints = ConstraintSpec(alpha_x1=float(init_params.alpha[0]),
                                     beta_x1=float(init_params.beta[0]))
    psi = _pack(constraints.apply(init_params))
    # sigma2_eps block and sigma2_omega; theta sits between them
    var_idx = np.concatenate([np.arange(2 * p - 2, 3 * p - 2), [3 * p - 1]])
    if np.any(psi[var_idx] <= 0):
        raise ValueError("initial variances must be strictly positive")

    grad = score_and_info(y, _unpack(psi, constraints, p), init=init)
    loglik = grad.loglik
    if not np.isfinite(loglik):
        raise NumericalError("non-finite log-likelihood at the starting point")
    trace = [(0, loglik, float(np.max(np.abs(grad.score))))]

    for it in range(1, stopping.max_iter + 1):
        if np.max(np.abs(grad.score)) < stopping.grad_tol:
            break
        jac = np.ones_like(psi)
        jac[var_idx] = psi[var_idx]  # d psi / d log(psi)
        s_w = grad.score * jac
        I_w = grad.info * np.outer(jac, jac)
        # conditioning ridge, analogous to the filter's factorization jitter
        ridge = 1e-10 * max(np.trace(I_w) / len(psi), 1.0)
        try:
            step = np.linalg.solve(I_w + ridge * np.eye(len(psi)), s_w)
        except np.linalg.LinAlgError:
            raise NumericalError(f"information matrix singular at iteration {it}") from None
        if not np.all(np.isfinite(step)):
            raise NumericalError(f"information matrix singular at iteration {it}")
        # scale down oversized proposals; the ascent direction is preserved
        # and the line search still applies
        cap = np.max(np.abs(step))
        if cap > 50.0:
            step *= 50.0 / cap

        is_var = np.zeros(len(psi), dtype=bool)
        is_var[var_idx] = True
        lam = 1.0
        while True:
            cand = np.where(is_var, psi * np.exp(lam * step), psi + lam * step)
            try:
                g_new = score_and_info(y, _unpack(cand, constraints, p), init=init)
                ok = np.isfinite(g_new.loglik) and g_new.loglik >= loglik
            except NumericalError:
                ok = False
            if ok:
                psi, grad, loglik = cand, g_new, g_new.loglik
                break
            lam *= 0.5
            if lam < stopping.min_step:
                raise NumericalError(
                    f"line search exhausted at iteration {it} (no ascent direction)"
                )
        trace.append((it, loglik, float(np.max(np.abs(grad.score)))))

    return _unpack(psi, constraints, p), grad, trace


def svd_fit(panel, k: int = 1):
    """Two-stage SVD baseline: row-mean level plus a rank-k bilinear fit.

    Returns (alpha_hat, betas, kappas, residual) where betas[i] sums to one
    and kappas[i] sums to zero, i = 1..k.
    """
    y = panel.y if isinstance(panel, MortalityPanel) else np.asarray(panel, dtype=float)
    alpha_hat = y.mean(axis=1)
    resid = y - alpha_hat[:, None]
    U, S, Vt = np.linalg.svd(resid, full_matrices=False)
    rank = int(np.sum(S > S[0] * 1e-12)) if S.size and S[0] > 0 else 0
    if not 1 <= k <= max(rank, 1):
        raise ValueError(f"k={k} exceeds the rank {rank} of the de-trended matrix")
    betas, kappas = [], []
    approx = np.zeros_like(resid)
    for i in range(k):
        u, vt, rho = U[:, i], Vt[i], S[i]
        scale = u.sum()
        if abs(scale) < 1e-12:
            raise NumericalError(f"degenerate loading normalization for factor {i + 1}")
        betas.append(u / scale)
        kappas.append(rho * vt * scale)
        approx += rho * np.outer(u, vt)
    return alpha_hat, betas, kappas, resid - approx


def rw_drift_fit(kappa):
    """Moment fit of a random walk with drift: mean and sample variance of the increments."""
    kappa = np.asarray(kappa, dtype=float)
    if len(kappa) < 3:
        raise ValueError("need at least 3 points to fit drift and variance")
    d = np.diff(kappa)
    return float(d.mean()), float(d.var(ddof=1))


def default_start(panel, constraints: ConstraintSpec | None = None) -> StaticParams:
    """Cheap data-driven warm start for fit_mle and the Gibbs samplers.

    alpha from row means; beta, drift and state variance from the first SVD
    factor, rescaled onto the beta_{x1} constraint; observation variances
    from the rank-1 residuals.  Starting beta at the SVD loading rather
    than a flat profile keeps the optimizer out of degenerate local modes.
    """
    from .models import default_constraints

    if constraints is None:
        constraints = default_constraints(panel)
    y = panel.y if isinstance(panel, MortalityPanel) else np.asarray(panel, dtype=float)
    p = y.shape[0]
    alpha_hat, betas, kappas, resid = svd_fit(panel, k=1)
    b = betas[0]
    lead = b[0] if abs(b[0]) > 1e-3 else np.copysign(1e-3, b[0] if b[0] != 0 else 1.0)
    d = lead / constraints.beta_x1
    theta0, s2w0 = rw_drift_fit(kappas[0] * d)
    s2e0 = np.maximum(resid.var(axis=1, ddof=1), 1e-8)
    alpha = alpha_hat.copy()
    alpha[0] = constraints.alpha_x1
    return StaticParams(alpha=alpha, beta=b / d, theta=theta0,
                        sigma2_eps=s2e0, sigma2_omega=max(s2w0, 1e-8))
