"""Exact filtering, smoothing and backward sampling for the linear-Gaussian models.

The scalar-state recursions cover LC and LC-H directly, and LCSV/LCSV-H
conditional on a log-volatility path (state variance exp(gamma_t) per
step).  A general vector-state filter is provided for the cohort models'
simulation checks.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from ._kernels import NumericalError, ffbs_core, kalman_core, smoother_core
from .data import MortalityPanel
from .models import StaticParams


def _f(x) -> str:
    """Full-precision CSV field for a float-like value."""
    return repr(float(x))


@dataclass(frozen=True)
class StateInit:
    """Prior moments of the initial state kappa_0 ~ N(m0, C0)."""

    m0: float = 0.0
    C0: float = 10.0

    def __post_init__(self):
        if self.C0 <= 0:
            raise ValueError("C0 must be positive")


@dataclass
class FilterOutput:
    """Per-step Kalman quantities for t = 1..T (0-indexed arrays) plus the init.

    a, R : predicted state mean and variance
    f, Q : predicted observation mean (T, p) and covariance (T, p, p)
    v : innovations y_t - f_t, shape (T, p)
    m, C : filtered state mean and variance
    loglik : accumulated marginal log-likelihood
    """

    a: np.ndarray
    R: np.ndarray
    f: np.ndarray
    Q: np.ndarray
    v: np.ndarray
    m: np.ndarray
    C: np.ndarray
    m0: float
    C0: float
    loglik_increments: np.ndarray
    loglik: float = field(init=False)

    def __post_init__(self):
        self.loglik = float(np.sum(self.loglik_increments))

    @property
    def T(self) -> int:
        return len(self.a)

    def to_csv(self) -> str:
        """Debug export: one row per step with scalar state quantities."""
        buf = io.StringIO()
        buf.write("t,a,R,m,C,loglik_increment\n")
        for t in range(self.T):
            buf.write(
                f"{t + 1},{_f(self.a[t])},{_f(self.R[t])},{_f(self.m[t])},"
                f"{_f(self.C[t])},{_f(self.loglik_increments[t])}\n"
            )
        return buf.getvalue()


def _resolve_state_variance(params: StaticParams, state_variance, T: int) -> np.ndarray:
    if state_variance is None:
        if params.sigma2_omega is None:
            raise ValueError("state_variance required when params carry no sigma2_omega")
        state_variance = params.sigma2_omega
    sv = np.asarray(state_variance, dtype=float)
    if sv.ndim == 0:
        sv = np.full(T, float(sv))
    if sv.shape != (T,):
        raise ValueError(f"state_variance must be scalar or length-{T}")
    if np.any(sv < 0):
        raise ValueError("state variances must be non-negative")
    return sv


def kalman_filter(panel, params: StaticParams, init: StateInit | None = None,
                  state_variance=None) -> FilterOutput:
    """Run the forward Kalman recursion and accumulate the log-likelihood.

    Parameters
    ----------
    panel : MortalityPanel or (p, T) array of observations
    params : StaticParams with alpha, beta, theta, sigma2_eps populated
    init : StateInit, default N(0, 10)
    state_variance : overrides params.sigma2_omega; scalar or per-step
        sequence (exp(gamma_t) for the SV models)
    """
    y = panel.y if isinstance(panel, MortalityPanel) else np.asarray(panel, dtype=float)
    if init is None:
        init = StateInit()
    p, T = y.shape
    if params.p != p:
        raise ValueError(f"params are for p={params.p}, panel has p={p}")
    sv = _resolve_state_variance(params, state_variance, T)
    s2e = params.sigma2_eps_vector()

    a, R, f, Q, v, m, C, ll_inc, status, bad_t = kalman_core(
        y, params.alpha, params.beta, s2e, params.theta, sv, init.m0, init.C0
    )
    if status == 1:
        raise NumericalError(f"predicted observation covariance singular at t={bad_t}")
    return FilterOutput(a=a, R=R, f=f, Q=Q, v=v, m=m, C=C,
                        m0=init.m0, C0=init.C0, loglik_increments=ll_inc)


def ffbs_sample(filt: FilterOutput, rng: np.random.Generator) -> np.ndarray:
    """Joint posterior draw of kappa_{0:T} by backward sampling.

    Draws kappa_T ~ N(m_T, C_T), then for t = T-1..0
    kappa_t ~ N(h_t, H_t) with h_t = m_t + C_t R_{t+1}^{-1} (kappa_{t+1} - a_{t+1})
    and H_t = C_t - C_t R_{t+1}^{-1} C_t.
    """
    kappa, status, bad_t = ffbs_core(filt.m, filt.C, filt.a, filt.R,
                                     filt.m0, filt.C0, rng)
    if status == 2:
        raise NumericalError(f"zero predicted state variance R at t={bad_t}")
    return kappa


def smoother_moments(filt: FilterOutput):
    """Marginal smoothing moments (E[kappa_t | y_{1:T}], Var[kappa_t | y_{1:T}]).

    Returns (means, variances), each of length T+1 covering t = 0..T.
    Serves as the deterministic oracle for FFBS draws.
    """
    return smoother_core(filt.m, filt.C, filt.a, filt.R, filt.m0, filt.C0)


def kalman_filter_vector(y, Z, d, F, c, W, sigma2_eps, m0, C0):
    """General vector-state Kalman filter (numpy only; not a hot path).

    Model: x_t = F x_{t-1} + c + u_t with u_t ~ N(0, W);
    y_t = d + Z x_t + e_t with e_t ~ N(0, diag(sigma2_eps)).

    Returns (loglik, filtered_means (T, s), filtered_covs (T, s, s)).
    Used for the cohort-model simulation checks and as an independent
    route for validating the scalar kernels.
    """
    y = np.asarray(y, dtype=float)
    p, T = y.shape
    Z = np.asarray(Z, dtype=float)
    s = Z.shape[1]
    F = np.asarray(F, dtype=float)
    c = np.asarray(c, dtype=float)
    W = np.asarray(W, dtype=float)
    Sig = np.diag(np.broadcast_to(np.asarray(sigma2_eps, dtype=float), (p,)))
    m = np.asarray(m0, dtype=float).reshape(s)
    C = np.asarray(C0, dtype=float).reshape(s, s)

    means = np.empty((T, s))
    covs = np.empty((T, s, s))
    loglik = 0.0
    for t in range(T):
        am = F @ m + c
        Rm = F @ C @ F.T + W
        Rm = 0.5 * (Rm + Rm.T)
        fm = d + Z @ am
        Qm = Z @ Rm @ Z.T + Sig
        Qm = 0.5 * (Qm + Qm.T)
        vt = y[:, t] - fm
        try:
            L = np.linalg.cholesky(Qm)
        except np.linalg.LinAlgError:
            L = np.linalg.cholesky(Qm + 1e-10 * np.eye(p))
        from scipy.linalg import cho_solve

        Qinv_v = cho_solve((L, True), vt)
        Qinv_ZR = cho_solve((L, True), Z @ Rm)
        loglik += -0.5 * (p * np.log(2 * np.pi)
                          + 2 * np.sum(np.log(np.diag(L))) + vt @ Qinv_v)
        m = am + Rm @ Z.T @ Qinv_v
        C = Rm - Rm @ Z.T @ Qinv_ZR
        C = 0.5 * (C + C.T)
        means[t] = m
        covs[t] = C
    return loglik, means, covs
