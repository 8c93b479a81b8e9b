"""Independent brute-force oracles shared across the test suite.

Everything here is built from first principles (explicit joint-Gaussian
algebra, quadrature, exhaustive summation) and stays independent of the
library's recursive implementations.
"""

import numpy as np


def kappa_moments(theta, state_var, m0, C0):
    """Prior mean/covariance of (kappa_0, ..., kappa_T) for the random walk."""
    T = len(state_var)
    t_idx = np.arange(T + 1)
    mean = m0 + t_idx * theta
    cum = np.concatenate([[0.0], np.cumsum(state_var)])
    cov = C0 + cum[np.minimum.outer(t_idx, t_idx)]
    return mean, cov


def joint_gaussian(y_shape, params, m0, C0, state_var):
    """Mean/covariance of the stacked observation vector, time-major order.

    Entry (t, x) sits at index t * p + x for t = 0..T-1.
    """
    p, T = y_shape
    beta = params.beta
    s2e = params.sigma2_eps_vector()
    km, kc = kappa_moments(params.theta, state_var, m0, C0)
    km, kc = km[1:], kc[1:, 1:]
    mean = (params.alpha[None, :] + beta[None, :] * km[:, None]).ravel()
    cov = np.kron(kc, np.outer(beta, beta)) + np.kron(np.eye(T), np.diag(s2e))
    return mean, cov


def gaussian_logpdf(x, mean, cov):
    d = len(x)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    resid = x - mean
    return -0.5 * (d * np.log(2 * np.pi) + logdet + resid @ np.linalg.solve(cov, resid))


def oracle_loglik(y, params, m0, C0, state_var):
    """Marginal log-likelihood via the explicit joint Gaussian of y."""
    mean, cov = joint_gaussian(y.shape, params, m0, C0, state_var)
    return gaussian_logpdf(y.T.ravel(), mean, cov)


def oracle_smoother(y, params, m0, C0, state_var):
    """E[kappa_t | y] and Var[kappa_t | y] for t = 0..T by direct conditioning."""
    p, T = y.shape
    beta = params.beta
    km, kc = kappa_moments(params.theta, state_var, m0, C0)
    ymean, ycov = joint_gaussian(y.shape, params, m0, C0, state_var)
    # Cov(kappa_s, y_(t,x)) = beta_x * Cov(kappa_s, kappa_t)
    cross = np.empty((T + 1, T * p))
    for t in range(T):
        cross[:, t * p:(t + 1) * p] = kc[:, t + 1][:, None] * beta[None, :]
    sol = np.linalg.solve(ycov, (y.T.ravel() - ymean))
    means = km + cross @ sol
    gain = np.linalg.solve(ycov, cross.T)
    variances = np.diag(kc) - np.einsum("st,ts->s", cross, gain)
    return means, variances


def random_lc_instance(rng, p, T, hetero=True, s2e_range=(0.005, 0.05)):
    """Randomized valid LC/LC-H parameters and a simulated panel."""
    from mortss import ModelKind, StaticParams, simulate

    alpha = rng.normal(-4.0, 1.0, size=p)
    beta = rng.uniform(0.05, 0.5, size=p)
    theta = rng.normal(-0.1, 0.1)
    lo, hi = s2e_range
    s2e = rng.uniform(lo, hi, size=p) if hetero else float(rng.uniform(lo, hi))
    s2w = float(rng.uniform(0.02, 0.3))
    params = StaticParams(alpha=alpha, beta=beta, theta=theta,
                          sigma2_eps=s2e, sigma2_omega=s2w)
    kind = ModelKind.LC_H if hetero else ModelKind.LC
    panel, latents = simulate(kind, params, p, T,
                              kappa0=float(rng.normal(0, 1)),
                              seed=int(rng.integers(2 ** 31)))
    return params, panel, latents
