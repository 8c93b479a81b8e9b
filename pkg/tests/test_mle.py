import numpy as np
import pytest
from oracles import random_lc_instance

from mortss import (
    ConstraintSpec,
    ModelKind,
    StaticParams,
    StoppingRule,
    default_start,
    fit_mle,
    kalman_filter,
    rw_drift_fit,
    score_and_info,
    simulate,
    svd_fit,
)
from mortss.kalman import StateInit
from mortss.mle import _pack, _unpack

INIT = StateInit(0.0, 10.0)


def fd_score(y, params, h_scale=1e-5):
    """Central finite differences of the filter log-likelihood."""
    constraints = ConstraintSpec(alpha_x1=float(params.alpha[0]),
                                 beta_x1=float(params.beta[0]))
    p = params.p
    psi = _pack(params)
    grad = np.empty(len(psi))
    for i in range(len(psi)):
        h = h_scale * max(1.0, abs(psi[i]))
        up, dn = psi.copy(), psi.copy()
        up[i] += h
        dn[i] -= h
        ll_up = kalman_filter(y, _unpack(up, constraints, p), init=INIT).loglik
        ll_dn = kalman_filter(y, _unpack(dn, constraints, p), init=INIT).loglik
        grad[i] = (ll_up - ll_dn) / (2 * h)
    return grad


class TestScoreAndInfo:
    def test_null_sensitivity_when_beta_zero(self):
        # with beta = 0 neither v nor Q depends on theta, so score_theta = 0
        p, T = 3, 8
        params = StaticParams(alpha=np.full(p, -4.0), beta=np.zeros(p), theta=-0.1,
                              sigma2_eps=np.full(p, 0.05), sigma2_omega=0.2)
        rng = np.random.default_rng(0)
        y = rng.normal(-4, 0.3, size=(p, T))
        out = score_and_info(y, params, init=INIT)
        assert out.score[3 * p - 2] == pytest.approx(0.0, abs=1e-12)

    def test_matches_finite_differences(self):
        # variances >= 0.02 keep the second-order truncation error of the
        # stated oracle well below the 1e-4 tolerance
        rng = np.random.default_rng(42)
        for _ in range(6):
            p = int(rng.integers(2, 5))
            T = int(rng.integers(5, 13))
            params, panel, _ = random_lc_instance(rng, p, T, s2e_range=(0.02, 0.1))
            out = score_and_info(panel.y, params, init=INIT)
            fd = fd_score(panel.y, params)
            rel = np.abs(out.score - fd) / np.maximum(1.0, np.abs(fd))
            assert np.max(rel) < 1e-4

    def test_matches_high_order_differences_tightly(self):
        # a 4th-order stencil removes the truncation error and pins the
        # analytic recursion to ~1e-8 even at small variances
        rng = np.random.default_rng(43)
        params, panel, _ = random_lc_instance(rng, 3, 8, s2e_range=(0.005, 0.02))
        out = score_and_info(panel.y, params, init=INIT)
        constraints = ConstraintSpec(alpha_x1=float(params.alpha[0]),
                                     beta_x1=float(params.beta[0]))
        psi = _pack(params)
        for i in range(len(psi)):
            h = 1e-5 * max(1.0, abs(psi[i]))

            def f(d, i=i):
                u = psi.copy()
                u[i] += d
                return kalman_filter(panel.y, _unpack(u, constraints, 3),
                                     init=INIT).loglik

            fd4 = (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)
            assert out.score[i] == pytest.approx(fd4, rel=1e-7, abs=1e-7)

    def test_theta_score_on_two_observation_model(self):
        # p=1, T=2: the joint density is an explicit 2-D Gaussian whose mean
        # is linear in theta, so the derivative is available in closed form
        params = StaticParams(alpha=np.array([-4.0]), beta=np.array([0.3]),
                              theta=-0.2, sigma2_eps=np.array([0.04]),
                              sigma2_omega=0.15)
        y = np.array([[-4.3, -4.5]])
        out = score_and_info(y, params, init=INIT)

        b, s2e, s2w = 0.3, 0.04, 0.15
        C0 = INIT.C0
        mu = params.alpha[0] + b * (INIT.m0 + np.array([1.0, 2.0]) * params.theta)
        K = np.array([[C0 + s2w, C0 + s2w], [C0 + s2w, C0 + 2 * s2w]])
        cov = b * b * K + s2e * np.eye(2)
        dmu = b * np.array([1.0, 2.0])
        expected = dmu @ np.linalg.solve(cov, y[0] - mu)
        # p=1: free vector is (sigma2_eps, theta, sigma2_omega)
        assert out.score[1] == pytest.approx(expected, rel=1e-9)

    def test_info_symmetric_and_positive(self):
        rng = np.random.default_rng(3)
        params, panel, _ = random_lc_instance(rng, 4, 10)
        out = score_and_info(panel.y, params, init=INIT)
        assert np.max(np.abs(out.info - out.info.T)) < 1e-8
        assert np.all(np.linalg.eigvalsh(out.info) > 0)

    def test_requires_per_age_variances(self):
        params = StaticParams(alpha=np.zeros(2), beta=np.full(2, 0.2), theta=0.0,
                              sigma2_eps=0.02, sigma2_omega=0.1)
        with pytest.raises(ValueError, match="per-age"):
            score_and_info(np.zeros((2, 3)), params, init=INIT)


class TestFitMle:
    def test_converged_start_returns_immediately(self):
        rng = np.random.default_rng(10)
        params, panel, _ = random_lc_instance(rng, 3, 40)
        fitted, grad, trace = fit_mle(panel, params,
                                      StoppingRule(grad_tol=1e10, max_iter=50))
        assert len(trace) == 1
        assert np.array_equal(_pack(fitted), _pack(params))

    def test_loglik_trace_non_decreasing(self):
        rng = np.random.default_rng(20)
        params, panel, _ = random_lc_instance(rng, 4, 60)
        start = default_start(panel)
        _, _, trace = fit_mle(panel, start, StoppingRule(grad_tol=1e-4, max_iter=60))
        logliks = [row[1] for row in trace]
        assert all(b >= a - 1e-9 for a, b in zip(logliks, logliks[1:]))

    def test_terminal_gradient_below_tolerance(self):
        rng = np.random.default_rng(21)
        params, panel, _ = random_lc_instance(rng, 3, 80)
        fitted, grad, trace = fit_mle(panel, default_start(panel),
                                      StoppingRule(grad_tol=1e-4, max_iter=200))
        assert np.max(np.abs(grad.score)) < 1e-4

    @pytest.mark.slow
    def test_simulation_recovery(self):
        # p=6, T=120 LC-H data from known psi*: theta within 0.03 and each
        # sigma2_eps within 30 percent, for a majority of 10 seeds
        p, T = 6, 120
        truth = StaticParams(alpha=np.linspace(-7, -2, p), beta=np.full(p, 0.2),
                             theta=-0.1, sigma2_eps=np.linspace(0.01, 0.04, p),
                             sigma2_omega=0.1)
        hits = 0
        for seed in range(10):
            panel, _ = simulate(ModelKind.LC_H, truth, p, T, seed=seed)
            try:
                fitted, _, _ = fit_mle(panel, default_start(panel),
                                       StoppingRule(grad_tol=1e-3, max_iter=150))
            except Exception:
                continue
            ok_theta = abs(fitted.theta - truth.theta) <= 0.03
            ok_s2e = np.all(np.abs(fitted.sigma2_eps / truth.sigma2_eps - 1) <= 0.3)
            hits += ok_theta and ok_s2e
        assert hits >= 6


def power_rank_one(M, iters=5000):
    """Two-sided power iteration for the leading singular triplet."""
    v = np.full(M.shape[1], 1.0 / np.sqrt(M.shape[1]))
    for _ in range(iters):
        u = M @ v
        u /= np.linalg.norm(u)
        v = M.T @ u
        s = np.linalg.norm(v)
        v /= s
    return u, s, v


class TestSvdFit:
    def test_exact_rank_one_input(self):
        p, T = 5, 12
        beta = np.linspace(0.1, 0.3, p)
        kappa = np.linspace(3, -3, T)
        kappa -= kappa.mean()
        y = np.linspace(-6, -2, p)[:, None] + np.outer(beta, kappa)
        alpha, betas, kappas, resid = svd_fit(y, k=1)
        assert np.max(np.abs(resid)) < 1e-10
        assert np.allclose(np.outer(betas[0], kappas[0]), np.outer(beta, kappa),
                           atol=1e-10)

    def test_beta_normalization_and_kappa_centering(self):
        rng = np.random.default_rng(1)
        y = rng.normal(-4, 1, size=(6, 15))
        _, betas, kappas, _ = svd_fit(y, k=3)
        for b, kk in zip(betas, kappas):
            assert np.sum(b) == pytest.approx(1.0, abs=1e-12)
            assert np.sum(kk) == pytest.approx(0.0, abs=1e-10)

    def test_rank_one_truncation_is_best_frobenius_approximation(self):
        rng = np.random.default_rng(2)
        params, panel, _ = random_lc_instance(rng, 5, 20)
        alpha, betas, kappas, resid = svd_fit(panel, k=1)
        detrended = panel.y - alpha[:, None]
        u, s, v = power_rank_one(detrended)
        assert np.allclose(np.outer(betas[0], kappas[0]), s * np.outer(u, v),
                           atol=1e-8)

    def test_k_beyond_rank_rejected(self):
        y = np.outer(np.ones(3), np.arange(4.0))
        with pytest.raises(ValueError, match="rank"):
            svd_fit(y, k=3)


class TestRwDriftFit:
    def test_deterministic_line(self):
        theta, s2 = rw_drift_fit([0.0, 1.0, 2.0, 3.0])
        assert theta == 1.0
        assert s2 == 0.0

    def test_two_increments(self):
        theta, s2 = rw_drift_fit([0.0, 2.0, 2.0])
        assert theta == 1.0
        assert s2 == 2.0

    def test_length_validated(self):
        with pytest.raises(ValueError):
            rw_drift_fit([0.0, 1.0])

    def test_long_random_walk_moment(self):
        rng = np.random.default_rng(4)
        theta_true, s2_true = -0.11, 0.13
        steps = theta_true + np.sqrt(s2_true) * rng.standard_normal(5000)
        kappa = np.concatenate([[0.0], np.cumsum(steps)])
        theta, _ = rw_drift_fit(kappa)
        se = np.sqrt(s2_true / 5000)
        assert abs(theta - theta_true) < 3 * se
