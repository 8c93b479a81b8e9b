import numpy as np
import pytest

from mortss import (
    ChainOutput,
    ModelKind,
    StaticParams,
    conditional_loglik,
    dic,
    lc_transform,
    summarize,
)
from mortss.diagnostics import summary_csv

LN_2PI = np.log(2 * np.pi)


def naive_loglik(params, kappa, y):
    """Cell-by-cell recomputation with scalar arithmetic only."""
    p, T = y.shape
    s2 = params.sigma2_eps_vector()
    total = 0.0
    for x in range(p):
        for t in range(T):
            mean = params.alpha[x] + params.beta[x] * kappa[t]
            total += (-0.5 * LN_2PI - 0.5 * np.log(s2[x])
                      - 0.5 * (y[x, t] - mean) ** 2 / s2[x])
    return total


class TestConditionalLoglik:
    def test_perfect_fit_unit_variance(self):
        p, T = 3, 4
        params = StaticParams(alpha=np.linspace(-5, -3, p), beta=np.full(p, 0.2),
                              theta=0.0, sigma2_eps=1.0, sigma2_omega=0.1)
        kappa = np.linspace(1, -1, T)
        y = params.alpha[:, None] + np.outer(params.beta, kappa)
        assert conditional_loglik(params, kappa, y) == pytest.approx(
            -(p * T / 2) * LN_2PI, abs=1e-12)

    def test_single_cell(self):
        params = StaticParams(alpha=np.array([-4.0]), beta=np.array([0.2]),
                              theta=0.0, sigma2_eps=1.0, sigma2_omega=0.1)
        y = np.array([[-4.0]])
        assert conditional_loglik(params, np.zeros(1), y) == pytest.approx(
            -0.5 * LN_2PI, abs=1e-14)

    def test_matches_naive_summation(self):
        rng = np.random.default_rng(0)
        p, T = 4, 7
        params = StaticParams(alpha=rng.normal(-4, 1, p), beta=rng.uniform(0.1, 0.4, p),
                              theta=-0.1, sigma2_eps=rng.uniform(0.01, 0.1, p),
                              sigma2_omega=0.1)
        kappa = rng.normal(0, 1, T)
        y = rng.normal(-4, 1, size=(p, T))
        assert conditional_loglik(params, kappa, y) == pytest.approx(
            naive_loglik(params, kappa, y), abs=1e-10)

    def test_invariant_under_lc_transform(self):
        rng = np.random.default_rng(1)
        p, T = 3, 5
        params = StaticParams(alpha=rng.normal(-4, 1, p), beta=rng.uniform(0.1, 0.4, p),
                              theta=-0.1, sigma2_eps=0.05, sigma2_omega=0.1)
        kappa = rng.normal(0, 1, T + 1)
        y = rng.normal(-4, 1, size=(p, T))
        base = conditional_loglik(params, kappa[1:], y)
        for c, d in [(0.5, 2.0), (-1.0, 0.3), (2.0, -1.5)]:
            new_params, new_kappa = lc_transform(params, kappa, c, d)
            assert conditional_loglik(new_params, new_kappa[1:], y) == pytest.approx(
                base, abs=1e-10)

    def test_nonpositive_sigma_rejected(self):
        params = StaticParams(alpha=np.zeros(1), beta=np.ones(1), theta=0.0,
                              sigma2_eps=0.0, sigma2_omega=0.1)
        with pytest.raises(ValueError):
            conditional_loglik(params, np.zeros(2), np.zeros((1, 2)))


def tiny_chain(alpha_rows, beta_rows, theta_vals, s2e_vals, kappa_rows,
               burnin=0):
    M = len(theta_vals)
    meta = {"burnin": burnin}
    return ChainOutput(kind=ModelKind.LC, alpha=np.asarray(alpha_rows, dtype=float),
                       beta=np.asarray(beta_rows, dtype=float),
                       theta=np.asarray(theta_vals, dtype=float),
                       sigma2_eps=np.asarray(s2e_vals, dtype=float),
                       sigma2_omega=np.ones(M),
                       kappa=np.asarray(kappa_rows, dtype=float), meta=meta)


class TestDic:
    def test_degenerate_chain_has_zero_effective_dimension(self):
        y = np.array([[-4.1, -4.3]])
        chain = tiny_chain([[-4.0]] * 3, [[0.2]] * 3, [0.0] * 3, [0.05] * 3,
                           [[0.0, 0.1, 0.2]] * 3)
        out = dic(chain, y)
        assert out.p_d == pytest.approx(0.0, abs=1e-10)
        assert out.dic == pytest.approx(out.d_bar, abs=1e-10)

    def test_two_draw_hand_computation(self):
        y = np.array([[-4.0, -4.5]])
        chain = tiny_chain(alpha_rows=[[-4.0], [-4.2]], beta_rows=[[0.2], [0.3]],
                           theta_vals=[0.0, 0.0], s2e_vals=[0.04, 0.09],
                           kappa_rows=[[0.0, 0.5, -0.5], [0.0, -1.0, 1.0]])

        def dev(alpha, beta, s2, k1, k2):
            ll = 0.0
            for yv, kv in zip(y[0], (k1, k2)):
                ll += (-0.5 * LN_2PI - 0.5 * np.log(s2)
                       - 0.5 * (yv - alpha - beta * kv) ** 2 / s2)
            return -2.0 * ll

        d1 = dev(-4.0, 0.2, 0.04, 0.5, -0.5)
        d2 = dev(-4.2, 0.3, 0.09, -1.0, 1.0)
        d_bar = 0.5 * (d1 + d2)
        d_mean = dev(-4.1, 0.25, 0.065, -0.25, 0.25)
        out = dic(chain, y)
        assert out.d_bar == pytest.approx(d_bar, abs=1e-10)
        assert out.d_at_mean == pytest.approx(d_mean, abs=1e-10)
        assert out.dic == pytest.approx(2 * d_bar - d_mean, abs=1e-10)
        assert out.p_d == pytest.approx(d_bar - d_mean, abs=1e-10)

    def test_identity_holds_on_random_chain(self):
        rng = np.random.default_rng(5)
        M, p, T = 40, 3, 6
        y = rng.normal(-4, 0.5, size=(p, T))
        chain = tiny_chain(rng.normal(-4, 0.2, (M, p)), rng.uniform(0.1, 0.4, (M, p)),
                           rng.normal(0, 0.1, M), rng.uniform(0.01, 0.1, M),
                           rng.normal(0, 1, (M, T + 1)), burnin=10)
        out = dic(chain, y)
        assert out.dic == pytest.approx(2 * out.d_bar - out.d_at_mean, abs=1e-10)

    def test_respects_burnin(self):
        y = np.array([[-4.1, -4.3]])
        good = [[-4.0], [0.2]]
        chain = tiny_chain([[0.0], [-4.0], [-4.0]], [[0.2]] * 3, [0.0] * 3,
                           [0.05] * 3, [[0.0, 0.1, 0.2]] * 3, burnin=1)
        out = dic(chain, y)
        # the wild alpha draw sits in the burn-in and must not contaminate
        chain_clean = tiny_chain([[-4.0]] * 2, [[0.2]] * 2, [0.0] * 2,
                                 [0.05] * 2, [[0.0, 0.1, 0.2]] * 2)
        assert out.dic == pytest.approx(dic(chain_clean, y).dic, abs=1e-10)


class TestSummarize:
    def test_constant_chain(self):
        s = summarize(np.full(200, 3.5))
        assert s["mean"] == 3.5
        assert s["sd"] == 0.0
        assert s["q025"] == s["q500"] == s["q975"] == 3.5

    def test_interpolated_quantiles(self):
        s = summarize(np.arange(1.0, 101.0))
        assert s["q500"] == pytest.approx(50.5)
        assert s["q025"] == pytest.approx(3.475)
        assert s["q975"] == pytest.approx(97.525)

    def test_symmetric_chain(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(200_001)
        s = summarize(x)
        assert abs(s["mean"] - s["q500"]) < 0.01

    def test_quantiles_monotone(self):
        rng = np.random.default_rng(1)
        s = summarize(rng.exponential(2.0, 5000))
        assert s["q025"] <= s["q500"] <= s["q975"]

    def test_chain_output_table(self):
        chain = tiny_chain([[-4.0, -3.0]] * 5, [[0.2, 0.3]] * 5,
                           [0.1, 0.2, 0.3, 0.4, 0.5], [0.05] * 5,
                           [[0.0, 0.1]] * 5, burnin=1)
        table = summarize(chain)
        assert table["theta"]["mean"] == pytest.approx(np.mean([0.2, 0.3, 0.4, 0.5]))
        assert "alpha_0" in table and "beta_1" in table
        csv = summary_csv(table)
        assert csv.startswith("parameter,mean,sd,q025,q500,q975\n")
