"""Posterior-predictive simulation of log death rates K steps ahead.

Each retained MCMC draw seeds one forecast path: the period effect (and,
for the SV kinds, the log-volatility) is propagated recursively from its
final sampled value, and observations are drawn from the observation
equation.  The optional jump-off correction shifts every path by the gap
between the observed and fitted final-year rates.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .bayes import ChainOutput
from .models import ModelKind


def _f(x) -> str:
    """Full-precision CSV field for a float-like value."""
    return repr(float(x))


@dataclass
class ForecastFan:
    """Per-draw, per-horizon forecast samples of the log-rate vector.

    samples has shape (L, K, p): retained draw, horizon 1..K, age group.
    """

    samples: np.ndarray
    kappa_samples: np.ndarray              # (L, K)
    gamma_samples: np.ndarray | None       # (L, K) for SV chains
    jumpoff_mode: str
    jumpoff_shift: np.ndarray | None       # (L, p) shift applied under "actual"
    groups: list
    years: np.ndarray                      # forecast years, length K

    @property
    def K(self) -> int:
        return self.samples.shape[1]

    @property
    def L(self) -> int:
        return self.samples.shape[0]

    def quantile_table(self):
        """Per (horizon, group): mean and 2.5/50/97.5 percent quantiles."""
        mean = self.samples.mean(axis=0)
        q = np.quantile(self.samples, [0.025, 0.5, 0.975], axis=0)
        return mean, q[0], q[1], q[2]

    def to_csv(self) -> str:
        mean, q025, q500, q975 = self.quantile_table()
        buf = io.StringIO()
        buf.write("horizon,age_group,mean,q025,q500,q975\n")
        for k in range(self.K):
            for x, g in enumerate(self.groups):
                label = g[2] if isinstance(g, (list, tuple)) else g.label
                buf.write(f"{k + 1},{label},{_f(mean[k, x])},{_f(q025[k, x])},"
                          f"{_f(q500[k, x])},{_f(q975[k, x])}\n")
        return buf.getvalue()

    def meta_json(self, chain_id: str = "") -> str:
        return json.dumps({"jumpoff": self.jumpoff_mode, "K": int(self.K),
                           "chain_id": chain_id}, sort_keys=True)


def _retained(chain: ChainOutput, stride: int):
    idx = chain.retained()
    if stride > 1:
        idx = idx[::stride]
    if len(idx) == 0:
        raise ValueError("chain has no retained draws")
    return idx


def _jumpoff_shift(chain, idx, mode, y_last):
    p = chain.alpha.shape[1]
    if mode == "fitted":
        return None
    if mode != "actual":
        raise ValueError("jumpoff must be 'fitted' or 'actual'")
    if y_last is None:
        y_last = chain.meta.get("y_last")
        if y_last is None:
            raise ValueError("jumpoff='actual' needs the observed final-year rates")
    y_last = np.asarray(y_last, dtype=float)
    fitted = chain.alpha[idx] + chain.beta[idx] * chain.kappa[idx, -1][:, None]
    return y_last[None, :] - fitted


def _forecast_years(chain, K):
    years = chain.meta.get("years")
    last = years[-1] if years else 0
    return np.arange(last + 1, last + K + 1)


def forecast_linear(chain: ChainOutput, K: int = 30,
                    rng: np.random.Generator | None = None,
                    jumpoff: str = "fitted", y_last=None,
                    stride: int = 1) -> ForecastFan:
    """Forecast fan for an LC or LC-H chain over horizons 1..K."""
    if chain.kind not in (ModelKind.LC, ModelKind.LC_H):
        raise ValueError("forecast_linear expects an LC or LC-H chain")
    if K < 1:
        raise ValueError("K must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    idx = _retained(chain, stride)
    L = len(idx)
    p = chain.alpha.shape[1]

    alpha = chain.alpha[idx]
    beta = chain.beta[idx]
    theta = chain.theta[idx]
    sd_w = np.sqrt(chain.sigma2_omega[idx])
    sd_e = np.sqrt(chain.sigma2_eps[idx] if chain.sigma2_eps.ndim == 2
                   else chain.sigma2_eps[idx][:, None])
    shift = _jumpoff_shift(chain, idx, jumpoff, y_last)

    kap = chain.kappa[idx, -1].copy()
    samples = np.empty((L, K, p))
    kappas = np.empty((L, K))
    for k in range(K):
        kap = kap + theta + sd_w * rng.standard_normal(L)
        kappas[:, k] = kap
        yk = alpha + beta * kap[:, None] + sd_e * rng.standard_normal((L, p))
        if shift is not None:
            yk = yk + shift
        samples[:, k, :] = yk

    return ForecastFan(samples=samples, kappa_samples=kappas, gamma_samples=None,
                       jumpoff_mode=jumpoff, jumpoff_shift=shift,
                       groups=chain.meta.get("groups", list(range(p))),
                       years=_forecast_years(chain, K))


def forecast_sv(chain: ChainOutput, K: int = 30,
                rng: np.random.Generator | None = None,
                jumpoff: str = "fitted", y_last=None,
                stride: int = 1) -> ForecastFan:
    """Forecast fan for an LCSV or LCSV-H chain over horizons 1..K."""
    if chain.kind not in (ModelKind.LCSV, ModelKind.LCSV_H):
        raise ValueError("forecast_sv expects an LCSV or LCSV-H chain")
    if K < 1:
        raise ValueError("K must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    idx = _retained(chain, stride)
    L = len(idx)
    p = chain.alpha.shape[1]

    alpha = chain.alpha[idx]
    beta = chain.beta[idx]
    theta = chain.theta[idx]
    lam1 = chain.lambda1[idx]
    lam2 = chain.lambda2[idx]
    sd_g = np.sqrt(chain.sigma2_gamma[idx])
    sd_e = np.sqrt(chain.sigma2_eps[idx] if chain.sigma2_eps.ndim == 2
                   else chain.sigma2_eps[idx][:, None])
    shift = _jumpoff_shift(chain, idx, jumpoff, y_last)

    kap = chain.kappa[idx, -1].copy()
    gam = chain.gamma[idx, -1].copy()
    samples = np.empty((L, K, p))
    kappas = np.empty((L, K))
    gammas = np.empty((L, K))
    for k in range(K):
        gam = lam1 * gam + lam2 + sd_g * rng.standard_normal(L)
        gammas[:, k] = gam
        kap = kap + theta + np.exp(0.5 * gam) * rng.standard_normal(L)
        kappas[:, k] = kap
        yk = alpha + beta * kap[:, None] + sd_e * rng.standard_normal((L, p))
        if shift is not None:
            yk = yk + shift
        samples[:, k, :] = yk

    return ForecastFan(samples=samples, kappa_samples=kappas, gamma_samples=gammas,
                       jumpoff_mode=jumpoff, jumpoff_shift=shift,
                       groups=chain.meta.get("groups", list(range(p))),
                       years=_forecast_years(chain, K))
