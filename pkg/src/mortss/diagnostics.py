"""Conditional DIC and posterior summaries for chain comparison.

The deviance conditions on the sampled period-effect path as well as the
static parameters: D = -2 * sum of per-cell Gaussian log densities of the
observations.  DIC = 2 * mean deviance - deviance at the posterior mean,
with variance parameters averaged on the variance scale.  The h(y) = 1
convention makes values comparable across chains fitted to the same data
only.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .bayes import ChainOutput
from .models import StaticParams


def _f(x) -> str:
    """Full-precision CSV field for a float-like value."""
    return repr(float(x))


@dataclass(frozen=True)
class DicResult:
    dic: float
    p_d: float
    d_bar: float
    d_at_mean: float

    def to_json(self, model: str = "") -> str:
        return json.dumps({"model": model, "dic": self.dic, "p_d": self.p_d,
                           "d_bar": self.d_bar}, sort_keys=True)


def conditional_loglik(params: StaticParams, kappa, y) -> float:
    """Gaussian log-likelihood of y conditional on the period-effect path.

    kappa covers t = 1..T (no initial state).
    """
    y = np.asarray(y, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    p, T = y.shape
    if len(kappa) != T:
        raise ValueError("kappa must have length T (states for t = 1..T)")
    s2 = params.sigma2_eps_vector()
    if np.any(s2 <= 0):
        raise ValueError("observation variances must be positive")
    resid = y - params.alpha[:, None] - np.outer(params.beta, kappa)
    return float(np.sum(-0.5 * np.log(2 * np.pi) - 0.5 * np.log(s2)[:, None]
                        - 0.5 * resid ** 2 / s2[:, None]))


def dic(chain: ChainOutput, y) -> DicResult:
    """Conditional DIC over the retained draws of a chain."""
    y = np.asarray(y, dtype=float)
    idx = chain.retained()
    if len(idx) == 0:
        raise ValueError("chain has no retained draws")

    dev = np.empty(len(idx))
    for j, ell in enumerate(idx):
        dev[j] = -2.0 * conditional_loglik(chain.params_at(ell), chain.kappa[ell, 1:], y)
    d_bar = float(dev.mean())

    mean_params = StaticParams(
        alpha=chain.alpha[idx].mean(axis=0),
        beta=chain.beta[idx].mean(axis=0),
        theta=float(chain.theta[idx].mean()),
        sigma2_eps=chain.sigma2_eps[idx].mean(axis=0),
    )
    mean_kappa = chain.kappa[idx, 1:].mean(axis=0)
    d_at_mean = -2.0 * conditional_loglik(mean_params, mean_kappa, y)

    return DicResult(dic=2.0 * d_bar - d_at_mean, p_d=d_bar - d_at_mean,
                     d_bar=d_bar, d_at_mean=d_at_mean)


def summarize(chain, include_burnin: bool = False):
    """Posterior summaries: mean, sd and 2.5/50/97.5 percent quantiles.

    Accepts a ChainOutput (returns {parameter: stats dict} over retained
    draws, vector parameters indexed per coordinate) or a bare sample
    array (returns a single stats dict).  Quantiles interpolate linearly
    between order statistics.
    """
    if not isinstance(chain, ChainOutput):
        return _stats(np.asarray(chain, dtype=float))

    idx = chain.retained() if not include_burnin else np.arange(chain.M)
    if len(idx) == 0:
        raise ValueError("chain has no retained draws")
    out = {}
    for name in ("alpha", "beta", "theta", "sigma2_eps", "sigma2_omega",
                 "lambda1", "lambda2", "sigma2_gamma", "gamma0"):
        arr = getattr(chain, name)
        if arr is None:
            continue
        sub = arr[idx]
        if sub.ndim == 1:
            out[name] = _stats(sub)
        else:
            for i in range(sub.shape[1]):
                out[f"{name}_{i}"] = _stats(sub[:, i])
    return out


def _stats(x: np.ndarray) -> dict:
    q025, q500, q975 = np.quantile(x, [0.025, 0.5, 0.975])
    return {"mean": float(x.mean()), "sd": float(x.std(ddof=0)),
            "q025": float(q025), "q500": float(q500), "q975": float(q975)}


def summary_csv(summary: dict) -> str:
    buf = io.StringIO()
    buf.write("parameter,mean,sd,q025,q500,q975\n")
    for name, s in summary.items():
        buf.write(f"{name},{_f(s['mean'])},{_f(s['sd'])},{_f(s['q025'])},"
                  f"{_f(s['q500'])},{_f(s['q975'])}\n")
    return buf.getvalue()
