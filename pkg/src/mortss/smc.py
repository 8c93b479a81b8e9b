"""Bootstrap particle filter with ESS-triggered multinomial resampling.

The filter is generic over a model supplied as three hooks (initial
sampler, transition sampler, incremental log-likelihood) and returns the
weighted path system together with an unbiased estimate of the marginal
likelihood.  The instantiation used by the samplers targets the
log-volatility path of the SV models conditional on a kappa path; that
case is also available through a compiled kernel (`lcsv_filter`).

Weights are handled in log space throughout.  The running log marginal
likelihood accumulates logsumexp(log W_{t-1} + log g_t) each step, where
W_{t-1} are the carried normalized weights (reset to 1/N by a resample);
this is the bookkeeping under which the estimator stays unbiased with
intermittent resampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._kernels import (
    LN_2PI,
    NumericalError,
    lcsv_bootstrap_core,
    reconstruct_paths_core,
)


def _f(x) -> str:
    """Full-precision CSV field for a float-like value."""
    return repr(float(x))


@dataclass
class SmcModelHooks:
    """Model pieces for the bootstrap filter.

    init_sampler(rng, n) -> (n,) states at t=1;
    transition_sampler(rng, states) -> propagated states;
    log_likelihood(t, states, observations) -> (n,) incremental
    log-weights ln pi(obs_t | state_t, obs_{t-1}) for t = 1..T.
    ``observations`` is indexed so that observations[t] is the datum at
    step t; index 0 holds the conditioning anchor (kappa_0).
    """

    init_sampler: Callable
    transition_sampler: Callable
    log_likelihood: Callable


@dataclass
class ParticleSystem:
    """Weighted particle paths and filter diagnostics."""

    paths: np.ndarray              # (N, T)
    weights: np.ndarray            # (N,) normalized terminal weights
    log_marginal: float
    ess_history: np.ndarray        # (T,)
    resample_events: list[int] = field(default_factory=list)

    @property
    def n_particles(self) -> int:
        return self.paths.shape[0]

    @property
    def T(self) -> int:
        return self.paths.shape[1]

    def ess_csv(self) -> str:
        lines = ["t,ess,resampled"]
        events = set(self.resample_events)
        for t in range(1, self.T + 1):
            lines.append(f"{t},{_f(self.ess_history[t - 1])},{int(t in events)}")
        return "\n".join(lines) + "\n"


def ess(weights) -> float:
    """Effective sample size 1 / sum(w_i^2) of normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def multinomial_resample(weights, rng: np.random.Generator) -> np.ndarray:
    """N i.i.d. categorical draws from the normalized weights."""
    w = np.asarray(weights, dtype=float)
    cum = np.cumsum(w)
    cum[-1] = 1.0
    return np.searchsorted(cum, rng.random(len(w)), side="right")


def sample_path(system: ParticleSystem, rng: np.random.Generator) -> np.ndarray:
    """Draw one path from the weighted empirical measure at time T."""
    cum = np.cumsum(system.weights)
    cum[-1] = 1.0
    i = int(np.searchsorted(cum, rng.random(), side="right"))
    return system.paths[i].copy()


def bootstrap_filter(hooks: SmcModelHooks, observations, n_particles: int,
                     resample_frac: float = 0.8,
                     rng: np.random.Generator | None = None) -> ParticleSystem:
    """Run the bootstrap filter for observations indexed 1..T.

    Propagates from the transition sampler, weights by the incremental
    likelihood, and resamples multinomially whenever ESS < resample_frac * N
    (weights reset to 1/N).
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    if not 0 < resample_frac <= 1:
        raise ValueError("resample_frac must be in (0, 1]")
    if rng is None:
        rng = np.random.default_rng()
    obs = np.asarray(observations, dtype=float)
    T = len(obs) - 1
    if T < 1:
        raise ValueError("observations must cover at least one step beyond the anchor")
    N = n_particles

    paths = np.empty((N, T))
    logW = np.full(N, -np.log(N))
    log_marginal = 0.0
    ess_hist = np.empty(T)
    events: list[int] = []

    states = None
    for t in range(1, T + 1):
        states = (hooks.init_sampler(rng, N) if t == 1
                  else hooks.transition_sampler(rng, states))
        paths[:, t - 1] = states

        lg = np.asarray(hooks.log_likelihood(t, states, obs), dtype=float)
        lw = logW + lg
        mx = np.max(lw)
        if not np.isfinite(mx) or mx < -700.0:
            raise NumericalError(f"particle weights collapsed at t={t}")
        e = np.exp(lw - mx)
        wsum = np.sum(e)
        log_marginal += mx + np.log(wsum)
        logW = lw - (mx + np.log(wsum))
        W = e / wsum
        ess_hist[t - 1] = 1.0 / np.sum(W * W)

        if ess_hist[t - 1] < resample_frac * N:
            idx = multinomial_resample(W, rng)
            paths[:, :t] = paths[idx, :t]
            states = states[idx]
            logW = np.full(N, -np.log(N))
            events.append(t)

    return ParticleSystem(paths=paths, weights=np.exp(logW),
                          log_marginal=float(log_marginal),
                          ess_history=ess_hist, resample_events=events)


def lcsv_hooks(theta: float, lambda1: float, lambda2: float,
               sigma2_gamma: float, gamma0: float) -> SmcModelHooks:
    """Hooks targeting the log-volatility path given a kappa path.

    The bootstrap proposal is the AR(1) transition of the log-volatility;
    the incremental weight is the Gaussian density of the kappa increment
    under variance exp(gamma_t).
    """
    sd = np.sqrt(sigma2_gamma)

    def init_sampler(rng, n):
        return lambda1 * gamma0 + lambda2 + sd * rng.standard_normal(n)

    def transition_sampler(rng, states):
        return lambda1 * states + lambda2 + sd * rng.standard_normal(len(states))

    def log_likelihood(t, states, obs):
        dk = obs[t] - obs[t - 1] - theta
        return -0.5 * (LN_2PI + states + dk * dk * np.exp(-states))

    return SmcModelHooks(init_sampler, transition_sampler, log_likelihood)


def lcsv_filter(kappa, theta: float, lambda1: float, lambda2: float,
                sigma2_gamma: float, gamma0: float, n_particles: int,
                resample_frac: float = 0.8,
                rng: np.random.Generator | None = None) -> ParticleSystem:
    """Compiled-kernel version of bootstrap_filter(lcsv_hooks(...), kappa, ...).

    Identical algorithm and RNG consumption; used on the hot path of the
    SV samplers.
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    if rng is None:
        rng = np.random.default_rng()
    kappa = np.ascontiguousarray(kappa, dtype=np.float64)
    G, anc, W, log_marginal, ess_hist, resampled, status, bad_t = lcsv_bootstrap_core(
        kappa, float(theta), float(lambda1), float(lambda2),
        float(sigma2_gamma), float(gamma0), int(n_particles),
        float(resample_frac), rng,
    )
    if status == 3:
        raise NumericalError(f"particle weights collapsed at t={bad_t}")
    paths = reconstruct_paths_core(G, anc, resampled)
    events = [int(t) + 1 for t in np.nonzero(resampled)[0]]
    return ParticleSystem(paths=paths, weights=W, log_marginal=float(log_marginal),
                          ess_history=ess_hist, resample_events=events)
