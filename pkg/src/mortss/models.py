"""Model catalogue: parameter vectors, identification constraints, simulation.

Seven model kinds are supported.  All can be simulated forward; the
linear-Gaussian kinds (LC, LC_H) and the stochastic-volatility kinds
(LCSV, LCSV_H) can also be estimated.  The remaining kinds (LC2_H,
LC3_H2, LCSV_C) add cohort and observation-volatility factors and are
simulation-only.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .data import AgeGroup, MortalityPanel


class ModelKind(enum.Enum):
    LC = "LC"
    LC_H = "LC_H"
    LC2_H = "LC2_H"
    LC3_H2 = "LC3_H2"
    LCSV = "LCSV"
    LCSV_H = "LCSV_H"
    LCSV_C = "LCSV_C"

    @property
    def supports_estimation(self) -> bool:
        return self in (ModelKind.LC, ModelKind.LC_H, ModelKind.LCSV, ModelKind.LCSV_H)

    @property
    def is_sv(self) -> bool:
        """Stochastic volatility in the period-effect increments."""
        return self in (ModelKind.LCSV, ModelKind.LCSV_H, ModelKind.LCSV_C)

    @property
    def is_hetero(self) -> bool:
        """Age-specific observation variances."""
        return self in (ModelKind.LC_H, ModelKind.LC2_H, ModelKind.LC3_H2, ModelKind.LCSV_H)

    @property
    def has_cohort(self) -> bool:
        return self in (ModelKind.LC2_H, ModelKind.LC3_H2, ModelKind.LCSV_C)

    @property
    def has_obs_volatility(self) -> bool:
        """CIR-type volatility factor scaling the observation noise."""
        return self is ModelKind.LC3_H2

    @classmethod
    def parse(cls, tag: str) -> "ModelKind":
        return cls(tag.strip().upper().replace("-", "_"))


@dataclass
class StaticParams:
    """Static parameter vector; only the fields relevant to a kind are set.

    alpha, beta : length-p age profile and period loadings
    theta : drift of the period effect random walk
    sigma2_eps : observation variance, scalar or length-p vector
    sigma2_omega : period-effect innovation variance (non-SV kinds)
    lambda1, lambda2, sigma2_gamma, gamma0 : log-volatility AR(1) (SV kinds)
    beta2, vartheta, sigma2_omega_zeta : cohort loading and AR(1) (cohort kinds)
    cir_a, cir_b, cir_sigma : observation-volatility factor (LC3_H2)
    """

    alpha: np.ndarray
    beta: np.ndarray
    theta: float
    sigma2_eps: float | np.ndarray
    sigma2_omega: float | None = None
    lambda1: float | None = None
    lambda2: float | None = None
    sigma2_gamma: float | None = None
    gamma0: float | None = None
    beta2: np.ndarray | None = None
    vartheta: float | None = None
    sigma2_omega_zeta: float | None = None
    cir_a: float | None = None
    cir_b: float | None = None
    cir_sigma: float | None = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if np.ndim(self.sigma2_eps) > 0:
            self.sigma2_eps = np.asarray(self.sigma2_eps, dtype=float)
        if self.beta2 is not None:
            self.beta2 = np.asarray(self.beta2, dtype=float)

    @property
    def p(self) -> int:
        return len(self.alpha)

    def sigma2_eps_vector(self) -> np.ndarray:
        """Observation variances broadcast to length p."""
        return np.broadcast_to(np.asarray(self.sigma2_eps, dtype=float), (self.p,)).copy()

    def validate(self, kind: ModelKind) -> None:
        p = self.p
        if self.beta.shape != (p,):
            raise ValueError("alpha and beta must have the same length")
        s2e = np.asarray(self.sigma2_eps, dtype=float)
        if s2e.ndim not in (0, 1) or (s2e.ndim == 1 and s2e.shape != (p,)):
            raise ValueError("sigma2_eps must be a scalar or a length-p vector")
        if np.any(s2e < 0):
            raise ValueError("sigma2_eps must be non-negative")
        if kind.is_sv:
            for name in ("lambda1", "lambda2", "sigma2_gamma", "gamma0"):
                if getattr(self, name) is None:
                    raise ValueError(f"{name} is required for {kind.value}")
            if self.sigma2_gamma < 0:
                raise ValueError("sigma2_gamma must be non-negative")
            if abs(self.lambda1) > 1:
                raise ValueError("|lambda1| must not exceed 1")
        else:
            if self.sigma2_omega is None:
                raise ValueError(f"sigma2_omega is required for {kind.value}")
            if self.sigma2_omega < 0:
                raise ValueError("sigma2_omega must be non-negative")
        if kind.has_cohort:
            for name in ("beta2", "vartheta", "sigma2_omega_zeta"):
                if getattr(self, name) is None:
                    raise ValueError(f"{name} is required for {kind.value}")
            if self.beta2.shape != (p,):
                raise ValueError("beta2 must have length p")
            if abs(self.vartheta) >= 1:
                raise ValueError("|vartheta| must be < 1")
            if self.sigma2_omega_zeta < 0:
                raise ValueError("sigma2_omega_zeta must be non-negative")
        if kind.has_obs_volatility:
            for name in ("cir_a", "cir_b", "cir_sigma"):
                v = getattr(self, name)
                if v is None or v <= 0:
                    raise ValueError(f"{name} must be positive for {kind.value}")
            if 2 * self.cir_a * self.cir_b < self.cir_sigma ** 2:
                raise ValueError(
                    "volatility factor requires 2*a*b >= sigma^2 to stay positive"
                )

    def to_json(self) -> str:
        obj = {}
        for name, v in self.__dict__.items():
            if v is None:
                continue
            obj[name] = v.tolist() if isinstance(v, np.ndarray) else v
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StaticParams":
        obj = json.loads(text)
        for name in ("alpha", "beta", "beta2"):
            if name in obj:
                obj[name] = np.asarray(obj[name], dtype=float)
        if isinstance(obj.get("sigma2_eps"), list):
            obj["sigma2_eps"] = np.asarray(obj["sigma2_eps"], dtype=float)
        return cls(**obj)


@dataclass(frozen=True)
class ConstraintSpec:
    """Identification constraint: fixed values of alpha and beta at the first group."""

    alpha_x1: float
    beta_x1: float = 0.2

    def __post_init__(self):
        if self.beta_x1 == 0:
            raise ValueError("beta_x1 must be non-zero")

    def apply(self, params: StaticParams) -> StaticParams:
        """Return params with the first-group coordinates pinned."""
        alpha = params.alpha.copy()
        beta = params.beta.copy()
        alpha[0] = self.alpha_x1
        beta[0] = self.beta_x1
        out = StaticParams(**{**params.__dict__, "alpha": alpha, "beta": beta})
        return out


@dataclass
class LatentPaths:
    """Latent factor paths produced by simulation or posterior sampling."""

    kappa: np.ndarray                      # length T+1, kappa_{0:T}
    gamma: np.ndarray | None = None        # length T, log-volatility
    zeta: np.ndarray | None = None         # (p, T+1) cohort factors
    gamma_y: np.ndarray | None = None      # length T, observation volatility


def default_constraints(panel: MortalityPanel) -> ConstraintSpec:
    """alpha_x1 = time average of the first group's log rates; beta_x1 = 0.2."""
    if panel.T == 0:
        raise ValueError("panel is empty")
    return ConstraintSpec(alpha_x1=float(np.mean(panel.y[0])), beta_x1=0.2)


def lc_transform(params: StaticParams, kappa, c: float, d: float):
    """Linear reparameterization leaving the model's law invariant.

    Maps (alpha, beta, kappa, theta, sigma2_omega) to
    (alpha + beta*c, beta/d, (kappa - c)*d, theta*d, sigma2_omega*d^2).
    """
    if d == 0:
        raise ValueError("d must be non-zero")
    kappa = np.asarray(kappa, dtype=float)
    new = dict(params.__dict__)
    new["alpha"] = params.alpha + params.beta * c
    new["beta"] = params.beta / d
    new["theta"] = params.theta * d
    if params.sigma2_omega is not None:
        new["sigma2_omega"] = params.sigma2_omega * d * d
    return StaticParams(**new), (kappa - c) * d


def _synthetic_groups(p: int) -> tuple[AgeGroup, ...]:
    return tuple(AgeGroup(i, 1) for i in range(p))


def simulate(kind: ModelKind, params: StaticParams, p: int, T: int,
             kappa0: float = 0.0, seed=None, start_year: int = 1):
    """Exact forward draw of latent paths and observations.

    Returns (MortalityPanel, LatentPaths).  The panel carries synthetic
    one-year age groups starting at 0 and years start_year..start_year+T-1.
    Deterministic given the seed.
    """
    if isinstance(kind, str):
        kind = ModelKind.parse(kind)
    params.validate(kind)
    if params.p != p:
        raise ValueError(f"params are for p={params.p}, requested p={p}")
    rng = np.random.default_rng(seed)
    s2e = params.sigma2_eps_vector()

    # log-volatility of the period effect
    gamma = None
    if kind.is_sv:
        gamma = np.empty(T)
        prev = params.gamma0
        sd_g = np.sqrt(params.sigma2_gamma)
        for t in range(T):
            prev = params.lambda1 * prev + params.lambda2 + sd_g * rng.standard_normal()
            gamma[t] = prev
        step_var = np.exp(gamma)
    else:
        step_var = np.full(T, params.sigma2_omega)

    kappa = np.empty(T + 1)
    kappa[0] = kappa0
    kappa[1:] = kappa0 + np.cumsum(params.theta + np.sqrt(step_var) * rng.standard_normal(T))

    # cohort factor: zeta[i, t] = zeta[i-1, t-1] for i >= 2, AR(1) in row 0
    zeta = None
    if kind.has_cohort:
        zeta = np.zeros((p, T + 1))
        sd_z = np.sqrt(params.sigma2_omega_zeta)
        for t in range(1, T + 1):
            zeta[0, t] = params.vartheta * zeta[0, t - 1] + sd_z * rng.standard_normal()
            zeta[1:, t] = zeta[:-1, t - 1]

    # observation-noise volatility factor (Euler-discretized CIR)
    gamma_y = None
    if kind.has_obs_volatility:
        gamma_y = np.empty(T)
        prev = params.cir_b
        reflected_at = None
        for t in range(T):
            prev = (params.cir_a * (params.cir_b - prev) + prev
                    + params.cir_sigma * np.sqrt(prev) * rng.standard_normal())
            if prev <= 0:
                if reflected_at is None:
                    reflected_at = t + 1
                prev = abs(prev) + 1e-8
            gamma_y[t] = prev
        if reflected_at is not None:
            warnings.warn(
                f"observation-volatility path crossed zero at t={reflected_at}; "
                "reflected to stay positive",
                RuntimeWarning,
            )

    mean = params.alpha[:, None] + params.beta[:, None] * kappa[None, 1:]
    if kind.has_cohort:
        mean = mean + params.beta2[:, None] * zeta[:, 1:]
    noise = np.sqrt(s2e)[:, None] * rng.standard_normal((p, T))
    if kind.has_obs_volatility:
        noise = noise * np.sqrt(gamma_y)[None, :]
    y = mean + noise

    panel = MortalityPanel(_synthetic_groups(p), np.arange(start_year, start_year + T), y)
    return panel, LatentPaths(kappa=kappa, gamma=gamma, zeta=zeta, gamma_y=gamma_y)
