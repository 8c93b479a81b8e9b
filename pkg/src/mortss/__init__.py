"""State-space stochastic mortality models.

Exact Kalman/FFBS inference and analytic-gradient MLE for the
linear-Gaussian Lee-Carter variants, PIMH-within-Gibbs for the
stochastic-volatility extensions, posterior-predictive forecasting,
abridged life tables and conditional DIC.
"""

from ._kernels import USE_NUMBA, NumericalError
from .bayes import (
    ChainOutput,
    PriorSpec,
    gibbs_lcsv,
    gibbs_linear,
    pimh_update,
    sample_static_linear,
    sample_static_sv,
)
from .data import (
    AgeGroup,
    DataError,
    MortalityPanel,
    crude_rates,
    default_grouping,
    load_panel,
    log_rates,
)
from .diagnostics import DicResult, conditional_loglik, dic, summarize
from .forecast import ForecastFan, forecast_linear, forecast_sv
from .kalman import (
    FilterOutput,
    StateInit,
    ffbs_sample,
    kalman_filter,
    kalman_filter_vector,
    smoother_moments,
)
from .lifetable import LifeTable, build_table, death_probability, life_expectancy_fan
from .mle import (
    GradientOutput,
    StoppingRule,
    default_start,
    fit_mle,
    rw_drift_fit,
    score_and_info,
    svd_fit,
)
from .models import (
    ConstraintSpec,
    LatentPaths,
    ModelKind,
    StaticParams,
    default_constraints,
    lc_transform,
    simulate,
)
from .smc import (
    ParticleSystem,
    SmcModelHooks,
    bootstrap_filter,
    ess,
    lcsv_filter,
    lcsv_hooks,
    multinomial_resample,
    sample_path,
)

__version__ = "0.1.0"

__all__ = [
    "AgeGroup", "ChainOutput", "ConstraintSpec", "DataError", "DicResult",
    "FilterOutput", "ForecastFan", "GradientOutput", "LatentPaths", "LifeTable",
    "ModelKind", "MortalityPanel", "NumericalError", "ParticleSystem", "PriorSpec",
    "SmcModelHooks", "StateInit", "StaticParams", "StoppingRule", "USE_NUMBA",
    "bootstrap_filter", "build_table", "conditional_loglik", "crude_rates",
    "default_constraints", "default_grouping", "default_start", "death_probability",
    "dic", "ess", "ffbs_sample", "fit_mle", "forecast_linear", "forecast_sv",
    "gibbs_lcsv", "gibbs_linear", "kalman_filter", "kalman_filter_vector",
    "lc_transform", "lcsv_filter", "lcsv_hooks", "life_expectancy_fan",
    "load_panel", "log_rates", "multinomial_resample", "pimh_update",
    "rw_drift_fit", "sample_path", "sample_static_linear", "sample_static_sv",
    "score_and_info", "simulate", "smoother_moments", "summarize", "svd_fit",
]
