"""Cusp-location estimation for small-noise diffusions.

Simulates dX = (a|X - theta|^kappa + h(X)) dt + eps dW, computes the
maximum-likelihood, Bayesian and minimum-distance estimators of the cusp
location theta, samples the fractional-Brownian limit law of the rescaled
errors, and verifies the rate and limit-distribution claims by Monte
Carlo.
"""

from .errors import (
    ConfigError,
    CusplocError,
    DomainError,
    GridMismatchError,
    GridTooSmallError,
    InternalConsistencyError,
    ModelFunctionError,
    NumericalError,
)
from .estimators import EstimateResult, Prior, bayes, make_prior, mde, mle
from .harness import (
    ExperimentConfig,
    ks_distance,
    rate_regression,
    risk_table,
    run_experiment,
)
from .likelihood import (
    LimitConstants,
    LogLikelihoodCurve,
    cusp_energy,
    limit_constants,
    log_likelihood_ratio,
    normalized_curve,
)
from .limit_law import (
    FbmSample,
    LimitVariables,
    limit_moments,
    limit_z,
    sample_fbm,
    sample_limit_variables,
    standardize,
)
from .model import (
    CuspModel,
    HFunction,
    Path,
    drift,
    make_h,
    occupation_integral,
    simulate_sde,
    simulate_wiener,
    solve_limit_ode,
    sup_deviation,
    time_of_level,
    validate_model,
)
from .properties import property_suite
from .rng import NoiseStream

__version__ = "0.1.0"

__all__ = [
    "CuspModel", "HFunction", "Path", "NoiseStream", "EstimateResult",
    "Prior", "LimitConstants", "LogLikelihoodCurve", "FbmSample",
    "LimitVariables", "ExperimentConfig",
    "drift", "make_h", "validate_model", "solve_limit_ode", "time_of_level",
    "simulate_wiener", "simulate_sde", "sup_deviation", "occupation_integral",
    "log_likelihood_ratio", "normalized_curve", "limit_constants", "cusp_energy",
    "mle", "bayes", "mde", "make_prior",
    "sample_fbm", "limit_z", "sample_limit_variables", "limit_moments",
    "standardize",
    "run_experiment", "ks_distance", "rate_regression", "risk_table",
    "property_suite",
    "CusplocError", "ConfigError", "DomainError", "GridMismatchError",
    "GridTooSmallError", "InternalConsistencyError", "ModelFunctionError",
    "NumericalError",
]
