"""ODE parameter estimation by derivative (gradient) matching."""

import sys

from .baseline import BoundedProblem, NLSConfig, nls_fit
from .estimator import GradientMatchingRegressor, TrajectoryNLSRegressor
from .exceptions import (
    AllGuessesFailedError,
    ConfigError,
    DegenerateGridError,
    IntegrationError,
    ModelDomainError,
    OdefitError,
    SeriesError,
    SingularSystemError,
)
from .metrics import MetricsReport, MetricsRow, compute_metrics, error_table
from .model import OdeModel, ParameterVector, check_param_jacobian, get_model
from .residual import ResidualSystem, SubsetSelector, assemble, draw_subset
from .series import (
    DerivativeEstimate,
    TimeSeries,
    estimate_derivative,
    forward_difference,
    load_series,
    save_series,
    three_point_derivative,
)
from .sim import SimSpec, generate_dataset, generate_pair, rk4_integrate, simulate_fit
from .solver import (
    FitResult,
    Method,
    SolverConfig,
    Termination,
    empirical_convergence_order,
    fit,
    gd_fit,
    nr_fit,
    sgd_fit,
    snr_fit,
)

__version__ = "0.1.0"

__all__ = sorted(
    name for name, obj in globals().items() if not name.startswith("_") and not isinstance(obj, type(sys))
)
