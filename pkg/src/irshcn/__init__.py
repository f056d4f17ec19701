"""Coverage and throughput of IRS-assisted K-tier heterogeneous cellular networks.

Two engines share one scenario model: :mod:`irshcn.analytical` evaluates the
stochastic-geometry expressions and :mod:`irshcn.simulator` estimates the same
quantities by Monte Carlo.
"""

from .analytical import CoverageBreakdown, association_probability, overall_coverage, spatial_throughput
from .estimators import AnalyticalCoverage, MonteCarloCoverage
from .exceptions import (ConfigError, EmptyNetworkError, IrsHcnError, NumericFailure,
                         OrderOverflowError, PreconditionError)
from .netmodel import (LAMBDA0, EvalConfig, IrsConfig, Scenario, TierConfig, table1_scenario,
                       validate)
from .simulator import estimate

__version__ = "0.1.0"

__all__ = [
    "AnalyticalCoverage",
    "ConfigError",
    "CoverageBreakdown",
    "EmptyNetworkError",
    "EvalConfig",
    "IrsConfig",
    "IrsHcnError",
    "LAMBDA0",
    "MonteCarloCoverage",
    "NumericFailure",
    "OrderOverflowError",
    "PreconditionError",
    "Scenario",
    "TierConfig",
    "association_probability",
    "estimate",
    "overall_coverage",
    "spatial_throughput",
    "table1_scenario",
    "validate",
]
