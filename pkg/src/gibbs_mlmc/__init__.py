"""Unbiased multilevel Monte Carlo estimation of Gibbs expectations.

Coupled Euler-Maruyama Langevin paths, spring-coupled change-of-measure
level sampling, geometric-randomization debiasing, a heavy-tail radial
transformation, and a query-cost model for quantum-accelerated runs.
"""

from .errors import (
    ConfigError,
    DivergenceError,
    GibbsMlmcError,
    IsotropyError,
    JCapExceededError,
    NumericError,
    ParameterError,
    RegimeError,
    WeightOverflowError,
)
from .potentials import (
    CountingPotential,
    Observable,
    Potential,
    RegularityInfo,
    check_gradient,
    make_observable,
    make_potential,
)
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "RngStream",
    "Potential",
    "RegularityInfo",
    "Observable",
    "CountingPotential",
    "make_potential",
    "make_observable",
    "check_gradient",
    "GibbsMlmcError",
    "ParameterError",
    "ConfigError",
    "DivergenceError",
    "WeightOverflowError",
    "JCapExceededError",
    "RegimeError",
    "IsotropyError",
    "NumericError",
    "__version__",
]
