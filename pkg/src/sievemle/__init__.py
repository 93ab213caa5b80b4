"""Sieve maximum likelihood for multivariate models with unknown dependence.

The package estimates marginal parameters jointly with a Bernstein copula
sieve, alongside the parametric (QMLE/FMLE/PMLE) baselines, the efficient
score asymptotic-variance machinery, Monte Carlo experiment drivers, and a
rolling Value-at-Risk application.
"""

__version__ = "0.1.0"

from . import avar, copulas, estimate, exceptions, marginals, riskapp, sieve, simlab
from .estimate import (
    FitResult,
    IndependenceAssumed,
    JointModelSpec,
    ParametricDependence,
    SieveDependence,
    fit_fmle,
    fit_qmle,
    fit_sieve_density,
    fit_smle,
    pseudo_observations,
    select_order,
)
from .sieve import SieveCopula

__all__ = [
    "__version__",
    "avar",
    "copulas",
    "estimate",
    "exceptions",
    "marginals",
    "riskapp",
    "sieve",
    "simlab",
    "FitResult",
    "IndependenceAssumed",
    "JointModelSpec",
    "ParametricDependence",
    "SieveDependence",
    "SieveCopula",
    "fit_fmle",
    "fit_qmle",
    "fit_sieve_density",
    "fit_smle",
    "pseudo_observations",
    "select_order",
]
