"""ppp-ci - Conditional independence for infinite measures and Poisson point processes."""

__version__ = "0.1.0"

from ppp_ci.catalog import BUILTIN_MEASURES, builtin_measure, resolve_measure
from ppp_ci.ci_core import (
    ci_check_definition,
    ci_check_kernel,
    ci_check_reduced,
    classify_bivariate,
    equivalence_crosscheck,
    semigraphoid_check,
)
from ppp_ci.config import ExperimentConfig, Settings, get_settings, load_experiment_config
from ppp_ci.measure_core import (
    LayeredDiscreteMeasure,
    PuncturedSpace,
    build_perp_measure,
    check_assumption_iv,
    disintegrate,
    marginalize,
    mass_on_rectangle,
)
from ppp_ci.models import (
    CiQuery,
    CiVerdict,
    CiWitness,
    MassClass,
    PppCiError,
    TestRectangle,
)
from ppp_ci.ppp_sim import RandomSource, sample_depth, sample_window, simulate_window_counts

__all__ = [
    # Measures
    "LayeredDiscreteMeasure",
    "PuncturedSpace",
    "MassClass",
    "TestRectangle",
    "mass_on_rectangle",
    "marginalize",
    "disintegrate",
    "build_perp_measure",
    "check_assumption_iv",
    "BUILTIN_MEASURES",
    "builtin_measure",
    "resolve_measure",
    # CI
    "CiQuery",
    "CiVerdict",
    "CiWitness",
    "ci_check_definition",
    "ci_check_reduced",
    "ci_check_kernel",
    "equivalence_crosscheck",
    "semigraphoid_check",
    "classify_bivariate",
    # Simulation
    "RandomSource",
    "sample_window",
    "sample_depth",
    "simulate_window_counts",
    # Config
    "Settings",
    "ExperimentConfig",
    "get_settings",
    "load_experiment_config",
    # Errors
    "PppCiError",
]
