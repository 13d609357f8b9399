"""
Services for spde-lab
"""

from .noise_model import NoiseOperator, KappaSpec, validate_assumptions
from .galerkin_sde import SimConfig, simulate, simulate_with_variation, deterministic_solve, replay, sim_config_from_run
from .observables import Observable, build_observable, cylindrical_panel
from .kolmogorov_mc import (
    estimate_semigroup,
    estimate_feynman_kac,
    estimate_bel_gradient,
    crn_finite_difference,
    check_variation_of_constants,
    estimate_markov_factorization,
)
from .control import build_control, verify_reachability, stochastic_reach_probability
from .response_formatter import ResponseFormatter, Summary, report

__all__ = [
    "NoiseOperator",
    "KappaSpec",
    "validate_assumptions",
    "SimConfig",
    "simulate",
    "simulate_with_variation",
    "deterministic_solve",
    "replay",
    "sim_config_from_run",
    "Observable",
    "build_observable",
    "cylindrical_panel",
    "estimate_semigroup",
    "estimate_feynman_kac",
    "estimate_bel_gradient",
    "crn_finite_difference",
    "check_variation_of_constants",
    "estimate_markov_factorization",
    "build_control",
    "verify_reachability",
    "stochastic_reach_probability",
    "ResponseFormatter",
    "Summary",
    "report",
]
