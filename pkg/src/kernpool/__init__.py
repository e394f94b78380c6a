"""Optimal pooling of discrete probabilistic forecasts with kernel scores.

Weights that minimise a kernel score (CRPS, energy score, Gaussian-kernel
score, ...) over training data solve a convex quadratic program on the
probability simplex. The package builds and solves that program for the
linear pool of whole forecasts, of individual members, and of order
statistics, and ships the scoring and verification tools around it.
"""

from .kernels import (
    ChainedKernel,
    DiscreteDistribution,
    EnergyKernel,
    GaussianKernel,
    cross_gram,
    embed_against_point,
    eval_kernel,
    format_kernel,
    parse_kernel,
)
from .scoring import crps, empirical_score, energy_score, kernel_score, squared_mmd
from .pooling import ForecastCase, Panel, Strategy, WeightVector, combine, combine_panel, convexity_gap, model_contributions
from .qp import QpProblem, Solution, SolverConfig, alpha_decay, assemble, fit, project_simplex, solve
from .recalibration import MbmParams, mbm_apply, mbm_fit
from .evaluation import member_mse, pit, pit_histogram, score_by_group, skill
from .data import ScenarioConfig, generate_scenario, load_model, load_panel, load_preset, save_model, save_panel

__all__ = [
    "ChainedKernel",
    "DiscreteDistribution",
    "EnergyKernel",
    "GaussianKernel",
    "cross_gram",
    "embed_against_point",
    "eval_kernel",
    "format_kernel",
    "parse_kernel",
    "crps",
    "empirical_score",
    "energy_score",
    "kernel_score",
    "squared_mmd",
    "ForecastCase",
    "Panel",
    "Strategy",
    "WeightVector",
    "combine",
    "combine_panel",
    "convexity_gap",
    "model_contributions",
    "QpProblem",
    "Solution",
    "SolverConfig",
    "alpha_decay",
    "assemble",
    "fit",
    "project_simplex",
    "solve",
    "MbmParams",
    "mbm_apply",
    "mbm_fit",
    "member_mse",
    "pit",
    "pit_histogram",
    "score_by_group",
    "skill",
    "ScenarioConfig",
    "generate_scenario",
    "load_model",
    "load_panel",
    "load_preset",
    "save_model",
    "save_panel",
]

__version__ = "0.1.0"
