"""Generalizing randomized-trial results to a target population observed
through a cohort sample (non-nested design)."""

from .core import Estimated, StudyData, TrueConstant, UnitRecord, validate
from .design import TermSpec, expand, full_pairwise, main_effects
from .diagnostics import balance_report, score_summary, smd
from .errors import ConstantCovariate, NumericalError, PateError, ValidationError
from .estimators import Kind, NuisanceFit, estimate, fit_nuisances, sate, sate_se
from .sandwich import EstimateReport, report, sandwich_variance, wald_ci
from .simulation import Scenario, load_scenario, run_replicate, run_study

__version__ = "0.1.0"

__all__ = [
    "ConstantCovariate", "Estimated", "EstimateReport", "Kind", "NuisanceFit", "NumericalError",
    "PateError", "Scenario", "StudyData", "TermSpec", "TrueConstant", "UnitRecord", "ValidationError",
    "balance_report", "estimate", "expand", "fit_nuisances", "full_pairwise", "load_scenario",
    "main_effects", "report", "run_replicate", "run_study", "sandwich_variance", "sate", "sate_se",
    "score_summary", "smd", "validate", "wald_ci",
]
