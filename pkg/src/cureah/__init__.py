"""Mixture-cure additive hazards models for partly interval-censored survival data.

Maximum penalized likelihood with a piecewise-constant baseline hazard,
fitted by a primal-dual interior-point method under nonnegativity
constraints on the hazard.
"""

from .baseline import BinGrid, build_bins, build_bins_count, penalty_matrix
from .constraints import build_constraints
from .data import CensoringKind, DataError, Dataset, ParamVector, Subject, from_subjects, make_subject, validate_dataset
from .fitting import FitConfig, FitOutput, fit_model
from .inference import active_set, covariance, fit_covariance, null_space_basis, predict_survival, summarize
from .model import ModelWorkspace, log_likelihood, penalized_loglik
from .replicate import MetricReport, run_replications
from .simulate import Scenario, simulate_dataset, solve_event_time
from .smoothing import SmoothingConfig, select_smoothing
from .solver import FitResult, SolverConfig, solve

__all__ = [
    "BinGrid", "build_bins", "build_bins_count", "penalty_matrix", "build_constraints",
    "CensoringKind", "DataError", "Dataset", "ParamVector", "Subject", "from_subjects", "make_subject",
    "validate_dataset", "FitConfig", "FitOutput", "fit_model", "active_set", "covariance",
    "fit_covariance", "null_space_basis", "predict_survival", "summarize", "ModelWorkspace",
    "log_likelihood", "penalized_loglik", "MetricReport", "run_replications", "Scenario",
    "simulate_dataset", "solve_event_time", "SmoothingConfig", "select_smoothing", "FitResult",
    "SolverConfig", "solve",
]
