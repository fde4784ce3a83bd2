"""One call from a dataset to a fit with its covariance."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .baseline import build_bins, build_bins_count, default_bin_count, penalty_matrix
from .constraints import build_constraints
from .data import Dataset
from .inference import CovarianceError, CovarianceResult, fit_covariance, parameter_labels
from .model import ModelWorkspace
from .smoothing import SmoothingConfig, SmoothingTrace, select_smoothing
from .solver import FitResult, SolverConfig


@dataclass(frozen=True)
class FitConfig:
    """Bin rule, smoothing and solver settings.

    ``n_obs`` (observations per bin) takes precedence over ``m`` (bin
    count); with neither, ``m = round(n ** (1/3))``. ``omega`` fixes the
    smoothing value and skips its selection.
    """

    n_obs: int | None = None
    m: int | None = None
    omega: float | None = None
    tol_active: float = 1e-6
    solver: SolverConfig = field(default_factory=SolverConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)

    def with_solver(self, **kw) -> "FitConfig":
        return replace(self, solver=replace(self.solver, **kw))


@dataclass
class FitOutput:
    fit: FitResult
    covariance: CovarianceResult | None
    trace: SmoothingTrace
    covariance_error: str | None = None


def make_grid(dataset: Dataset, config: FitConfig):
    if config.n_obs is not None:
        return build_bins(dataset, config.n_obs)
    return build_bins_count(dataset, config.m if config.m is not None else default_bin_count(len(dataset)))


def fit_model(dataset: Dataset, config: FitConfig | None = None) -> FitOutput:
    """Bin, select the smoothing value, fit and compute the covariance.

    The covariance is skipped (with the reason recorded) when the fit did
    not converge or its projected curvature is not positive definite.
    """
    config = config or FitConfig()
    grid = make_grid(dataset, config)
    R = penalty_matrix(grid.m)
    smoothing = config.smoothing if config.omega is None else replace(config.smoothing, omega=config.omega)
    ws = ModelWorkspace(dataset, grid)
    cm = build_constraints(dataset, grid)
    _, fit, trace = select_smoothing(dataset, grid, R, smoothing, config.solver, ws, cm)
    cov, err = None, None
    if fit.converged:
        try:
            cov = fit_covariance(fit, config.tol_active, parameter_labels(fit.sizes, dataset.names))
        except (CovarianceError, ValueError) as exc:
            err = str(exc)
    else:
        err = "fit did not converge"
    return FitOutput(fit, cov, trace, err)
