"""Automatic smoothing by the Laplace-approximated marginal likelihood.

The penalty ``omega * theta' R theta`` is read as a normal prior on theta
with variance parameter ``sigma2 = 1 / (2 omega)``. With the fit at the
current ``sigma2`` held fixed, the maximizer of the approximate marginal
likelihood satisfies ``sigma2 = theta' R theta / (m - nu)`` where ``nu =
tr((G + Q)^-1 Q)``, ``G`` is the negative log-likelihood Hessian and ``Q``
is ``R / sigma2`` in the theta block. Fits and updates alternate until the
degrees of freedom settle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .baseline import BinGrid
from .constraints import ConstraintMatrix, build_constraints
from .data import Dataset
from .model import ModelWorkspace
from .solver import FitResult, SolverConfig, pilot_start, solve

log = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-8


@dataclass(frozen=True)
class SmoothingConfig:
    max_outer: int = 20
    df_tol: float = 1.0
    rel_sigma2_tol: float = 1e-3
    initial_penalty_share: float = 0.01
    omega: float | None = None  # fixed smoothing value; skips selection


@dataclass(frozen=True)
class SmoothingRecord:
    sigma2: float
    omega: float
    nu: float
    df: float
    penalized_loglik: float
    marginal: float


@dataclass
class SmoothingTrace:
    records: list[SmoothingRecord] = field(default_factory=list)
    converged_index: int | None = None
    stop_reason: str = ""

    def __len__(self):
        return len(self.records)


def _embed(R: np.ndarray, v: int) -> np.ndarray:
    out = np.zeros((v, v))
    m = R.shape[0]
    out[:m, :m] = R
    return out


def degrees_of_freedom(G_hat, R, sigma2: float, ridge: float = 1e-10) -> float:
    """``tr((G + Q)^-1 Q)`` with ``Q = R / sigma2`` in the leading block.

    ``R`` may be smaller than ``G_hat``; it is embedded in the top-left
    (theta) block.
    """
    G = np.asarray(G_hat, dtype=float)
    Q = _embed(np.asarray(R, dtype=float) / sigma2, G.shape[0])
    A = G + Q
    try:
        X = np.linalg.solve(A + ridge * np.eye(A.shape[0]), Q)
    except np.linalg.LinAlgError:
        X = np.linalg.pinv(A, hermitian=True) @ Q
    if not np.all(np.isfinite(X)):
        raise np.linalg.LinAlgError("G + Q is singular even after regularization")
    return float(np.trace(X))


def marginal_loglik(loglik: float, theta, R, sigma2: float, G_hat) -> float:
    """Laplace approximation to the log marginal likelihood of ``sigma2``."""
    m = R.shape[0]
    Q = _embed(R / sigma2, G_hat.shape[0])
    sign, logdet = np.linalg.slogdet(G_hat + Q)
    if sign <= 0:
        return float("nan")
    return float(-0.5 * m * np.log(sigma2) + loglik - float(theta @ R @ theta) / (2 * sigma2) - 0.5 * logdet)


def initial_omega(dataset: Dataset, grid: BinGrid, R, workspace: ModelWorkspace, cm: ConstraintMatrix, share: float) -> float:
    """Smoothing value whose penalty is ``share`` of ``|loglik|`` at the start point.

    The start point is the solver's pilot fit, whose hazard has a trend and
    hence nonzero roughness. Should that roughness vanish, it is replaced by
    the roughness of unit alternating perturbations of the hazard level,
    ``level**2 * trace(R)``.
    """
    start = pilot_start(dataset, grid, cm, workspace)
    theta = start.eta[: grid.m]
    roughness = float(theta @ R @ theta)
    if roughness <= 1e-12 * max(float(theta @ theta), 1e-300):
        roughness = float(np.mean(theta)) ** 2 * float(np.trace(R))
    ll = abs(workspace.loglik(start.eta))
    if roughness <= 0 or ll == 0:
        return 1.0
    return min(share * ll / roughness, 1.0 / (2.0 * SIGMA2_FLOOR))


def select_smoothing(
    dataset: Dataset,
    grid: BinGrid,
    R,
    config: SmoothingConfig | None = None,
    solver_config: SolverConfig | None = None,
    workspace: ModelWorkspace | None = None,
    constraints: ConstraintMatrix | None = None,
):
    """Alternate penalized fits and ``sigma2`` updates.

    Returns ``(omega, fit, trace)``; the fit is the one at the returned
    ``omega``.
    """
    config = config or SmoothingConfig()
    R = np.asarray(R, dtype=float)
    ws = workspace or ModelWorkspace(dataset, grid)
    cm = constraints or build_constraints(dataset, grid)
    m = grid.m
    trace = SmoothingTrace()

    if config.omega is not None or m < 3:
        omega = 0.0 if config.omega is None else float(config.omega)
        fit = solve(dataset, grid, R, omega, solver_config, workspace=ws, constraints=cm)
        trace.stop_reason = "fixed" if config.omega is not None else "m < 3"
        fit.trace = trace
        return omega, fit, trace

    omega = initial_omega(dataset, grid, R, ws, cm, config.initial_penalty_share)
    fit = None
    prev_df = None
    for k in range(config.max_outer):
        fit = solve(dataset, grid, R, omega, solver_config, init=fit, workspace=ws, constraints=cm)
        if not fit.converged:
            trace.stop_reason = f"inner fit failed: {fit.status}"
            break
        sigma2 = 1.0 / (2.0 * omega)
        _, _, H = ws.derivatives(fit.eta, 2)
        G = -H
        nu = degrees_of_freedom(G, R, sigma2)
        theta = fit.eta[:m]
        df = m - nu
        trace.records.append(
            SmoothingRecord(sigma2, omega, nu, df, fit.penalized_loglik, marginal_loglik(fit.loglik, theta, R, sigma2, G))
        )
        if prev_df is not None and abs(df - prev_df) < config.df_tol:
            trace.converged_index = k
            trace.stop_reason = "df stable"
            break
        prev_df = df
        rough = float(theta @ R @ theta)
        if df <= 0:
            trace.stop_reason = "degenerate: m - nu <= 0"
            trace.converged_index = k
            break
        new_sigma2 = max(rough / df, SIGMA2_FLOOR)
        if abs(new_sigma2 - sigma2) <= config.rel_sigma2_tol * sigma2:
            trace.converged_index = k
            trace.stop_reason = "sigma2 stable"
            break
        omega = 1.0 / (2.0 * new_sigma2)
        log.debug("smoothing iteration %d: df=%.3f omega=%.4g", k, df, omega)
    else:
        trace.stop_reason = "max_outer"

    fit.trace = trace
    return fit.omega, fit, trace
