"""Primal-dual interior-point maximization under ``M @ eta >= 0``.

The core works on any twice-differentiable objective given as a callable
``fun(x, order) -> (value, gradient, hessian)``. Iterates carry multipliers
``lam`` and slacks ``s = M @ x``, both strictly positive. Each iteration
takes a Newton step on the perturbed KKT system

    grad + M' lam = 0,   -M x + s = 0,   lam * s = xi * mu

and backtracks along ``1, eps, eps**2, ...`` until the trial point lies in
the neighbourhood ``lam_b s_b >= zeta * mu`` and ``mu`` has dropped by the
factor ``1 - 0.01 * step``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize

from .baseline import BinGrid
from .constraints import ConstraintMatrix, build_constraints
from .data import CensoringKind, Dataset, ParamVector
from .model import LikelihoodDomainError, ModelWorkspace, PenalizedObjective

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray, int], tuple]


# a run may be abandoned only once the duality measure is this small
ABANDON_MU = 1e-4
ABANDON_GAP_FACTOR = 10.0


class SolverError(RuntimeError):
    pass


class InfeasibleStart(SolverError):
    pass


class SingularSystem(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 0.6
    zeta: float = 0.1
    xi: float = 0.1
    mu_tol: float = 1e-8
    max_iter: int = 500
    hessian_shift: float = 1e-8
    max_shift: float = 1e12
    max_backtrack: int = 60
    kkt_tol: float = 1e-6
    # stationarity residual must stay below residual_ratio * mu (with the
    # ratio fixed at the start point) so it vanishes together with mu
    residual_ratio_floor: float = 1.0
    residual_ratio_scale: float = 10.0

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 < self.zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")
        if not 0 <= self.xi <= 1:
            raise ValueError("xi must lie in [0, 1]")
        if self.mu_tol <= 0 or self.max_iter < 1:
            raise ValueError("mu_tol and max_iter must be positive")


@dataclass
class SolverState:
    eta: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    iteration: int = 0

    @property
    def mu(self) -> float:
        return float(self.lam @ self.s) / self.lam.size if self.lam.size else 0.0


@dataclass(frozen=True)
class Direction:
    d_eta: np.ndarray
    d_lam: np.ndarray
    d_s: np.ndarray
    shift: float = 0.0


@dataclass
class KKTResult:
    eta: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    mu: float
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    iterations: int
    converged: bool
    status: str
    stationarity: float
    primal_residual: float
    history: list = field(default_factory=list)


def _as_operator(M):
    return M if sp.issparse(M) else np.atleast_2d(np.asarray(M, dtype=float))


def _weighted_gram(M, weights: np.ndarray) -> np.ndarray:
    """``M' diag(weights) M`` as a dense array."""
    if sp.issparse(M):
        G = (M.T @ sp.diags(weights) @ M)
        return G.toarray()
    return (M * weights[:, None]).T @ M


def newton_direction(state: SolverState, gradient, hessian, M, xi: float, config: SolverConfig | None = None) -> Direction:
    """Newton step on the perturbed KKT system.

    ``ds`` and ``dlam`` are eliminated, leaving
    ``(-hessian + M' (lam / s) M) d_eta = rd + M' (lam * rp - rc) / s``
    with ``rd = gradient + M' lam``, ``rp = s - M eta`` and
    ``rc = lam * s - xi * mu``. The reduced matrix gets a diagonal shift,
    grown tenfold from ``config.hessian_shift``, whenever its Cholesky
    factorization fails.
    """
    config = config or SolverConfig()
    M = _as_operator(M)
    lam, s, eta = state.lam, state.s, state.eta
    mu = state.mu
    rd = np.asarray(gradient, dtype=float) + M.T @ lam
    rp = s - M @ eta
    rc = lam * s - xi * mu
    K = -np.asarray(hessian, dtype=float) + _weighted_gram(M, lam / s)
    rhs = rd + M.T @ ((lam * rp - rc) / s)

    shift = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(K))))) if K.size else 1.0
    while True:
        try:
            if shift:
                factor = sla.cho_factor(K + shift * np.eye(K.shape[0]), check_finite=False)
            else:
                factor = sla.cho_factor(K, check_finite=False)
            d_eta = sla.cho_solve(factor, rhs, check_finite=False)
            if np.all(np.isfinite(d_eta)):
                break
        except (np.linalg.LinAlgError, ValueError):
            pass
        shift = config.hessian_shift if shift == 0.0 else shift * 10.0
        if shift > config.max_shift * scale:
            raise SingularSystem("reduced Newton system singular after maximal regularization")
    d_s = -rp + M @ d_eta
    d_lam = (-rc - lam * d_s) / s
    return Direction(d_eta, d_lam, d_s, shift)


@dataclass(frozen=True)
class StepResult:
    step: float
    trials: int
    state: SolverState
    value: float
    gradient: np.ndarray


class LineSearchFailure(SolverError):
    pass


def _evaluate(fun: Objective, x: np.ndarray, order: int):
    try:
        out = fun(x, order)
    except LikelihoodDomainError:
        return None
    if not np.isfinite(out[0]):
        return None
    return out


def step_length(
    state: SolverState,
    direction: Direction,
    config: SolverConfig,
    fun: Objective | None = None,
    M=None,
    residual_bound: float | None = None,
) -> StepResult:
    """First step in ``1, eps, eps**2, ...`` meeting the acceptance rules.

    A trial point is accepted when ``lam, s > 0``, every ``lam_b s_b`` is at
    least ``zeta`` times the new duality measure, the measure has fallen to at
    most ``(1 - 0.01 * step)`` times the old one, the objective is finite
    there and, given ``residual_bound``, the stationarity residual is at most
    ``residual_bound * mu``.
    """
    mu = state.mu
    step = 1.0
    for trial in range(1, config.max_backtrack + 1):
        lam = state.lam + step * direction.d_lam
        s = state.s + step * direction.d_s
        if np.all(lam > 0) and np.all(s > 0):
            new = SolverState(state.eta + step * direction.d_eta, lam, s, state.iteration + 1)
            new_mu = new.mu
            if np.all(lam * s >= config.zeta * new_mu) and new_mu <= (1.0 - 0.01 * step) * mu:
                if fun is None:
                    return StepResult(step, trial, new, np.nan, None)
                out = _evaluate(fun, new.eta, 1)
                if out is not None:
                    value, grad, _ = out
                    ok = True
                    if residual_bound is not None:
                        res = np.max(np.abs(grad + M.T @ lam), initial=0.0)
                        ok = res <= residual_bound * new_mu
                    if ok:
                        return StepResult(step, trial, new, value, grad)
        step *= config.epsilon
    raise LineSearchFailure(f"no acceptable step in {config.max_backtrack} trials")


def _center(lam: np.ndarray, s: np.ndarray, zeta: float) -> np.ndarray:
    # raise small multipliers until every lam_b s_b is at least 2 zeta mu;
    # a start outside the neighbourhood can never satisfy the step rule
    for _ in range(50):
        target = 2.0 * zeta * float(lam @ s) / max(lam.size, 1)
        low = lam * s < target
        if not np.any(low):
            break
        lam = np.where(low, target / s, lam)
    return lam


def solve_kkt(
    fun: Objective,
    M,
    x0,
    config: SolverConfig | None = None,
    lam0=None,
    abandon_below: float | None = None,
) -> KKTResult:
    """Maximize ``fun`` subject to ``M @ x >= 0`` from a strictly feasible ``x0``.

    With ``abandon_below`` set, the run stops with status ``"dominated"``
    once the duality measure is small and the objective, padded by a
    multiple of the duality gap ``w * mu``, is still below that value; such
    a run is heading for a worse local maximum than one already found.
    """
    config = config or SolverConfig()
    M = _as_operator(M)
    x = np.asarray(x0, dtype=float).copy()
    s = M @ x
    if s.size and not np.all(s > 0):
        raise InfeasibleStart(f"start point violates {int(np.sum(s <= 0))} constraints")
    lam = np.ones_like(s) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    if np.any(lam <= 0):
        raise InfeasibleStart("initial multipliers must be positive")
    lam = _center(lam, s, config.zeta)
    state = SolverState(x, lam, s)
    out = _evaluate(fun, x, 2)
    if out is None:
        raise InfeasibleStart("objective undefined at the start point")
    value, grad, hess = out

    mu0 = state.mu
    rd0 = np.max(np.abs(grad + M.T @ lam), initial=0.0)
    residual_bound = config.residual_ratio_scale * max(rd0 / mu0, config.residual_ratio_floor) if mu0 > 0 else None

    history = []
    status = "max_iter"
    while True:
        mu = state.mu
        stationarity = float(np.max(np.abs(grad + M.T @ state.lam), initial=0.0))
        gnorm = float(np.max(np.abs(grad), initial=0.0))
        history.append((state.iteration, value, mu, stationarity))
        if mu < config.mu_tol and stationarity < config.kkt_tol * (1.0 + gnorm):
            status = "converged"
            break
        if state.iteration >= config.max_iter:
            break
        if (
            abandon_below is not None
            and mu < ABANDON_MU
            and value + ABANDON_GAP_FACTOR * mu * max(state.lam.size, 1) < abandon_below - 1e-6
        ):
            status = "dominated"
            break
        try:
            direction = newton_direction(state, grad, hess, M, config.xi, config)
            result = step_length(state, direction, config, fun, M, residual_bound)
        except SolverError as exc:
            status = f"failed: {exc}"
            log.debug("interior-point iteration %d: %s", state.iteration, exc)
            break
        state = result.state
        # the last objective evaluation only produced order-1 terms
        value, grad, hess = fun(state.eta, 2)

    primal = float(np.max(np.abs(state.s - M @ state.eta), initial=0.0))
    return KKTResult(
        eta=state.eta,
        lam=state.lam,
        s=state.s,
        mu=state.mu,
        value=value,
        gradient=grad,
        hessian=hess,
        iterations=state.iteration,
        converged=status == "converged",
        status=status,
        stationarity=float(np.max(np.abs(grad + M.T @ state.lam), initial=0.0)),
        primal_residual=primal,
        history=history,
    )


@dataclass
class FitResult:
    """A penalized fit on one bin grid at one smoothing value."""

    eta: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    omega: float
    mu: float
    penalized_loglik: float
    loglik: float
    iterations: int
    converged: bool
    status: str
    stationarity: float
    primal_residual: float
    hessian: np.ndarray
    gradient: np.ndarray
    grid: "BinGrid"
    constraints: "ConstraintMatrix"
    sizes: tuple[int, int, int, int]
    covariance: object = None
    trace: object = None
    history: list = field(default_factory=list)

    @property
    def params(self) -> ParamVector:
        return ParamVector.unflatten(self.eta, *self.sizes)


def crude_hazard(dataset: Dataset, floor: float = 1e-3) -> float:
    """Events per unit of follow-up, floored."""
    events = dataset.count(CensoringKind.EVENT)
    exposure = sum(s.t_tilde for s in dataset)
    return max(events / exposure if exposure > 0 else 0.0, floor)


def initialize(dataset: Dataset, grid: BinGrid, constraints: ConstraintMatrix) -> SolverState:
    """Constant baseline at the crude hazard, zero regression coefficients, unit multipliers."""
    v = constraints.v
    eta = np.zeros(v)
    eta[: grid.m] = crude_hazard(dataset)
    s = constraints.values(eta)
    return SolverState(eta, np.ones(constraints.w), s)


def _weibull_theta(grid: BinGrid, log_scale: float, log_shape: float) -> np.ndarray:
    # bin averages of the Weibull hazard d/dt exp(log_scale) t^k
    k = np.exp(log_shape)
    H = np.exp(log_scale) * grid.edges**k
    return np.diff(H) / grid.widths


def pilot_start(
    dataset: Dataset,
    grid: BinGrid,
    constraints: ConstraintMatrix,
    workspace: ModelWorkspace | None = None,
    floor: float = 1e-3,
) -> SolverState:
    """Start from a Weibull-baseline cure fit without latency covariates.

    The pilot has ``2 + q`` free parameters and is fitted by Nelder-Mead on
    the same likelihood; its bin-averaged hazard becomes theta. A constant
    hazard start can sit in the basin of a flat baseline with an extreme
    incidence fit; the pilot lets the data choose the hazard's trend first.
    """
    ws = workspace or ModelWorkspace(dataset, grid)
    m, q = grid.m, dataset.q
    v = constraints.v

    def build(x):
        eta = np.zeros(v)
        eta[:m] = np.maximum(_weibull_theta(grid, x[0], x[1]), floor)
        eta[v - q:] = x[2:]
        return eta

    def negll(x):
        if not np.all(np.isfinite(x)) or abs(x[1]) > 3.0:
            return 1e300
        try:
            val = -ws.loglik(build(x))
        except LikelihoodDomainError:
            return 1e300
        return val if np.isfinite(val) else 1e300

    x0 = np.zeros(2 + q)
    x0[0] = np.log(crude_hazard(dataset, floor) * max(grid.end, 1e-12)) - np.log(max(grid.end, 1e-12))
    res = minimize(negll, x0, method="Nelder-Mead", options={"maxiter": 400 * (2 + q), "xatol": 1e-4, "fatol": 1e-6})
    x = res.x if negll(res.x) < negll(x0) else x0
    eta = build(x)
    return SolverState(eta, np.ones(constraints.w), constraints.values(eta))


def _warm_state(prev: "FitResult", cold: SolverState, constraints: ConstraintMatrix, blend: float) -> SolverState:
    # pull the previous optimum off the boundary toward the interior start
    eta = (1.0 - blend) * prev.eta + blend * cold.eta
    s = constraints.values(eta)
    lam = np.maximum(prev.lam, 0.0) + float(np.mean(s)) * blend / s
    return SolverState(eta, lam, s)


def solve(
    dataset: Dataset,
    grid: BinGrid,
    R,
    omega: float,
    config: SolverConfig | None = None,
    init: "FitResult | SolverState | None" = None,
    workspace: ModelWorkspace | None = None,
    constraints: ConstraintMatrix | None = None,
    warm_blend: float = 0.05,
    multistart: bool = True,
) -> FitResult:
    """Constrained maximizer of the penalized log-likelihood at fixed ``omega``.

    Without ``init`` the solver runs from the constant-hazard start and, with
    ``multistart``, first from :func:`pilot_start`, keeping the converged run
    with the higher penalized log-likelihood (the objective is not concave).
    ``init`` may be an earlier :class:`FitResult`, used as a warm start next
    to the pilot with the constant start as a fallback, or an explicit
    strictly interior :class:`SolverState`.
    """
    config = config or SolverConfig()
    ws = workspace or ModelWorkspace(dataset, grid)
    cm = constraints or build_constraints(dataset, grid)
    objective = PenalizedObjective(ws, R, omega)

    best = [None]

    def run(state: SolverState) -> KKTResult | None:
        try:
            res = solve_kkt(objective, cm.M, state.eta, config, lam0=state.lam, abandon_below=best[0])
        except InfeasibleStart as exc:
            log.debug("start rejected: %s", exc)
            return None
        if res.converged and (best[0] is None or res.value > best[0]):
            best[0] = res.value
        return res

    if isinstance(init, SolverState):
        candidates = [run(init)]
    elif init is not None:
        # warm start plus the pilot; the constant start is only a fallback
        candidates = [run(_warm_state(init, initialize(dataset, grid, cm), cm, warm_blend))]
        if multistart:
            candidates.append(run(pilot_start(dataset, grid, cm, ws)))
        if not any(c is not None and c.converged for c in candidates):
            candidates.append(run(initialize(dataset, grid, cm)))
    else:
        candidates = [run(pilot_start(dataset, grid, cm, ws))] if multistart else []
        candidates.append(run(initialize(dataset, grid, cm)))
    candidates = [c for c in candidates if c is not None]
    if not candidates:
        raise InfeasibleStart("no strictly feasible start point")
    # best converged fit by penalized log-likelihood, else the best failure
    res = max(candidates, key=lambda c: (c.converged, c.value))
    loglik = ws.loglik(res.eta)
    return FitResult(
        eta=res.eta,
        lam=res.lam,
        s=res.s,
        omega=float(omega),
        mu=res.mu,
        penalized_loglik=res.value,
        loglik=loglik,
        iterations=res.iterations,
        converged=res.converged,
        status=res.status,
        stationarity=res.stationarity,
        primal_residual=res.primal_residual,
        hessian=res.hessian,
        gradient=res.gradient,
        grid=grid,
        constraints=cm,
        sizes=(grid.m, dataset.p, dataset.r, dataset.q),
        history=res.history,
    )
