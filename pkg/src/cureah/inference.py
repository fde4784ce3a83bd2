"""Covariance, coefficient summaries and predicted survival curves.

Constraints that hold with equality at the fit pin the estimate to a face
of the feasible set. The covariance is then computed on the null space of
the active rows ``M_A``: with ``U`` an orthonormal basis of that space,
``V = U (U' (-H) U)^-1 U'`` where ``H`` is the Hessian of the penalized
log-likelihood. ``M_A V = 0``, so pinned directions get zero variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.stats import norm

from .baseline import basis_at, basis_integral_at
from .data import Dataset, block_slices

Z95 = float(norm.ppf(0.975))


class CovarianceError(np.linalg.LinAlgError):
    """The projected curvature matrix is not positive definite."""

    def __init__(self, eigenvalue: float, direction: np.ndarray, labels=None):
        self.eigenvalue = float(eigenvalue)
        self.direction = np.asarray(direction)
        order = np.argsort(-np.abs(self.direction))[:3]
        names = [labels[i] if labels is not None else f"eta[{i}]" for i in order]
        parts = ", ".join(f"{n} ({self.direction[i]:+.3f})" for n, i in zip(names, order))
        super().__init__(f"curvature not positive definite: eigenvalue {self.eigenvalue:.3g} along {parts}")


@dataclass
class CovarianceResult:
    V: np.ndarray
    active_rows: np.ndarray
    U_dim: int
    min_eigenvalue: float = math.nan

    @property
    def active_count(self) -> int:
        return int(self.active_rows.size)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.V), 0.0, None))


def active_set(eta, lam, M, tol_active: float = 1e-6, s=None) -> np.ndarray:
    """Rows ``b`` with ``M_b eta`` at zero and a multiplier that dominates it.

    A row is active when its constraint value is below ``tol_active * (1 +
    scale_b)`` (``scale_b = |M_b| @ |eta|``, the size of the terms being
    summed) and ``lam_b > s_b``. On the central path ``lam_b s_b`` is the
    same small number for every row, so the second test separates rows whose
    multiplier stays bounded away from zero from rows whose slack does.
    """
    eta = np.asarray(eta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    vals = np.asarray(M @ eta).ravel() if s is None else np.asarray(s, dtype=float)
    absM = abs(M) if sp.issparse(M) else np.abs(np.asarray(M))
    scale = np.asarray(absM @ np.abs(eta)).ravel()
    return np.flatnonzero((vals < tol_active * (1.0 + scale)) & (lam > vals))


def null_space_basis(M_A, v: int | None = None, rtol: float | None = None) -> np.ndarray:
    """Orthonormal basis of ``{d : M_A d = 0}`` by pivoted QR of ``M_A'``."""
    M_A = M_A.toarray() if sp.issparse(M_A) else np.asarray(M_A, dtype=float)
    if M_A.ndim == 1:
        M_A = M_A.reshape(1, -1) if M_A.size else M_A.reshape(0, v or 0)
    r, n = M_A.shape
    if v is not None and n != v and r:
        raise ValueError("M_A has the wrong number of columns")
    n = n if r or v is None else v
    if r == 0:
        return np.eye(n)
    if r >= n:
        raise ValueError("as many active rows as parameters: nothing left to estimate")
    Q, Rf, _ = sla.qr(M_A.T, pivoting=True)
    diag = np.abs(np.diag(Rf))
    tol = (rtol if rtol is not None else max(M_A.shape) * np.finfo(float).eps) * (diag[0] if diag.size else 1.0)
    rank = int(np.sum(diag > tol))
    return Q[:, rank:]


def covariance(hessian, U=None, active_rows=(), labels=None) -> CovarianceResult:
    """``U (U' (-hessian) U)^-1 U'`` for the Hessian of the penalized log-likelihood."""
    K = -np.asarray(hessian, dtype=float)
    v = K.shape[0]
    U = np.eye(v) if U is None else np.asarray(U, dtype=float)
    if U.shape[1] == 0:
        return CovarianceResult(np.zeros((v, v)), np.asarray(active_rows, dtype=int), 0)
    inner = U.T @ K @ U
    inner = 0.5 * (inner + inner.T)
    evals, evecs = np.linalg.eigh(inner)
    if evals[0] <= 0:
        raise CovarianceError(evals[0], U @ evecs[:, 0], labels)
    inv = (evecs / evals) @ evecs.T
    V = U @ inv @ U.T
    V = 0.5 * (V + V.T)
    return CovarianceResult(V, np.asarray(active_rows, dtype=int), U.shape[1], float(evals[0]))


def parameter_labels(sizes, names: dict | None = None) -> list[str]:
    m, p, r, q = sizes
    names = names or {}
    out = [f"theta_{u + 1}" for u in range(m)]
    for block, key, size in (("beta", "x", p), ("alpha", "w", r), ("gamma", "z", q)):
        given = names.get(key)
        out += [f"{block}:{given[j]}" if given else f"{block}_{j + 1}" for j in range(size)]
    return out


def fit_covariance(fit, tol_active: float = 1e-6, labels=None) -> CovarianceResult:
    """Active-set covariance at a :class:`~cureah.solver.FitResult`; stored on the fit."""
    M = fit.constraints.M
    rows = active_set(fit.eta, fit.lam, M, tol_active, s=fit.s)
    U = null_space_basis(M[rows], v=fit.eta.size)
    cov = covariance(fit.hessian, U, rows, labels or parameter_labels(fit.sizes))
    fit.covariance = cov
    return cov


@dataclass(frozen=True)
class CoefficientRow:
    name: str
    block: str
    estimate: float
    se: float
    lower: float
    upper: float
    z: float
    p_one_sided: float
    p_two_sided: float
    boundary: bool
    odds_ratio: float | None = None
    or_lower: float | None = None
    or_upper: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FitSummary:
    incidence: list[CoefficientRow]
    latency: list[CoefficientRow]
    baseline: dict = field(default_factory=dict)

    def rows(self) -> list[CoefficientRow]:
        return self.incidence + self.latency

    def to_dict(self) -> dict:
        return {
            "incidence": [r.to_dict() for r in self.incidence],
            "latency": [r.to_dict() for r in self.latency],
            "baseline": {k: np.asarray(v).tolist() for k, v in self.baseline.items()},
        }

    def table(self) -> str:
        """Plain-text table: OR rows for incidence, HD rows for latency."""
        lines = ["Incidence model", f"{'covariate':<16}{'OR':>10}{'p-value':>10}{'p (2-sided)':>13}  95% CI"]
        for r in self.incidence:
            lines.append(f"{r.name:<16}{r.odds_ratio:>10.3f}{_fmt_p(r.p_one_sided):>10}{_fmt_p(r.p_two_sided):>13}  ({r.or_lower:.3f}, {r.or_upper:.3f})")
        lines += ["", "Latency model", f"{'covariate':<16}{'HD':>10}{'p-value':>10}{'p (2-sided)':>13}  95% CI"]
        for r in self.latency:
            lines.append(f"{r.name:<16}{r.estimate:>10.3f}{_fmt_p(r.p_one_sided):>10}{_fmt_p(r.p_two_sided):>13}  ({r.lower:.3f}, {r.upper:.3f})")
        return "\n".join(lines) + "\n"


def _fmt_p(p: float) -> str:
    if p is None or not np.isfinite(p):
        return "boundary"
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def _row(name: str, block: str, est: float, se: float, boundary_tol: float) -> CoefficientRow:
    boundary = not se > boundary_tol
    if boundary:
        z = p1 = p2 = math.nan
        lo = hi = est
    else:
        z = est / se
        p1 = float(norm.sf(abs(z)))
        p2 = 2.0 * p1
        lo, hi = est - Z95 * se, est + Z95 * se
    return CoefficientRow(name, block, float(est), float(se), float(lo), float(hi), float(z), p1, p2, boundary)


def summarize(fit, cov: CovarianceResult | None = None, names: dict | Dataset | None = None, boundary_tol: float = 1e-10) -> FitSummary:
    """Wald intervals and normal p-values for every coefficient.

    ``p_one_sided`` is the upper-tail probability of ``|estimate| / SE``;
    ``p_two_sided`` doubles it. A coefficient with zero standard error is
    pinned by an active constraint: it is marked ``boundary`` and gets no
    p-value. Baseline bins pinned at zero are flagged the same way.
    """
    cov = cov or fit.covariance or fit_covariance(fit)
    if isinstance(names, Dataset):
        names = names.names
    names = names or {}
    m, p, r, q = fit.sizes
    sl = block_slices(m, p, r, q)
    se = cov.se
    latency = []
    for block, key in (("beta", "x"), ("alpha", "w")):
        labels = names.get(key) or tuple(f"{block}_{j + 1}" for j in range(sl[block].stop - sl[block].start))
        for j, idx in enumerate(range(sl[block].start, sl[block].stop)):
            latency.append(_row(labels[j], block, fit.eta[idx], se[idx], boundary_tol))
    incidence = []
    labels = names.get("z") or tuple(f"gamma_{j + 1}" for j in range(q))
    for j, idx in enumerate(range(sl["gamma"].start, sl["gamma"].stop)):
        row = _row(labels[j], "gamma", fit.eta[idx], se[idx], boundary_tol)
        incidence.append(
            CoefficientRow(**{**row.__dict__, "odds_ratio": math.exp(row.estimate), "or_lower": math.exp(row.lower), "or_upper": math.exp(row.upper)})
        )
    theta = fit.eta[:m]
    th_se = se[:m]
    baseline = {
        "t": fit.grid.midpoints,
        "hazard": theta,
        "se": th_se,
        "lower": np.maximum(theta - Z95 * th_se, 0.0),
        "upper": theta + Z95 * th_se,
        "boundary": ~(th_se > boundary_tol),
    }
    return FitSummary(incidence, latency, baseline)


def _schedule_integral(tv_times, tv_values, t: float) -> np.ndarray:
    starts = np.concatenate(([0.0], tv_times[:-1]))
    ends = np.asarray(tv_times, dtype=float).copy()
    ends[-1] = np.inf
    return np.clip(np.minimum(ends, t) - starts, 0.0, None) @ tv_values


@dataclass
class SurvivalCurve:
    t: np.ndarray
    survival: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    se: np.ndarray

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("t", "survival", "se", "lower", "upper")}


def predict_survival(
    fit,
    cov: CovarianceResult | None,
    z,
    w,
    x_schedule=None,
    t_grid=None,
    extrapolation_cap: float = 0.0,
) -> SurvivalCurve:
    """Population survival ``1 - pi + pi S(t)`` with delta-method 95% bands.

    ``x_schedule`` is ``(times, values)``: row ``a`` of ``values`` holds on
    ``(times[a-1], times[a]]`` and the last row persists. Times beyond
    ``e_m * (1 + extrapolation_cap)`` are refused.
    """
    cov = cov or fit.covariance or fit_covariance(fit)
    m, p, r, q = fit.sizes
    z = np.asarray(z, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if z.size != q or w.size != r:
        raise ValueError(f"expected {q} incidence and {r} latency covariates, got {z.size} and {w.size}")
    if x_schedule is None:
        if p:
            raise ValueError("the fit has time-varying covariates; give x_schedule")
        tv_times, tv_values = np.array([np.inf]), np.zeros((1, 0))
    else:
        tv_times = np.asarray(x_schedule[0], dtype=float).reshape(-1)
        tv_values = np.asarray(x_schedule[1], dtype=float).reshape(tv_times.size, p)
    grid = fit.grid
    t_grid = np.linspace(0.0, grid.end, 101) if t_grid is None else np.asarray(t_grid, dtype=float).reshape(-1)
    limit = grid.end * (1.0 + extrapolation_cap)
    if np.any(t_grid < 0) or np.any(t_grid > limit * (1 + 1e-12)):
        raise ValueError(f"prediction times must lie in [0, {limit:.6g}]")

    eta = fit.eta
    lat = eta[: m + p + r]
    gamma = eta[m + p + r :]
    u = float(z @ gamma)
    pi = 1.0 / (1.0 + math.exp(-u)) if u > -700 else 0.0
    A = np.array([np.concatenate((basis_integral_at(grid, t), _schedule_integral(tv_times, tv_values, t), w * t)) for t in t_grid])
    H = A @ lat
    S = np.exp(-H)
    surv = 1.0 - pi + pi * S
    G = np.hstack((-(pi * S)[:, None] * A, (pi * (1.0 - pi) * (S - 1.0))[:, None] * z[None, :]))
    var = np.einsum("ij,jk,ik->i", G, cov.V, G)
    se = np.sqrt(np.clip(var, 0.0, None))
    lower = np.clip(surv - Z95 * se, 0.0, 1.0)
    upper = np.clip(surv + Z95 * se, 0.0, 1.0)
    return SurvivalCurve(t_grid, surv, lower, upper, se)


def baseline_hazard_at(fit, t) -> np.ndarray:
    """Fitted piecewise-constant baseline hazard at times ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.array([basis_at(fit.grid, x) @ fit.eta[: fit.grid.m] for x in t])


def baseline_hazard_se(fit, cov: CovarianceResult, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    idx = fit.grid.bin_index(t)
    return cov.se[idx]
