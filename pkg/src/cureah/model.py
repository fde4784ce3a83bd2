"""Mixture-cure additive hazards likelihood and its derivatives.

Every likelihood term is a smooth function of a handful of linear forms in
the parameters: the logistic predictor ``z'gamma``, the hazard at an event
time and the cumulative hazard at one or two censoring times. The workspace
stores the design rows of those forms once per fit, so value, gradient and
Hessian reduce to weighted matrix products.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_expit

from .baseline import BinGrid, basis_at, basis_integral_at
from .data import CensoringKind, Dataset, ParamVector, Subject


class LikelihoodDomainError(ArithmeticError):
    """A log-likelihood term has a nonpositive argument."""

    def __init__(self, subject: int, term: str):
        self.subject = subject
        self.term = term
        super().__init__(f"nonpositive argument in the {term} term of subject {subject}")


def incidence_prob(gamma, z) -> float | np.ndarray:
    """Logistic probability of being susceptible."""
    return expit(np.asarray(z, dtype=float) @ np.asarray(gamma, dtype=float))


def _split(eta, subject: Subject, grid: BinGrid) -> ParamVector:
    return ParamVector.unflatten(eta, grid.m, subject.p, subject.w.size, subject.z.size)


def hazard_row(subject: Subject, grid: BinGrid, t: float) -> np.ndarray:
    """Coefficients of the latency parameters (theta, beta, alpha) in h(t)."""
    return np.concatenate((basis_at(grid, t), subject.x_at(t), subject.w))


def cum_hazard_row(subject: Subject, grid: BinGrid, t: float) -> np.ndarray:
    """Coefficients of the latency parameters in H(t)."""
    return np.concatenate((basis_integral_at(grid, t), subject.x_integral(t), subject.w * t))


def hazard(eta, subject: Subject, grid: BinGrid, t: float) -> float:
    par = _split(eta, subject, grid)
    return float(hazard_row(subject, grid, t) @ np.concatenate((par.theta, par.beta, par.alpha)))


def cum_hazard(eta, subject: Subject, grid: BinGrid, t: float) -> float:
    par = _split(eta, subject, grid)
    return float(cum_hazard_row(subject, grid, t) @ np.concatenate((par.theta, par.beta, par.alpha)))


def survival(eta, subject: Subject, grid: BinGrid, t: float) -> float:
    """Survival of a susceptible subject."""
    return float(np.exp(-cum_hazard(eta, subject, grid, t)))


def mixture_survival(eta, subject: Subject, grid: BinGrid, t: float) -> float:
    """Population survival ``pi * S(t) + 1 - pi``."""
    par = _split(eta, subject, grid)
    pi = incidence_prob(par.gamma, subject.z)
    return float(pi * survival(eta, subject, grid, t) + 1.0 - pi)


def _log1mexp(x: np.ndarray) -> np.ndarray:
    # log(1 - exp(-x)) for x > 0
    return np.log(-np.expm1(-x))


def _d_log1mexp(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d1 = 1.0 / np.expm1(x)
    return d1, -d1 * (1.0 + d1)


class ModelWorkspace:
    """Parameter-free design rows of a dataset on a bin grid."""

    def __init__(self, dataset: Dataset, grid: BinGrid):
        self.dataset = dataset
        self.grid = grid
        self.m, self.p, self.r, self.q = grid.m, dataset.p, dataset.r, dataset.q
        self.n_latent = self.m + self.p + self.r
        self.v = self.n_latent + self.q

        groups: dict[CensoringKind, list[int]] = {k: [] for k in CensoringKind}
        for i, s in enumerate(dataset):
            groups[s.kind].append(i)
        self.index = {k: np.asarray(v, dtype=int) for k, v in groups.items()}

        def rows(fn, kind, attr):
            idx = self.index[kind]
            if idx.size == 0:
                return np.zeros((0, self.n_latent))
            return np.array([fn(dataset[i], grid, getattr(dataset[i], attr)) for i in idx])

        def zrows(kind):
            idx = self.index[kind]
            return np.array([dataset[i].z for i in idx]).reshape(idx.size, self.q)

        E, L, R, I = CensoringKind.EVENT, CensoringKind.LEFT, CensoringKind.RIGHT, CensoringKind.INTERVAL
        self.ev_h = rows(hazard_row, E, "t_right")
        self.ev_H = rows(cum_hazard_row, E, "t_right")
        self.lc_H = rows(cum_hazard_row, L, "t_right")
        self.rc_H = rows(cum_hazard_row, R, "t_left")
        self.ic_HL = rows(cum_hazard_row, I, "t_left")
        self.ic_D = rows(cum_hazard_row, I, "t_right") - self.ic_HL
        self.Z = {k: zrows(k) for k in CensoringKind}

    def contributions(self, eta) -> np.ndarray:
        """Per-subject log-likelihood terms, in dataset order."""
        return self._evaluate(np.asarray(eta, dtype=float), order=0)[0]

    def loglik(self, eta) -> float:
        return float(np.sum(self.contributions(eta)))

    def derivatives(self, eta, order: int = 2):
        """(loglik, gradient, Hessian) of the log-likelihood; unused orders are None."""
        terms, grad, hess = self._evaluate(np.asarray(eta, dtype=float), order)
        return float(np.sum(terms)), grad, hess

    def _check(self, ok: np.ndarray, kind: CensoringKind, term: str):
        if not np.all(ok):
            bad = int(self.index[kind][np.flatnonzero(~ok)[0]])
            raise LikelihoodDomainError(bad, term)

    def _evaluate(self, eta: np.ndarray, order: int):
        L = self.n_latent
        zeta, gamma = eta[:L], eta[L:]
        terms = np.zeros(len(self.dataset))
        grad = np.zeros(self.v) if order >= 1 else None
        hess = np.zeros((self.v, self.v)) if order >= 2 else None
        gl, gg = slice(0, L), slice(L, self.v)

        def add_lat(A, f1, f2=None):
            grad[gl] += A.T @ f1
            if f2 is not None and order >= 2:
                hess[gl, gl] += (A * f2[:, None]).T @ A

        def add_gamma(Z, f1, f2):
            grad[gg] += Z.T @ f1
            if order >= 2:
                hess[gg, gg] += (Z * f2[:, None]).T @ Z

        # susceptible-only kinds share the log(pi) term
        for kind in (CensoringKind.EVENT, CensoringKind.LEFT, CensoringKind.INTERVAL):
            idx = self.index[kind]
            if idx.size == 0:
                continue
            u = self.Z[kind] @ gamma
            terms[idx] += log_expit(u)
            if order >= 1:
                pi = expit(u)
                add_gamma(self.Z[kind], 1.0 - pi, -pi * (1.0 - pi))

        idx = self.index[CensoringKind.EVENT]
        if idx.size:
            h = self.ev_h @ zeta
            self._check(h > 0, CensoringKind.EVENT, "event hazard")
            terms[idx] += np.log(h) - self.ev_H @ zeta
            if order >= 1:
                add_lat(self.ev_h, 1.0 / h, -1.0 / h**2)
                grad[gl] -= self.ev_H.sum(axis=0)

        idx = self.index[CensoringKind.LEFT]
        if idx.size:
            H = self.lc_H @ zeta
            self._check(H > 0, CensoringKind.LEFT, "left-censoring")
            terms[idx] += _log1mexp(H)
            if order >= 1:
                add_lat(self.lc_H, *_d_log1mexp(H))

        idx = self.index[CensoringKind.INTERVAL]
        if idx.size:
            HL = self.ic_HL @ zeta
            delta = self.ic_D @ zeta
            self._check(delta > 0, CensoringKind.INTERVAL, "interval-censoring")
            terms[idx] += _log1mexp(delta) - HL
            if order >= 1:
                d1, d2 = _d_log1mexp(delta)
                add_lat(self.ic_D, d1, d2)
                grad[gl] -= self.ic_HL.sum(axis=0)

        idx = self.index[CensoringKind.RIGHT]
        if idx.size:
            A, Z = self.rc_H, self.Z[CensoringKind.RIGHT]
            u = Z @ gamma
            pi, one_minus_pi = expit(u), expit(-u)
            S = np.exp(-(A @ zeta))
            D = one_minus_pi + pi * S
            self._check(np.isfinite(D) & (D > 0), CensoringKind.RIGHT, "right-censoring")
            terms[idx] += np.log(D)
            if order >= 1:
                dpi = pi * one_minus_pi
                f_u = dpi * (S - 1.0) / D
                f_H = -pi * S / D
                f_uu = dpi * (one_minus_pi - pi) * (S - 1.0) / D - f_u**2
                f_HH = pi * S / D - f_H**2
                f_uH = -dpi * S / D - f_u * f_H
                add_lat(A, f_H, f_HH)
                add_gamma(Z, f_u, f_uu)
                if order >= 2:
                    cross = (A * f_uH[:, None]).T @ Z
                    hess[gl, gg] += cross
                    hess[gg, gl] += cross.T

        if not np.all(np.isfinite(terms)):
            bad = int(np.flatnonzero(~np.isfinite(terms))[0])
            raise LikelihoodDomainError(bad, self.dataset[bad].kind.value)
        return terms, grad, hess


def log_likelihood(eta, dataset: Dataset, grid: BinGrid, workspace: ModelWorkspace | None = None) -> float:
    ws = workspace or ModelWorkspace(dataset, grid)
    return ws.loglik(eta)


def _penalty(eta, R: np.ndarray, omega: float):
    m = R.shape[0]
    theta = np.asarray(eta, dtype=float)[:m]
    Rt = R @ theta
    return omega * float(theta @ Rt), 2.0 * omega * Rt, 2.0 * omega * R


def penalized_loglik(eta, dataset: Dataset, grid: BinGrid, R, omega: float, workspace: ModelWorkspace | None = None) -> float:
    """``loglik - omega * theta' R theta``."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    return log_likelihood(eta, dataset, grid, workspace) - _penalty(eta, R, omega)[0]


class PenalizedObjective:
    """Penalized log-likelihood with analytic derivatives, for the solver."""

    def __init__(self, workspace: ModelWorkspace, R: np.ndarray, omega: float):
        if omega < 0:
            raise ValueError("omega must be nonnegative")
        self.workspace = workspace
        self.R = np.asarray(R, dtype=float)
        self.omega = float(omega)

    def __call__(self, eta, order: int = 2):
        ll, g, H = self.workspace.derivatives(eta, order)
        pen, pg, pH = _penalty(eta, self.R, self.omega)
        m = self.R.shape[0]
        if g is not None:
            g[:m] -= pg
        if H is not None:
            H[:m, :m] -= pH
        return ll - pen, g, H


def gradient(eta, dataset: Dataset, grid: BinGrid, R, omega: float, workspace: ModelWorkspace | None = None) -> np.ndarray:
    ws = workspace or ModelWorkspace(dataset, grid)
    return PenalizedObjective(ws, R, omega)(eta, order=1)[1]


def hessian(eta, dataset: Dataset, grid: BinGrid, R, omega: float, workspace: ModelWorkspace | None = None) -> np.ndarray:
    ws = workspace or ModelWorkspace(dataset, grid)
    return PenalizedObjective(ws, R, omega)(eta, order=2)[2]
