"""Linear nonnegativity constraints ``M @ eta >= 0``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .baseline import BinGrid
from .data import Dataset
from .model import hazard_row


@dataclass(frozen=True, eq=False)
class ConstraintMatrix:
    """Sparse constraint rows with labels.

    ``labels[b]`` is ``("theta", u)`` or ``("hazard", i, a)`` with zero-based
    indices. ``origin`` maps every undeduplicated hazard row ``(i, a)`` to the
    kept row that represents it.
    """

    M: sp.csr_matrix
    labels: tuple[tuple, ...]
    origin: dict

    @property
    def w(self) -> int:
        return self.M.shape[0]

    @property
    def v(self) -> int:
        return self.M.shape[1]

    def dense(self) -> np.ndarray:
        return self.M.toarray()

    def values(self, eta) -> np.ndarray:
        return self.M @ np.asarray(eta, dtype=float)


def build_constraints(dataset: Dataset, grid: BinGrid, deduplicate: bool = True) -> ConstraintMatrix:
    """Theta rows first, then hazard rows by subject and schedule index.

    A hazard row equal to the previous row of the same subject is dropped
    when ``deduplicate`` is set.
    """
    m, q = grid.m, dataset.q
    v = m + dataset.p + dataset.r + q
    rows = [np.eye(1, v, u).ravel() for u in range(m)]
    labels: list[tuple] = [("theta", u) for u in range(m)]
    origin: dict = {}
    for i, s in enumerate(dataset):
        prev = None
        for a, t in enumerate(s.tv_times):
            row = np.concatenate((hazard_row(s, grid, t), np.zeros(q)))
            if deduplicate and prev is not None and np.array_equal(row, prev):
                origin[(i, a)] = len(rows) - 1
                continue
            origin[(i, a)] = len(rows)
            rows.append(row)
            labels.append(("hazard", i, a))
            prev = row
    M = sp.csr_matrix(np.array(rows).reshape(len(rows), v))
    return ConstraintMatrix(M, tuple(labels), origin)


@dataclass(frozen=True)
class FeasibilityReport:
    min_slack: float
    violating_rows: tuple[int, ...]
    violating_labels: tuple[tuple, ...]

    @property
    def feasible(self) -> bool:
        return not self.violating_rows


def feasibility(cm: ConstraintMatrix, eta, tol: float = 0.0) -> FeasibilityReport:
    vals = cm.values(eta)
    bad = np.flatnonzero(vals < -tol)
    return FeasibilityReport(
        float(vals.min()) if vals.size else np.inf,
        tuple(int(b) for b in bad),
        tuple(cm.labels[b] for b in bad),
    )
