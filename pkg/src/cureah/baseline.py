"""Indicator-basis bins for the baseline hazard and the roughness penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import CensoringKind, Dataset


@dataclass(frozen=True, eq=False)
class BinGrid:
    """Bin edges ``0 = e_0 < e_1 < ... < e_m``.

    Bin ``u`` (1-based) is the half-open interval ``(e_{u-1}, e_u]``; time 0
    belongs to the first bin and times past ``e_m`` to the last one.
    """

    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 2 or e[0] != 0.0 or np.any(np.diff(e) <= 0):
            raise ValueError("edges must start at 0 and be strictly increasing")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def m(self) -> int:
        return self.edges.size - 1

    @property
    def end(self) -> float:
        return float(self.edges[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def bin_index(self, t) -> np.ndarray:
        """Zero-based bin index of each time in ``t``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("negative time")
        idx = np.searchsorted(self.edges, t, side="left") - 1
        return np.clip(idx, 0, self.m - 1)


def observation_times(dataset: Dataset) -> np.ndarray:
    """Pooled "observations" used to place bins.

    Event times, left-censoring times and both ends of every finite
    censoring interval; right-censored subjects contribute nothing.
    """
    obs = []
    for s in dataset:
        if s.kind is CensoringKind.EVENT or s.kind is CensoringKind.LEFT:
            obs.append(s.t_right)
        elif s.kind is CensoringKind.INTERVAL:
            obs.extend((s.t_left, s.t_right))
    return np.sort(np.asarray(obs, dtype=float))


def _max_finite_right(dataset: Dataset) -> float:
    finite = [s.t_right for s in dataset if math.isfinite(s.t_right)]
    if not finite:
        raise ValueError("no finite observation times")
    return max(finite)


def _grid_from_chunks(chunks: list[np.ndarray], end: float) -> BinGrid:
    inner = [0.5 * (a[-1] + b[0]) for a, b in zip(chunks[:-1], chunks[1:])]
    edges = np.concatenate(([0.0], inner, [end]))
    # ties between chunk boundaries give repeated edges; those bins merge
    keep = np.concatenate(([True], np.diff(edges) > 0))
    edges = edges[keep]
    if edges[-1] < end:
        edges[-1] = end
    return BinGrid(edges)


def build_bins(dataset: Dataset, n_o: int) -> BinGrid:
    """Bins holding ``n_o`` observations each.

    Sorted observations are cut into runs of ``n_o``; a short final run
    joins its predecessor. Interior edges sit halfway between neighbouring
    runs and the last edge is the largest finite right endpoint.
    """
    if n_o < 1:
        raise ValueError("n_o must be a positive integer")
    obs = observation_times(dataset)
    if obs.size == 0:
        raise ValueError("no observations to place bins (all subjects right-censored)")
    if n_o > obs.size:
        raise ValueError(f"n_o={n_o} exceeds the number of observations ({obs.size})")
    n_chunks = obs.size // n_o
    chunks = [obs[k * n_o:(k + 1) * n_o] for k in range(n_chunks)]
    if n_chunks * n_o < obs.size:
        chunks[-1] = obs[(n_chunks - 1) * n_o:]
    return _grid_from_chunks(chunks, _max_finite_right(dataset))


def build_bins_count(dataset: Dataset, m: int) -> BinGrid:
    """``m`` bins with observation counts differing by at most one."""
    obs = observation_times(dataset)
    if obs.size == 0:
        raise ValueError("no observations to place bins (all subjects right-censored)")
    if not 1 <= m <= obs.size:
        raise ValueError(f"m={m} must lie in [1, {obs.size}]")
    return _grid_from_chunks(np.array_split(obs, m), _max_finite_right(dataset))


def default_bin_count(n: int) -> int:
    """Cube-root rule for the number of bins."""
    return max(1, int(round(n ** (1.0 / 3.0))))


def basis_at(grid: BinGrid, t) -> np.ndarray:
    """Indicator basis; shape ``(m,)`` for scalar ``t`` else ``(len(t), m)``."""
    t_arr = np.asarray(t, dtype=float)
    idx = grid.bin_index(t_arr.reshape(-1))
    out = np.zeros((idx.size, grid.m))
    out[np.arange(idx.size), idx] = 1.0
    return out[0] if t_arr.ndim == 0 else out


def basis_integral_at(grid: BinGrid, t) -> np.ndarray:
    """Integrated basis: component ``u`` is the length of bin ``u`` within [0, t].

    The last bin keeps accruing past ``e_m``.
    """
    t_arr = np.asarray(t, dtype=float)
    flat = t_arr.reshape(-1, 1)
    if np.any(flat < 0):
        raise ValueError("negative time")
    lo = grid.edges[:-1]
    hi = grid.edges[1:].copy()
    hi[-1] = np.inf
    out = np.clip(np.minimum(flat, hi) - lo, 0.0, None)
    return out[0] if t_arr.ndim == 0 else out


def penalty_matrix(m: int) -> np.ndarray:
    """``D.T @ D`` for the second-difference operator ``D``; zero when m < 3."""
    if m < 3:
        return np.zeros((m, m))
    D = np.zeros((m - 2, m))
    rows = np.arange(m - 2)
    D[rows, rows] = 1.0
    D[rows, rows + 1] = -2.0
    D[rows, rows + 2] = 1.0
    return D.T @ D
