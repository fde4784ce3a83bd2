"""Partly interval-censored survival data with cure-model covariates."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Raised when a record violates the data model.

    ``row`` is the zero-based position of the offending record, or ``None``
    when the problem is not tied to a single record.
    """

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class CensoringKind(enum.Enum):
    EVENT = "event"
    LEFT = "left"
    RIGHT = "right"
    INTERVAL = "interval"

    @classmethod
    def infer(cls, t_left: float, t_right: float) -> "CensoringKind":
        """Classify an observed interval ``(t_left, t_right)``.

        Equal endpoints give an exact event time, a zero left endpoint a
        left-censored time, an infinite right endpoint a right-censored time
        and anything else an interval-censored time.
        """
        if math.isinf(t_right):
            return cls.RIGHT
        if t_left == t_right:
            return cls.EVENT
        if t_left == 0.0:
            return cls.LEFT
        return cls.INTERVAL

    def indicators(self) -> tuple[int, int, int, int]:
        """(event, left, right, interval) 0/1 indicators."""
        order = (CensoringKind.EVENT, CensoringKind.LEFT, CensoringKind.RIGHT, CensoringKind.INTERVAL)
        return tuple(int(self is k) for k in order)  # type: ignore[return-value]


def _as_vector(values: Any, name: str) -> np.ndarray:
    arr = np.asarray(values if values is not None else [], dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class Subject:
    """One observed subject.

    The time-varying covariates are piecewise constant: row ``a`` of
    ``tv_values`` holds the value on ``(tv_times[a-1], tv_times[a]]`` with
    an implicit ``tv_times[-1] = 0``. The last schedule time equals the end
    of follow-up ``t_tilde``.
    """

    t_left: float
    t_right: float
    kind: CensoringKind
    z: np.ndarray
    w: np.ndarray
    tv_times: np.ndarray
    tv_values: np.ndarray

    def __post_init__(self):
        tl, tr = float(self.t_left), float(self.t_right)
        if math.isnan(tl) or math.isnan(tr):
            raise DataError("censoring times must not be NaN")
        if tl < 0 or tr < 0:
            raise DataError("negative time")
        if math.isinf(tl):
            raise DataError("t_left must be finite")
        if tl > tr:
            raise DataError("t_left > t_right")
        kind = self.kind
        if kind is CensoringKind.EVENT and not (tl == tr and math.isfinite(tr) and tr > 0):
            raise DataError("event requires t_left == t_right > 0")
        if kind is CensoringKind.LEFT and not (tl == 0.0 and 0 < tr < math.inf):
            raise DataError("left censoring requires t_left == 0 < t_right < inf")
        if kind is CensoringKind.RIGHT and not (math.isinf(tr) and tl > 0):
            raise DataError("right censoring requires 0 < t_left and t_right == inf")
        if kind is CensoringKind.INTERVAL and not (0 < tl < tr < math.inf):
            raise DataError("interval censoring requires 0 < t_left < t_right < inf")

        times = self.tv_times
        values = self.tv_values
        if times.ndim != 1 or times.size == 0:
            raise DataError("time-varying schedule is empty")
        if values.ndim != 2 or values.shape[0] != times.size:
            raise DataError("tv_values must have one row per schedule time")
        if times[0] <= 0 or np.any(np.diff(times) <= 0):
            raise DataError("tv_times not strictly increasing from 0")
        if times[-1] != self.t_tilde:
            raise DataError(f"tv_times must end at t_tilde={self.t_tilde!r}")
        if not np.all(np.isfinite(values)):
            raise DataError("tv_values contains non-finite values")
        for arr in (self.z, self.w, times, values):
            arr.setflags(write=False)

    @property
    def t_tilde(self) -> float:
        return float(self.t_left) if math.isinf(self.t_right) else float(self.t_right)

    @property
    def p(self) -> int:
        return self.tv_values.shape[1]

    @property
    def n_tv(self) -> int:
        return self.tv_times.size

    def x_at(self, t: float) -> np.ndarray:
        """Time-varying covariate value at ``t``; the last value persists."""
        a = int(np.searchsorted(self.tv_times, t, side="left"))
        return self.tv_values[min(a, self.n_tv - 1)]

    def x_integral(self, t: float) -> np.ndarray:
        """Integral of x(s) over [0, t], continued with the last value."""
        starts = np.concatenate(([0.0], self.tv_times[:-1]))
        ends = self.tv_times.copy()
        ends[-1] = np.inf
        overlap = np.clip(np.minimum(ends, t) - starts, 0.0, None)
        return overlap @ self.tv_values


def make_subject(
    t_left: float,
    t_right: float,
    z: Sequence[float] = (),
    w: Sequence[float] = (),
    x: Sequence[float] | None = None,
    tv_times: Sequence[float] | None = None,
    tv_values: Sequence[Sequence[float]] | None = None,
) -> Subject:
    """Build a validated :class:`Subject`, inferring its censoring kind.

    Without a schedule the time-varying covariates are held at ``x`` (or
    are absent) over the whole follow-up ``[0, t_tilde]``. A schedule that
    runs past ``t_tilde`` is cut at ``t_tilde``.
    """
    t_left, t_right = float(t_left), float(t_right)
    kind = CensoringKind.infer(t_left, t_right)
    t_tilde = t_left if math.isinf(t_right) else t_right
    if tv_times is None:
        xv = _as_vector(x, "x")
        times = np.array([t_tilde])
        values = xv.reshape(1, -1)
    else:
        times = np.asarray(tv_times, dtype=float).reshape(-1)
        values = np.asarray(tv_values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(times.size, -1)
        if values.shape[0] != times.size:
            raise DataError("tv_values must have one row per schedule time")
        if times.size and np.any(np.diff(times) <= 0):
            raise DataError("tv_times not strictly increasing")
        if times.size == 0 or times[-1] < t_tilde:
            raise DataError("time-varying schedule does not cover [0, t_tilde]")
        keep = int(np.searchsorted(times, t_tilde, side="left"))
        values = values[: keep + 1].copy()
        times = np.concatenate((times[:keep], [t_tilde]))
    return Subject(
        t_left=t_left,
        t_right=t_right,
        kind=kind,
        z=_as_vector(z, "z"),
        w=_as_vector(w, "w"),
        tv_times=times,
        tv_values=values,
    )


@dataclass(frozen=True, eq=False)
class Dataset:
    subjects: tuple[Subject, ...]
    q: int
    r: int
    p: int
    names: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def __getitem__(self, i):
        return self.subjects[i]

    def kinds(self) -> list[CensoringKind]:
        return [s.kind for s in self.subjects]

    def count(self, kind: CensoringKind) -> int:
        return sum(s.kind is kind for s in self.subjects)

    def covariate_names(self, block: str) -> tuple[str, ...]:
        size = {"z": self.q, "w": self.r, "x": self.p}[block]
        return tuple(self.names.get(block, ())) or tuple(f"{block}_{j + 1}" for j in range(size))

    def subset(self, index: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.subjects[i] for i in index), self.q, self.r, self.p, self.names)


def from_subjects(subjects: Iterable[Subject], names: Mapping[str, tuple[str, ...]] | None = None) -> Dataset:
    subjects = tuple(subjects)
    if not subjects:
        raise DataError("dataset has no subjects")
    q, r, p = subjects[0].z.size, subjects[0].w.size, subjects[0].p
    for i, s in enumerate(subjects):
        if (s.z.size, s.w.size, s.p) != (q, r, p):
            raise DataError(
                f"dimension mismatch: (q, r, p)=({s.z.size}, {s.w.size}, {s.p}), expected ({q}, {r}, {p})", row=i
            )
    return Dataset(subjects, q, r, p, dict(names or {}))


def validate_dataset(records: Iterable[Mapping[str, Any]], names: Mapping[str, tuple[str, ...]] | None = None) -> Dataset:
    """Validate parsed records into a :class:`Dataset`.

    Each record maps ``t_left``, ``t_right``, ``z``, ``w`` and optionally
    ``x`` (constant time-varying values) or ``tv_times``/``tv_values``.
    Errors carry the zero-based index of the offending record.
    """
    subjects = []
    for i, rec in enumerate(records):
        try:
            subjects.append(
                make_subject(
                    rec["t_left"],
                    rec["t_right"],
                    z=rec.get("z", ()),
                    w=rec.get("w", ()),
                    x=rec.get("x"),
                    tv_times=rec.get("tv_times"),
                    tv_values=rec.get("tv_values"),
                )
            )
        except DataError as exc:
            if exc.row is not None:
                raise
            raise DataError(str(exc), row=i) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed record ({exc})", row=i) from None
    return from_subjects(subjects, names)


@dataclass(frozen=True)
class ParamVector:
    """Blocks of the full parameter vector, flattened as (theta, beta, alpha, gamma)."""

    theta: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return (self.theta.size, self.beta.size, self.alpha.size, self.gamma.size)

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.asarray(b, dtype=float).reshape(-1) for b in (self.theta, self.beta, self.alpha, self.gamma)])

    @classmethod
    def unflatten(cls, eta, m: int, p: int, r: int, q: int) -> "ParamVector":
        eta = np.asarray(eta, dtype=float)
        if eta.size != m + p + r + q:
            raise ValueError(f"expected {m + p + r + q} parameters, got {eta.size}")
        cuts = np.cumsum([m, p, r])
        theta, beta, alpha, gamma = np.split(eta, cuts)
        return cls(theta, beta, alpha, gamma)


def block_slices(m: int, p: int, r: int, q: int) -> dict[str, slice]:
    """Slices of each block in the flattened parameter vector."""
    out, start = {}, 0
    for name, size in (("theta", m), ("beta", p), ("alpha", r), ("gamma", q)):
        out[name] = slice(start, start + size)
        start += size
    return out
