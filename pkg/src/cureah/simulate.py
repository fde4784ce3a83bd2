"""Synthetic partly interval-censored mixture-cure data.

Design: logistic incidence on ``z = (z1, z2)`` with ``z1 ~ Bernoulli(0.5)``
and ``z2 ~ Uniform(d1, d2)``; additive hazard ``3 t^2 + beta1 x(t) +
alpha1 w1 + alpha2 w2`` with ``w1 = z1``, ``w2 ~ Uniform(1, 2)`` and
``x(t) = 1{t > t*}``, ``t* ~ Uniform(0.5, 2.5)``. Cured subjects are
right-censored at ``Uniform(0, 2.5)``. A susceptible subject is censored
with probability ``censor_prop`` using ``L ~ Exp`` and ``R = L +
Uniform(0, 1)``.

Random streams: subject ``i`` of a scenario with seed ``k`` draws from a
Philox generator keyed by ``(k, i)``, so every subject's draws are fixed
regardless of the sample size or of the order subjects are generated in.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import Dataset, Subject, from_subjects, make_subject

# (d1, d2) ranges giving the stated non-cured fractions
NON_CURED_RANGES = {0.6: (1.0, 1.2), 0.8: (3.0, 3.5)}

HORIZON = 50.0


@dataclass(frozen=True)
class Scenario:
    n: int = 200
    non_cured: float = 0.8
    censor_prop: float = 0.7
    d1: float | None = None
    d2: float | None = None
    gamma: tuple[float, float] = (-0.2, 0.5)
    alpha: tuple[float, float] = (-0.2, 0.3)
    beta1: float = 0.5
    cured_censor_max: float = 2.5
    switch_range: tuple[float, float] = (0.5, 2.5)
    w2_range: tuple[float, float] = (1.0, 2.0)
    exp_rate: float = 3.0
    exp_mean: bool = False
    seed: int = 0
    n_o: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0 <= self.censor_prop <= 1:
            raise ValueError("censor_prop must lie in [0, 1]")
        if (self.d1 is None) != (self.d2 is None):
            raise ValueError("give both d1 and d2 or neither")
        if self.d1 is None and round(self.non_cured, 2) not in NON_CURED_RANGES:
            raise ValueError(f"non_cured must be one of {sorted(NON_CURED_RANGES)} unless d1, d2 are given")

    @property
    def z2_range(self) -> tuple[float, float]:
        if self.d1 is not None:
            return (self.d1, self.d2)
        return NON_CURED_RANGES[round(self.non_cured, 2)]

    @property
    def exp_scale(self) -> float:
        """Mean of the exponential left-censoring time."""
        return self.exp_rate if self.exp_mean else 1.0 / self.exp_rate

    @property
    def truth(self) -> dict[str, float]:
        return {
            "alpha_1": self.alpha[0],
            "alpha_2": self.alpha[1],
            "beta_1": self.beta1,
            "gamma_1": self.gamma[0],
            "gamma_2": self.gamma[1],
        }

    def default_n_o(self) -> int:
        if self.n_o is not None:
            return self.n_o
        if self.n <= 200:
            return 2
        if self.n <= 500:
            return 3
        return 4

    def to_dict(self) -> dict:
        return asdict(self)


def true_baseline_hazard(t):
    return 3.0 * np.asarray(t, dtype=float) ** 2


def true_cum_hazard(t, c: float, beta1: float, t_star: float):
    """Cumulative hazard ``t^3 + c t (+ beta1 (t - t*) past the switch)``."""
    t = np.asarray(t, dtype=float)
    return t**3 + c * t + beta1 * np.clip(t - t_star, 0.0, None)


def solve_event_time(c, beta1, t_star, tau, tol: float = 1e-12, max_iter: int = 200):
    """Root of ``H(t) + log(tau) = 0`` for the piecewise cubic cumulative hazard.

    Vectorized over all arguments. Safeguarded Newton: a Newton step that
    leaves the current bracket is replaced by bisection. Entries whose root
    lies past the horizon come back as ``inf``.
    """
    c, beta1, t_star, tau = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (c, beta1, t_star, tau)))
    if np.any(c < 0) or np.any(c + beta1 < 0):
        raise ValueError("hazard must be nonnegative: need c >= 0 and c + beta1 >= 0")
    if np.any((tau <= 0) | (tau >= 1)):
        raise ValueError("tau must lie in (0, 1)")
    target = -np.log(tau)

    def H(t):
        return true_cum_hazard(t, c, beta1, t_star)

    def dH(t):
        return 3.0 * t**2 + c + beta1 * (t > t_star)

    lo = np.zeros_like(target)
    hi = np.full_like(target, HORIZON)
    beyond = H(hi) < target
    hi = np.where(beyond, HORIZON, hi)
    # the cube root of the target is a good start on the pre-switch branch
    t = np.clip(np.cbrt(target), lo, hi)
    for _ in range(max_iter):
        f = H(t) - target
        lo = np.where(f < 0, t, lo)
        hi = np.where(f > 0, t, hi)
        if np.all((np.abs(f) <= tol) | beyond):
            break
        d = dH(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = t - f / d
        ok = (d > 0) & (newton > lo) & (newton < hi)
        t = np.where(ok, newton, 0.5 * (lo + hi))
    return np.where(beyond, np.inf, t)


@dataclass
class Latent:
    """Debug sidecar: quantities never shown to the fitting code."""

    susceptible: np.ndarray
    event_time: np.ndarray
    tau: np.ndarray
    t_star: np.ndarray
    resampled: int = 0

    def to_dict(self) -> dict:
        return {
            "susceptible": self.susceptible.astype(int).tolist(),
            "event_time": [None if not np.isfinite(x) else float(x) for x in self.event_time],
            "tau": self.tau.tolist(),
            "t_star": self.t_star.tolist(),
            "resampled": self.resampled,
        }


def subject_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(i)]))


def _draw_subject(sc: Scenario, i: int):
    rng = subject_rng(sc.seed, i)
    u = rng.random(10)
    z1 = float(u[0] < 0.5)
    d1, d2 = sc.z2_range
    z2 = d1 + (d2 - d1) * u[1]
    eta = sc.gamma[0] * z1 + sc.gamma[1] * z2
    pi = 1.0 / (1.0 + math.exp(-eta))
    susceptible = u[2] <= pi
    w2 = sc.w2_range[0] + (sc.w2_range[1] - sc.w2_range[0]) * u[3]
    t_star = sc.switch_range[0] + (sc.switch_range[1] - sc.switch_range[0]) * u[4]
    cured_time = sc.cured_censor_max * u[5]
    tau = u[6]
    censor_u = u[7]
    L = -sc.exp_scale * math.log1p(-u[8])
    R = L + u[9]
    return rng, dict(z=(z1, z2), w=(z1, w2), t_star=t_star, susceptible=susceptible,
                     cured_time=cured_time, tau=tau, censor_u=censor_u, L=L, R=R)


def _censor(t: float, censor_u: float, L: float, R: float, censor_prop: float) -> tuple[float, float]:
    if censor_u >= censor_prop:
        return t, t
    if t <= L:
        return 0.0, L
    if t <= R:
        return L, R
    return R, math.inf


def _schedule(t_tilde: float, t_star: float):
    if t_star < t_tilde:
        return [t_star, t_tilde], [[0.0], [1.0]]
    return [t_tilde], [[0.0]]


def simulate_dataset(scenario: Scenario, return_latent: bool = False):
    """Draw one dataset; with ``return_latent`` also the :class:`Latent` sidecar."""
    sc = scenario
    draws = [_draw_subject(sc, i) for i in range(sc.n)]
    c = np.array([sc.alpha[0] * d["w"][0] + sc.alpha[1] * d["w"][1] for _, d in draws])
    t_star = np.array([d["t_star"] for _, d in draws])
    tau = np.array([d["tau"] for _, d in draws])
    times = solve_event_time(c, sc.beta1, t_star, tau)
    resampled = 0
    for i in np.flatnonzero(~np.isfinite(times)):
        rng = draws[i][0]
        while not np.isfinite(times[i]):
            tau[i] = rng.random()
            times[i] = solve_event_time(c[i], sc.beta1, t_star[i], tau[i])
            resampled += 1

    subjects: list[Subject] = []
    susceptible = np.zeros(sc.n, dtype=bool)
    for i, (_, d) in enumerate(draws):
        susceptible[i] = d["susceptible"]
        if d["susceptible"]:
            tl, tr = _censor(float(times[i]), d["censor_u"], d["L"], d["R"], sc.censor_prop)
        else:
            tl, tr = d["cured_time"], math.inf
        t_tilde = tl if math.isinf(tr) else tr
        tv_t, tv_x = _schedule(t_tilde, d["t_star"])
        subjects.append(make_subject(tl, tr, z=d["z"], w=d["w"], tv_times=tv_t, tv_values=tv_x))

    names = {"z": ("z_1", "z_2"), "w": ("w_1", "w_2"), "x": ("x_1",)}
    dataset = from_subjects(subjects, names)
    if not return_latent:
        return dataset
    event_time = np.where(susceptible, times, np.inf)
    return dataset, Latent(susceptible, event_time, tau, t_star, resampled)


def replicate_scenario(scenario: Scenario, rep: int) -> Scenario:
    """Scenario for replicate ``rep``: same design, independent seed."""
    seed = int(np.random.SeedSequence([int(scenario.seed), int(rep)]).generate_state(1, np.uint64)[0])
    return replace(scenario, seed=seed)


# flat key = value scenario files
def _parse_value(text: str):
    text = text.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if "," in text:
        return tuple(float(x) for x in text.split(","))
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_scenario(text: str, **overrides) -> Scenario:
    known = {f.name for f in fields(Scenario)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"scenario line {lineno}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"scenario line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(val)
    values.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("n", "seed", "n_o"):
        if values.get(key) is not None:
            values[key] = int(values[key])
    return Scenario(**values)


def format_scenario(scenario: Scenario) -> str:
    lines = []
    for f in fields(Scenario):
        val = getattr(scenario, f.name)
        if isinstance(val, tuple):
            val = ", ".join(repr(float(x)) for x in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"
