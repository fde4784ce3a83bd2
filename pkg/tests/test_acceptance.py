"""Acceptance criteria 1-9, one test each.

Monte Carlo runs are cached under ``.acceptance_cache`` keyed by the
scenario, the fit settings and a hash of the package source, so a rerun
against unchanged code reuses them; set ``CUREAH_FRESH=1`` to recompute.
Every criterion records a PASS/FAIL line printed at the end of the session.
"""

import dataclasses
import hashlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

import cureah
from cureah.baseline import build_bins, penalty_matrix
from cureah.constraints import build_constraints
from cureah.data import from_subjects, make_subject
from cureah.fitting import FitConfig
from cureah.inference import fit_covariance, summarize
from cureah.model import LikelihoodDomainError, ModelWorkspace, PenalizedObjective
from cureah.replicate import ReplicateResult, run_one, summarize_replicates
from cureah.simulate import Scenario, replicate_scenario, simulate_dataset, true_cum_hazard
from cureah.solver import pilot_start, solve

from conftest import empty_bin_dataset, random_feasible_eta

REPS = 100
SEED = 2024
CACHE = Path(__file__).resolve().parent.parent / ".acceptance_cache"


def _source_hash() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(cureah.__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def monte_carlo(scenario: Scenario, reps: int = REPS, config: FitConfig | None = None):
    config = config or FitConfig()
    key = hashlib.sha256(json.dumps([scenario.to_dict(), repr(config), reps, _source_hash()], sort_keys=True).encode()).hexdigest()[:20]
    path = CACHE / f"{key}.json"
    if path.exists() and not os.environ.get("CUREAH_FRESH"):
        results = [ReplicateResult(**r) for r in json.loads(path.read_text())]
    else:
        results = [run_one(scenario, rep, config) for rep in range(reps)]
        CACHE.mkdir(exist_ok=True)
        path.write_text(json.dumps([dataclasses.asdict(r) for r in results]))
    return summarize_replicates(scenario, results), results


@pytest.fixture(scope="module")
def mc_200():
    return monte_carlo(Scenario(n=200, non_cured=0.8, censor_prop=0.7, n_o=2, seed=SEED))


@pytest.fixture(scope="module")
def mc_500():
    return monte_carlo(Scenario(n=500, non_cured=0.8, censor_prop=0.7, seed=SEED))


@pytest.fixture(scope="module")
def mc_1000():
    return monte_carlo(Scenario(n=1000, non_cured=0.8, censor_prop=0.7, seed=SEED))


@pytest.fixture(scope="module")
def mc_1000_low_censoring():
    return monte_carlo(Scenario(n=1000, non_cured=0.8, censor_prop=0.4, seed=SEED))


# 1 -------------------------------------------------------------------------

def test_criterion_1_derivatives(sim100, criterion):
    start = time.perf_counter()
    grid = build_bins(sim100, 4)
    cm = build_constraints(sim100, grid)
    obj = PenalizedObjective(ModelWorkspace(sim100, grid), penalty_matrix(grid.m), 3.0)
    rng = np.random.default_rng(1)
    worst_g = worst_h = 0.0
    for _ in range(20):
        eta = random_feasible_eta(rng, grid, sim100, cm)
        _, g, H = obj(eta)
        E = np.eye(eta.size)
        steps = 1e-6 * np.maximum(1.0, np.abs(eta))
        g_fd = np.array([(obj(eta + h * e, 0)[0] - obj(eta - h * e, 0)[0]) / (2 * h) for e, h in zip(E, steps)])
        H_fd = np.array([(obj(eta + h * e, 1)[1] - obj(eta - h * e, 1)[1]) / (2 * h) for e, h in zip(E, steps)])
        H_fd = 0.5 * (H_fd + H_fd.T)
        worst_g = max(worst_g, np.max(np.abs(g - g_fd)) / max(np.max(np.abs(g)), 1.0))
        worst_h = max(worst_h, np.max(np.abs(H - H_fd)) / max(np.max(np.abs(H)), 1.0))
    elapsed = time.perf_counter() - start
    ok = criterion(1, worst_g < 1e-6 and worst_h < 1e-4 and elapsed < 60,
                   f"gradient rel err {worst_g:.2e}, Hessian rel err {worst_h:.2e}, {elapsed:.1f}s on 20 points")
    assert ok


# 2 -------------------------------------------------------------------------

def test_criterion_2_kkt_certificate(mc_200, mc_500, mc_1000, mc_1000_low_censoring, criterion):
    checked, bad = 0, []
    for _, results in (mc_200, mc_500, mc_1000, mc_1000_low_censoring):
        for r in results:
            if r.status != "converged" and not r.ok:
                continue
            k = r.kkt
            checked += 1
            good = (
                k["mu"] < 1e-8
                and k["stationarity"] < 1e-6 * (1 + k["gradient_norm"])
                and k["min_constraint"] >= -1e-10
                and k["max_complementarity"] < k["w"] * 1e-8
            )
            if not good:
                bad.append((r.seed, k))
    ok = criterion(2, checked > 0 and not bad, f"{checked} converged fits checked, {len(bad)} violate a KKT condition")
    assert ok, bad[:3]


# 3 -------------------------------------------------------------------------

def interior_dataset(n=300, seed=0):
    """Constant baseline 1 and nonnegative covariate effects: hazards stay well above zero."""
    rng = np.random.default_rng(seed)
    subs = []
    for _ in range(n):
        z = [1.0, rng.uniform(0, 2)]
        w = [rng.uniform(0, 1)]
        t_star = rng.uniform(0.2, 1.0)
        pi = 1 / (1 + math.exp(0.5 - z[1]))
        follow = rng.uniform(1.5, 3.0)
        end = follow
        tl, tr = follow, math.inf
        if rng.random() < pi:
            rate = 1.0 + 0.5 * w[0]
            target = -math.log(rng.random())
            t = target / rate if target <= rate * t_star else t_star + (target - rate * t_star) / (rate + 0.4)
            if t < follow:
                if rng.random() < 0.4:
                    tl, tr = t, t
                else:
                    tl, tr = rng.uniform(0, t), t + rng.uniform(0, 0.5)
                    if rng.random() < 0.2:
                        tl = 0.0
                end = tr
        times, values = ([t_star, end], [[0.0], [1.0]]) if t_star < end else ([end], [[0.0]])
        subs.append(make_subject(tl, tr, z=z, w=w, tv_times=times, tv_values=values))
    return from_subjects(subs)


def newton_maximize(obj, x, tol=1e-11, max_iter=200):
    """Plain damped Newton without constraints; shifts the Hessian when it is not negative definite."""
    for _ in range(max_iter):
        f, g, H = obj(x, 2)
        shift = 0.0
        while True:
            try:
                np.linalg.cholesky(-H + shift * np.eye(x.size))
                break
            except np.linalg.LinAlgError:
                shift = max(1e-8, 10 * shift)
        d = np.linalg.solve(-H + shift * np.eye(x.size), g)
        step = 1.0
        while True:
            try:
                if obj(x + step * d, 0)[0] >= f - 1e-12:
                    break
            except LikelihoodDomainError:
                pass
            step *= 0.5
        x = x + step * d
        if shift == 0.0 and np.max(np.abs(g)) < tol * (1 + abs(f)):
            return x
    raise AssertionError("Newton oracle did not converge")


def test_criterion_3_interior_oracle(criterion):
    worst, min_slack = 0.0, math.inf
    for seed in range(3):
        ds = interior_dataset(seed=seed)
        grid = build_bins(ds, 25)
        R = penalty_matrix(grid.m)
        ws, cm = ModelWorkspace(ds, grid), build_constraints(ds, grid)
        fit = solve(ds, grid, R, 1000.0, workspace=ws, constraints=cm)
        assert fit.converged
        min_slack = min(min_slack, float(cm.values(fit.eta).min()))
        ref = newton_maximize(PenalizedObjective(ws, R, 1000.0), pilot_start(ds, grid, cm, ws).eta)
        worst = max(worst, float(np.max(np.abs(fit.eta - ref))))
    ok = criterion(3, worst < 1e-6 and min_slack > 0.1,
                   f"max |eta_ip - eta_newton| {worst:.2e} over 3 datasets (smallest constraint value {min_slack:.2f})")
    assert ok


# 4 -------------------------------------------------------------------------

def test_criterion_4_table_reproduction(mc_200, criterion):
    report, _ = mc_200
    a = report.parameters["alpha_1"]
    ratio = a["aasd"] / a["mcsd"]
    checks = (
        a["abias"] < 0.13,
        abs(a["mcsd"] / 0.2177 - 1) <= 0.4,
        abs(a["aasd"] / 0.2244 - 1) <= 0.4,
        0.7 <= ratio <= 1.4,
        0.88 <= a["cp"] <= 1.0,
    )
    ok = criterion(4, all(checks),
                   f"alpha_1 ABIAS {a['abias']:.4f} MCSD {a['mcsd']:.4f} AASD {a['aasd']:.4f} "
                   f"AASD/MCSD {ratio:.2f} CP {a['cp']:.2f}; {report.used}/{report.reps} replicates used {report.excluded}")
    assert ok


# 5 -------------------------------------------------------------------------

def test_criterion_5_aise_trend(mc_200, mc_500, mc_1000, criterion):
    aise = [mc[0].aise for mc in (mc_200, mc_500, mc_1000)]
    ok = criterion(5, aise[0] > aise[1] > aise[2],
                   "AISE n=200/500/1000: " + " > ".join(f"{x:.4f}" for x in aise))
    assert ok


# 6 -------------------------------------------------------------------------

def test_criterion_6_baseline_coverage(mc_1000_low_censoring, criterion):
    report, _ = mc_1000_low_censoring
    cps = [report.baseline[f"h0_t{j}"]["cp"] for j in (1, 2, 3)]
    ok = criterion(6, all(0.88 <= c <= 1.0 for c in cps),
                   "h0 CP at t1,t2,t3: " + ", ".join(f"{c:.2f}" for c in cps) + f" ({report.used}/{report.reps} used)")
    assert ok


# 7 -------------------------------------------------------------------------

def test_criterion_7_active_constraint_covariance(criterion):
    ds, grid = empty_bin_dataset()
    fit = solve(ds, grid, penalty_matrix(grid.m), 0.0)
    cov = fit_covariance(fit)
    M_A = fit.constraints.dense()[cov.active_rows]
    residual = float(np.max(np.abs(M_A @ cov.V)))
    summary = summarize(fit, cov, ds)
    pinned = ("theta", 1) in [fit.constraints.labels[b] for b in cov.active_rows]
    ok = criterion(7, fit.converged and pinned and residual < 1e-8 and cov.se[1] == 0.0 and bool(summary.baseline["boundary"][1]),
                   f"|M_A V|max {residual:.1e}, SE of empty-bin coefficient {cov.se[1]:.1e}, flagged {bool(summary.baseline['boundary'][1])}")
    assert ok


# 8 -------------------------------------------------------------------------

HEADER_RIGHT_CENSORED = {(0.6, 0.7): 0.53, (0.8, 0.7): 0.37, (0.6, 0.4): 0.47, (0.8, 0.4): 0.29}


def test_criterion_8_generator_calibration(criterion):
    lines, ok_all = [], True
    for (nc, pc), target in HEADER_RIGHT_CENSORED.items():
        base = Scenario(n=1000, non_cured=nc, censor_prop=pc, seed=SEED)
        fr_nc, fr_r = [], []
        for rep in range(REPS):
            ds, lat = simulate_dataset(replicate_scenario(base, rep), return_latent=True)
            fr_nc.append(lat.susceptible.mean())
            fr_r.append(np.mean([s.kind.value == "right" for s in ds]))
        m_nc, m_r = float(np.mean(fr_nc)), float(np.mean(fr_r))
        good = abs(m_nc - nc) <= 0.03 and abs(m_r - target) <= 0.04
        ok_all &= good
        lines.append(f"({nc:.0%},{pc:.0%}) non-cured {m_nc:.3f} pi_R {m_r:.3f} vs {target:.2f}")
    ok = criterion(8, ok_all, "; ".join(lines))
    assert ok


# 9 -------------------------------------------------------------------------

def test_criterion_9_event_time_inversion(criterion):
    ds, lat = simulate_dataset(Scenario(n=13000, seed=SEED), return_latent=True)
    idx = np.flatnonzero(lat.susceptible)[:10_000]
    sc = Scenario()
    c = np.array([sc.alpha[0] * ds[i].w[0] + sc.alpha[1] * ds[i].w[1] for i in idx])
    S = np.exp(-true_cum_hazard(lat.event_time[idx], c, sc.beta1, lat.t_star[idx]))
    err = float(np.max(np.abs(S - lat.tau[idx])))
    ok = criterion(9, idx.size == 10_000 and err < 1e-8, f"max |S(t) - tau| {err:.1e} over {idx.size} susceptible subjects")
    assert ok
