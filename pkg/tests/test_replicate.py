import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from cureah.baseline import BinGrid
from cureah.fitting import FitConfig
from cureah.replicate import (
    ReplicateResult,
    _metrics,
    integrated_squared_error,
    run_replications,
    summarize_replicates,
)
from cureah.simulate import Scenario

TRUTH = Scenario().truth


def _result(rep, est, se, ok=True, status="converged"):
    return ReplicateResult(
        rep=rep, seed=rep, ok=ok, status=status,
        estimates=dict(est) if ok else {}, se=dict(se) if ok else {},
        h0_points=[0.3, 0.5, 0.7], h0_true=[0.27, 0.75, 1.47], h0_est=[0.3, 0.7, 1.5], h0_se=[0.1, 0.1, 0.2],
        ise=1.0 + rep, non_cured=0.8, right_censored=0.4,
    )


def test_exact_estimates_are_degenerate():
    m = _metrics([0.5] * 10, [0.1] * 10, [0.5] * 10)
    assert m["abias"] == 0 and m["mcsd"] == 0 and m["mse"] == 0 and m["cp"] == 1.0
    assert m["aasd"] == pytest.approx(0.1)


def test_halved_se_lowers_coverage():
    rng = np.random.default_rng(0)
    est = 0.5 + 0.2 * rng.standard_normal(2000)
    full = _metrics(est, np.full(2000, 0.2), np.full(2000, 0.5))["cp"]
    half = _metrics(est, np.full(2000, 0.1), np.full(2000, 0.5))["cp"]
    assert abs(full - 0.95) < 0.02
    assert half < 0.75


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=30), st.floats(-5, 5))
def test_mse_bounds_squared_bias(est, truth):
    m = _metrics(est, np.ones(len(est)), [truth] * len(est))
    assert m["mse"] >= m["abias"] ** 2 - 1e-9
    assert 0.0 <= m["cp"] <= 1.0


def test_report_ignores_order_and_counts_exclusions():
    rng = np.random.default_rng(1)
    results = [_result(r, {k: v + 0.1 * rng.standard_normal() for k, v in TRUTH.items()}, {k: 0.1 for k in TRUTH}) for r in range(8)]
    results.append(_result(8, {}, {}, ok=False, status="covariance: curvature"))
    results.append(_result(9, {}, {}, ok=False, status="max_iter"))
    a = summarize_replicates(Scenario(), results)
    b = summarize_replicates(Scenario(), list(reversed(results)))
    assert a.to_json() == b.to_json()
    assert a.used == 8 and a.excluded == {"covariance": 1, "max_iter": 1}
    assert a.exclusion_rate == pytest.approx(0.2)
    assert a.aise == pytest.approx(np.mean(np.arange(8) + 1.0))
    assert set(a.baseline) == {"h0_t1", "h0_t2", "h0_t3"}


def test_all_failed_raises():
    with pytest.raises(RuntimeError):
        summarize_replicates(Scenario(), [_result(0, {}, {}, ok=False, status="max_iter")])


def test_ise_against_quadrature():
    grid = BinGrid(np.array([0.0, 0.4, 1.0, 1.5]))
    theta = np.array([0.2, 1.5, 4.0])

    class Fit:
        pass

    fit = Fit()
    fit.grid, fit.eta = grid, theta
    t0 = 1.2
    ref = sum(quad(lambda t, c=c: (3 * t * t - c) ** 2, a, min(b, t0))[0]
              for a, b, c in zip(grid.edges[:-1], grid.edges[1:], theta) if a < t0)
    # 200-point trapezoid over a piecewise function: jumps cost O(h)
    assert integrated_squared_error(fit, t0) == pytest.approx(ref, rel=2e-2)
    assert integrated_squared_error(fit, t0, n_points=20001) == pytest.approx(ref, rel=1e-4)


def test_small_run_end_to_end():
    report, results = run_replications(Scenario(n=150, seed=3, n_o=5), 3, FitConfig(omega=5.0))
    assert report.reps == 3 and len(results) == 3
    assert [r.rep for r in results] == [0, 1, 2]
    for r in results:
        if r.ok:
            assert len(r.h0_points) == 3 and r.ise >= 0
            assert all(np.isfinite(list(r.se.values())))
    assert 0 <= report.mean_right_censored <= 1
