import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cureah.data import CensoringKind, DataError, ParamVector, block_slices, from_subjects, make_subject, validate_dataset


@pytest.mark.parametrize(
    "tl, tr, kind",
    [(1.0, 1.0, CensoringKind.EVENT), (0.0, 2.0, CensoringKind.LEFT), (1.0, math.inf, CensoringKind.RIGHT), (0.5, 1.5, CensoringKind.INTERVAL)],
)
def test_kind_inference(tl, tr, kind):
    s = make_subject(tl, tr, z=[1.0], w=[0.2])
    assert s.kind is kind
    assert sum(kind.indicators()) == 1


@pytest.mark.parametrize("tl, tr", [(2.0, 1.0), (-1.0, 1.0), (0.0, 0.0), (0.0, math.inf), (math.nan, 1.0)])
def test_invalid_intervals(tl, tr):
    with pytest.raises(DataError):
        make_subject(tl, tr)


def test_schedule_cut_at_follow_up_end():
    s = make_subject(0.0, 1.0, tv_times=[0.5, 2.0, 3.0], tv_values=[[0.0], [1.0], [2.0]])
    assert s.tv_times.tolist() == [0.5, 1.0]
    assert s.tv_values[:, 0].tolist() == [0.0, 1.0]


def test_schedule_must_cover_follow_up():
    with pytest.raises(DataError):
        make_subject(0.0, 2.0, tv_times=[0.5], tv_values=[[1.0]])


def test_step_covariate_value_and_integral():
    s = make_subject(2.0, 2.0, tv_times=[0.5, 2.0], tv_values=[[0.0], [1.0]])
    assert s.x_at(0.5)[0] == 0.0
    assert s.x_at(0.6)[0] == 1.0
    assert s.x_at(5.0)[0] == 1.0  # last value persists
    assert s.x_integral(1.5)[0] == pytest.approx(1.0)
    assert s.x_integral(3.0)[0] == pytest.approx(2.5)


def test_validate_reports_record_index():
    recs = [dict(t_left=1.0, t_right=1.0, z=[1], w=[1]), dict(t_left=3.0, t_right=1.0, z=[1], w=[1])]
    with pytest.raises(DataError) as exc:
        validate_dataset(recs)
    assert exc.value.row == 1


def test_dimension_mismatch_rejected():
    a = make_subject(1.0, 1.0, z=[1.0], w=[1.0])
    b = make_subject(1.0, 1.0, z=[1.0, 2.0], w=[1.0])
    with pytest.raises(DataError) as exc:
        from_subjects([a, b])
    assert exc.value.row == 1


@given(st.integers(0, 5), st.integers(0, 3), st.integers(0, 3), st.integers(0, 4))
def test_param_vector_round_trip(m, p, r, q):
    eta = np.arange(m + p + r + q, dtype=float)
    pv = ParamVector.unflatten(eta, m, p, r, q)
    assert pv.sizes == (m, p, r, q)
    np.testing.assert_array_equal(pv.flatten(), eta)
    sl = block_slices(m, p, r, q)
    np.testing.assert_array_equal(eta[sl["gamma"]], pv.gamma)
