import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from outageid.identify import (
    Category,
    Observation,
    Placement,
    Ranking,
    apply_filter,
    categorize,
    error_measure,
    error_vector,
    rank_candidates,
    rank_errors,
)
from outageid.powerflow import PowerFlowSolution
from outageid.scenario import SignatureSet


def one_bus_sigs(deltas, ids=None):
    deltas = np.asarray(deltas, dtype=complex).reshape(len(deltas), -1)
    ids = ids or tuple(range(1, len(deltas) + 1))
    return SignatureSet("ac", ids, deltas, np.ones(len(deltas), dtype=bool))


def obs_from_delta(delta, buses=(0,)):
    delta = np.asarray(delta, dtype=complex)
    return Observation(Placement(buses), np.ones(len(buses), complex), 1 + delta)


def test_error_zero_when_observation_equals_signature(prep30):
    sigs = prep30.ac
    pl = Placement((0, 4, 9, 20))
    d = sigs.signature(7)[list(pl.buses)]
    obs = Observation(pl, prep30.base.V[list(pl.buses)], prep30.base.V[list(pl.buses)] + d)
    assert error_measure(sigs, 7, obs) == pytest.approx(0.0, abs=1e-15)


def test_single_component_norm():
    sigs = one_bus_sigs([0.01])
    obs = Observation(Placement((0,)), np.array([1.0 + 0j]), np.array([1.01 + 0.005j]))
    assert error_measure(sigs, 1, obs) == pytest.approx(0.005, abs=1e-15)


def test_unsolved_candidate_is_infinite():
    sigs = SignatureSet("ac", (1, 2), np.array([[0.01], [np.nan]], dtype=complex), np.array([True, False]))
    obs = obs_from_delta([0.01])
    assert math.isinf(error_measure(sigs, 2, obs))
    assert rank_candidates(sigs, obs).branch_ids == (1, 2)


def test_four_bus_rival_point(prep4, case4):
    """An observation sitting exactly on line 2's expected change is nearest line 2."""
    sigs = prep4.ac
    pl = Placement((case4.slack_bus, case4.bus_index(2)))
    buses = list(pl.buses)
    obs = Observation(pl, prep4.base.V[buses], prep4.base.V[buses] + sigs.signature(2)[buses])
    assert error_measure(sigs, 2, obs) == pytest.approx(0.0, abs=1e-15)
    assert error_measure(sigs, 1, obs) > 0
    assert rank_candidates(sigs, obs).branch_ids[0] == 2


def test_zero_noise_ranks_actual_first(prep30):
    sigs = prep30.ac
    full = Placement(tuple(range(30)))
    for bid in sigs.candidates:
        obs = Observation(full, prep30.base.V, sigs.post_voltage(bid))
        ranking = rank_candidates(sigs, obs)
        assert ranking.branch_ids[0] == bid
        assert ranking.errors[0] <= 1e-6


def test_ties_broken_by_branch_id():
    sigs = one_bus_sigs([0.0, 1.0, 0.5], ids=(3, 5, 9))
    # 0.25 is exactly equidistant from 0.0 and 0.5 in binary floating point
    ranking = rank_candidates(sigs, obs_from_delta([0.25]))
    assert ranking.errors[0] == ranking.errors[1] == 0.25
    assert ranking.branch_ids == (3, 9, 5)
    assert rank_errors((9, 2, 5), (1.0, 1.0, 0.5)).branch_ids == (5, 2, 9)


def test_empty_candidate_set_rejected():
    sigs = SignatureSet("ac", (), np.zeros((0, 1), complex), np.zeros(0, bool))
    with pytest.raises(ValueError):
        rank_candidates(sigs, obs_from_delta([0.0]))


def brute_force_ranking(sigs, base_v, obs):
    """Hand evaluation of every candidate's error, sorted by (E, id)."""
    rows = []
    for i, bid in enumerate(sigs.candidates):
        total = 0.0
        for k, bus in enumerate(obs.placement.buses):
            exp = sigs.delta[i, bus]
            got = obs.v_post[k] - obs.v_pre[k]
            total += abs(exp - got) ** 2
        rows.append((math.sqrt(total), bid))
    rows.sort()
    return [bid for _, bid in rows], [e for e, _ in rows]


@pytest.mark.parametrize("seed", range(5))
def test_ranking_matches_exhaustive_evaluation(prep30, seed):
    rng = np.random.default_rng(seed)
    buses = tuple(sorted(rng.choice(30, size=rng.integers(2, 31), replace=False)))
    pl = Placement(buses)
    b = list(buses)
    actual = prep30.ac.candidates[rng.integers(38)]
    noise = rng.normal(scale=2e-3, size=(2, len(b))) + 1j * rng.normal(scale=2e-3, size=(2, len(b)))
    obs = Observation(pl, prep30.base.V[b] + noise[0], prep30.ac.post_voltage(actual)[b] + noise[1])
    ids, errs = brute_force_ranking(prep30.ac, prep30.base.V, obs)
    ranking = rank_candidates(prep30.ac, obs)
    assert list(ranking.branch_ids) == ids
    np.testing.assert_allclose(ranking.errors, errs, rtol=1e-12)


def test_dc_mode_uses_angles_only(prep30):
    dc = prep30.dc
    pl = Placement(tuple(range(30)))
    theta0 = dc.base.Va
    v_pre = np.exp(1j * theta0)
    v_post = 1.05 * np.exp(1j * (theta0 + dc.delta[dc.index(9)]))  # magnitude change is ignored
    ranking = rank_candidates(dc, Observation(pl, v_pre, v_post))
    assert ranking.mode == "dc"
    assert ranking.branch_ids[0] == 9
    assert ranking.errors[0] == pytest.approx(0.0, abs=1e-12)


def test_polar_metric_identifies_zero_noise(prep30):
    pl = Placement(tuple(range(0, 30, 3)))
    b = list(pl.buses)
    obs = Observation(pl, prep30.base.V[b], prep30.ac.post_voltage(12)[b])
    ranking = rank_candidates(prep30.ac, obs, metric="polar")
    assert ranking.branch_ids[0] == 12 and ranking.errors[0] < 1e-12


def test_filter_epsilon_zero_is_conclusive():
    v = apply_filter(Ranking((4, 2), (0.3, 0.3)), 0.0)
    assert v.conclusive and v.delta_E == 0.0


def test_filter_arithmetic():
    v = apply_filter(Ranking((1, 2, 3), (0.001, 0.002, 0.01)), 0.0015)
    assert v.delta_E == pytest.approx(0.001)
    assert not v.conclusive
    assert v.identified == 1 and v.E1 == 0.001 and v.E2 == 0.002


def test_filter_single_candidate_always_conclusive():
    v = apply_filter(Ranking((8,), (0.5,)), 1e9)
    assert math.isinf(v.delta_E) and v.conclusive


def test_filter_rejects_bad_input():
    with pytest.raises(ValueError):
        apply_filter(Ranking((1, 2), (0.0, 1.0)), -1.0)
    with pytest.raises(ValueError):
        apply_filter(Ranking((), ()), 0.0)


@pytest.mark.parametrize("conclusive, identified, expected", [
    (True, 5, Category.CORRECT),
    (True, 6, Category.MISIDENTIFIED),
    (False, 5, Category.CORRECT_FILTERED),
    (False, 6, Category.MISIDENTIFIED_FILTERED),
])
def test_categorize(conclusive, identified, expected):
    from outageid.identify import Verdict

    v = Verdict(identified, 0.0, 1.0, 1.0, conclusive, 0.0)
    assert categorize(v, actual=5) is expected


errors = st.lists(st.floats(0, 1e3, allow_nan=False), min_size=2, max_size=12)


@given(errors, st.floats(0.01, 100))
def test_scaling_errors_keeps_argmin_and_scales_gap(errs, c):
    ids = tuple(range(1, len(errs) + 1))
    a = apply_filter(rank_errors(ids, errs), 0.0)
    b = apply_filter(rank_errors(ids, [e * c for e in errs]), 0.0)
    scaled_first = rank_errors(ids, [e * c for e in errs]).branch_ids[0]
    # exact ties can reorder only among equal values, which still carry the same E
    assert errs[scaled_first - 1] == errs[a.identified - 1] or scaled_first == a.identified
    assert b.delta_E == pytest.approx(a.delta_E * c, rel=1e-9, abs=1e-9)


@given(errors, st.floats(0, 10), st.floats(0, 10), st.integers(1, 12))
def test_epsilon_monotone_and_single_category(errs, e1, e2, actual):
    lo, hi = sorted((e1, e2))
    ranking = rank_errors(tuple(range(1, len(errs) + 1)), errs)
    v_lo, v_hi = apply_filter(ranking, lo), apply_filter(ranking, hi)
    assert v_lo.conclusive or not v_hi.conclusive
    assert isinstance(categorize(v_lo, actual), Category)
    if lo == 0:
        assert categorize(v_lo, actual) in (Category.CORRECT, Category.MISIDENTIFIED)


def test_placement_validation():
    with pytest.raises(ValueError):
        Placement(())
    with pytest.raises(ValueError):
        Placement((1, 1))
    with pytest.raises(ValueError):
        Placement((-1,))
    with pytest.raises(ValueError):
        Placement((40,)).check(30)


def test_observation_delta():
    obs = Observation(Placement((0, 1)), np.array([1, 1j]), np.array([1.1, 2j]))
    np.testing.assert_allclose(obs.delta, [0.1, 1j])
    with pytest.raises(ValueError):
        Observation(Placement((0,)), np.array([1, 2]), np.array([1, 2]))


def test_error_vector_order(prep30):
    pl = Placement((3, 7))
    obs = Observation(pl, prep30.base.V[[3, 7]], prep30.ac.post_voltage(2)[[3, 7]])
    e = error_vector(prep30.ac, obs)
    for i, bid in enumerate(prep30.ac.candidates):
        assert e[i] == pytest.approx(error_measure(prep30.ac, bid, obs), abs=1e-15)
