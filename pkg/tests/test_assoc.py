import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gnntrack.assoc import (NonFiniteCostError, assignment_cost, greedy_match, match_with_gating,
                            solve_assignment)

from oracles import brute_force_min_cost


def test_examples():
    assert solve_assignment([[4, 1, 3], [2, 0, 5], [3, 2, 2]]) == [(0, 1), (1, 0), (2, 2)]
    assert solve_assignment(np.zeros((0, 3))) == []
    assert solve_assignment(np.zeros((2, 0))) == []
    assert solve_assignment(np.zeros((2, 3))) == [(0, 0), (1, 1)]
    assert solve_assignment([[1.0], [0.0], [2.0]]) == [(1, 0)]


def test_rejects_non_finite():
    with pytest.raises(NonFiniteCostError, match=r"\(1, 0\)"):
        solve_assignment([[0.0, 1.0], [np.inf, 2.0]])
    with pytest.raises(NonFiniteCostError):
        solve_assignment([[np.nan]])


shapes = st.tuples(st.integers(0, 6), st.integers(0, 6))


@settings(max_examples=300, deadline=None)
@given(shapes.flatmap(lambda s: arrays(np.int64, s, elements=st.integers(-20, 20))))
def test_matches_brute_force(cost):
    pairs = solve_assignment(cost)
    M, N = cost.shape
    assert len(pairs) == min(M, N)
    assert len({i for i, _ in pairs}) == len({j for _, j in pairs}) == len(pairs)
    assert assignment_cost(cost, pairs) == brute_force_min_cost(cost)


@settings(max_examples=100, deadline=None)
@given(shapes.flatmap(lambda s: arrays(np.float64, s, elements=st.floats(0, 1))), st.floats(-5, 5))
def test_row_shift_invariance(cost, shift):
    if cost.size == 0:
        return
    base = assignment_cost(cost, solve_assignment(cost))
    shifted = cost.copy()
    if cost.shape[0] <= cost.shape[1]:
        shifted[0] += shift  # every row is matched, so the optimum moves by exactly `shift`
        expect = base + shift
    else:
        shifted[:, 0] += shift
        expect = base + shift
    assert assignment_cost(shifted, solve_assignment(shifted)) == pytest.approx(expect, abs=1e-9)


def test_match_with_gating_threshold_and_mask():
    A = np.array([[0.9, 0.2], [0.3, 0.4]])
    out = match_with_gating(A, 0.5)
    assert out.matches == [(0, 0)]
    assert out.unmatched_tracks == [1] and out.unmatched_detections == [1]
    out = match_with_gating(A, 0.5, mask=[[False, True], [True, True]])
    assert out.matches == [] and out.unmatched_tracks == [0, 1]
    out.validate(2, 2)
    empty = match_with_gating(np.zeros((0, 3)))
    assert empty.unmatched_detections == [0, 1, 2]
    with pytest.raises(ValueError):
        match_with_gating(np.zeros(3))


def test_match_with_gating_is_global_not_greedy():
    A = np.array([[0.9, 0.8], [0.85, 0.1]])
    assert match_with_gating(A, 0.5).matches == [(0, 1), (1, 0)]
    assert greedy_match(A, 0.5).matches == [(0, 0)]


def test_greedy_tie_break():
    S = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert greedy_match(S, 0.5).matches == [(0, 0), (1, 1)]
    assert greedy_match(S, 0.6).matches == []
