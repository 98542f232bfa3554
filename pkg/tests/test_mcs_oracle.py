from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcsforge.diversity import ReturnMatrix
from mcsforge.envs import MATRIX_PAYOFF, WEIGHTED_REACH_PAYOFF, EnvSpec
from mcsforge.mcs_oracle import (
    CapacityError, best_responders, coverage_report, exact_return_matrix, feasibility_check,
    is_coverage_set, minimal_coverage_sets, policy_universe,
)


def brute_force_minimal(V, tol=1e-9):
    """Powerset search: covers every column and no single removal still covers."""
    n = V.shape[0]

    def covers(s):
        return bool(s) and all(max(V[r, c] for r in s) >= V[:, c].max() - tol for c in range(V.shape[1]))

    out = []
    for size in range(1, n + 1):
        for s in combinations(range(n), size):
            if covers(s) and not any(covers(tuple(x for x in s if x != r)) for r in s):
                out.append(s)
    return out


def test_matrix_universe_reproduces_payoff():
    R = exact_return_matrix(policy_universe("RepeatedMatrix"), per_step=True)
    assert np.array_equal(R.values, MATRIX_PAYOFF)
    assert not R.stderr.any()


def test_matrix_minimal_set_is_everything():
    U = policy_universe("RepeatedMatrix")
    R = exact_return_matrix(U)
    assert minimal_coverage_sets(U, R) == [(0, 1, 2)]
    assert not is_coverage_set((0, 1), U, R)


def test_weighted_reach_universe():
    U = policy_universe(EnvSpec("WeightedCoopReach"))
    R = exact_return_matrix(U, episodes_per_cell=16)
    assert np.allclose(R.values, WEIGHTED_REACH_PAYOFF)
    assert minimal_coverage_sets(U, R) == [(0, 1, 2, 3)]


def test_coop_reach_universe_is_identity():
    U = policy_universe("CoopReach")
    R = exact_return_matrix(U, episodes_per_cell=16)
    assert np.allclose(R.values, np.eye(4))


def test_cycle_coverage_example():
    # each policy best-responds to two teammates on a four-cycle
    V = np.array([[1, 1, 0, 0], [0, 1, 1, 0], [0, 0, 1, 1], [1, 0, 0, 1]], dtype=float)
    got = minimal_coverage_sets(None, V)
    assert got == [(0, 2), (1, 3)]
    assert got == brute_force_minimal(V)


@given(st.integers(0, 100_000), st.integers(2, 6), st.integers(2, 6))
@settings(max_examples=80, deadline=None)
def test_minimal_sets_match_brute_force(seed, n, m):
    V = np.random.default_rng(seed).integers(0, 3, size=(n, m)).astype(float)
    assert minimal_coverage_sets(None, V) == sorted(brute_force_minimal(V), key=lambda s: (len(s), s))


@given(st.integers(0, 100_000))
@settings(max_examples=40, deadline=None)
def test_coverage_is_monotone(seed):
    rng = np.random.default_rng(seed)
    V = rng.integers(0, 3, size=(5, 5)).astype(float)
    for s in minimal_coverage_sets(None, V):
        extra = [k for k in range(5) if k not in s]
        if extra:
            assert is_coverage_set(set(s) | {extra[0]}, None, V)


def test_tolerance_choice_depends_on_stderr():
    vals = np.array([[1.0, 0.0], [1.0 - 5e-4, 1.0]])
    exact = ReturnMatrix(vals, np.zeros_like(vals))
    noisy = ReturnMatrix(vals, np.full_like(vals, 0.01))
    assert best_responders(exact)[0] == frozenset({0})
    assert best_responders(noisy)[0] == frozenset({0, 1})


def test_feasibility_check():
    V = np.array([[10, 0, 4], [0, 6, 4], [4, 4, 6], [1, 1, 1]], dtype=float)
    assert feasibility_check(1, None, V) == (True, 1)
    assert feasibility_check(3, None, V) == (False, None)
    with pytest.raises(IndexError):
        feasibility_check(7, None, V)


def test_capacity_error():
    with pytest.raises(CapacityError):
        minimal_coverage_sets(None, np.eye(21))


def test_out_of_range_candidate():
    with pytest.raises(IndexError):
        is_coverage_set((5,), None, np.eye(3))


def test_report_text_and_csv():
    U = policy_universe("RepeatedMatrix")
    rep = coverage_report(U)
    text = rep.to_text()
    assert "{a1, a2, a3}" in text
    rows = rep.to_csv().strip().splitlines()
    assert rows[0] == "candidate,size,is_coverage,is_minimal"
    assert len(rows) == 1 + 7
    assert "a1 a2 a3,3,1,1" in rows
    assert all(rep.feasible)
