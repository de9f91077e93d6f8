import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from quadsim.markov_chain import (
    ConvergenceError,
    StateDistribution,
    TransitionCounts,
    TransitionMatrix,
    count_transitions,
    estimate,
    propagate,
    stationary,
)

from oracles import matrix_power_dist, power_iteration, random_stochastic, stationary_linear


def test_count_small_sequence():
    assert count_transitions([0, 0, 1, 0], 2).counts.tolist() == [[1, 1], [1, 0]]


def test_count_single_state():
    assert count_transitions([0, 0, 0], 1).counts.tolist() == [[2]]


def test_count_total_is_length_minus_one():
    seq = np.random.default_rng(0).integers(0, 5, 10_000)
    c = count_transitions(seq, 5)
    assert c.counts.sum() == 9999
    assert np.array_equal(c.row_totals, c.counts.sum(axis=1))


def test_count_matches_pair_loop():
    seq = np.random.default_rng(1).integers(0, 4, 300)
    ref = np.zeros((4, 4), dtype=int)
    for a, b in zip(seq[:-1], seq[1:]):
        ref[a, b] += 1
    assert np.array_equal(count_transitions(seq, 4).counts, ref)


def test_count_out_of_range():
    with pytest.raises(IndexError):
        count_transitions([0, 3], 3)
    with pytest.raises(ValueError):
        count_transitions([0], 3)


def test_estimate_examples():
    assert estimate(TransitionCounts([[1, 1], [1, 0]])).probs.tolist() == [[0.5, 0.5], [1.0, 0.0]]
    assert estimate(TransitionCounts([[0, 0], [0, 0]]), "self_loop").probs.tolist() == [[1, 0], [0, 1]]
    assert estimate(TransitionCounts([[0, 0], [3, 1]]), "uniform").probs.tolist() == [[0.5, 0.5], [0.75, 0.25]]


def test_estimate_unknown_policy():
    with pytest.raises(ValueError):
        estimate(TransitionCounts([[1]]), "drop")


@given(arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(1, 8)).map(lambda t: (t[0], t[0])),
              elements=st.integers(0, 50)),
       st.sampled_from(["self_loop", "uniform"]))
def test_estimate_row_stochastic(counts, policy):
    pi = estimate(TransitionCounts(counts), policy)
    assert np.all(pi.probs >= 0) and np.all(pi.probs <= 1)
    assert np.max(np.abs(pi.probs.sum(axis=1) - 1.0)) <= 1e-12


@given(arrays(np.int64, (4, 4), elements=st.integers(0, 30)), st.integers(0, 3), st.integers(1, 9))
def test_estimate_row_scale_invariance(counts, row, k):
    scaled = counts.copy()
    scaled[row] *= k
    a = estimate(TransitionCounts(counts)).probs
    b = estimate(TransitionCounts(scaled)).probs
    assert np.allclose(a[row], b[row], atol=1e-15)


def test_transition_matrix_rejects_non_stochastic():
    with pytest.raises(ValueError):
        TransitionMatrix([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ValueError):
        TransitionMatrix([[1.5, -0.5], [0.5, 0.5]])


def test_transition_matrix_json_round_trip():
    pi = TransitionMatrix([[0.25, 0.75], [1.0, 0.0]])
    text = pi.to_json()
    assert json.loads(text) == [[0.25, 0.75], [1.0, 0.0]]
    assert np.array_equal(TransitionMatrix.from_json(text).probs, pi.probs)
    with pytest.raises(ValueError):
        TransitionMatrix.from_json("[[0.5, 0.4], [1.0, 0.0]]")


def test_propagate_identity():
    p = StateDistribution([0.2, 0.3, 0.5])
    out = propagate(p, TransitionMatrix.identity(3), 100)
    assert np.allclose(out.probs, p.probs, atol=1e-15)


def test_propagate_swap_three_steps():
    out = propagate(StateDistribution([1.0, 0.0]), TransitionMatrix([[0, 1], [1, 0]]), 3)
    assert out.probs.tolist() == [0.0, 1.0]


def test_propagate_zero_steps_is_identity():
    p = StateDistribution([0.1, 0.9])
    assert propagate(p, TransitionMatrix([[0, 1], [1, 0]]), 0) is p


def test_propagate_dimension_mismatch():
    with pytest.raises(ValueError):
        propagate(StateDistribution([0.5, 0.5]), TransitionMatrix.identity(3), 1)


def test_propagate_matches_matrix_power():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        P = random_stochastic(rng, n)
        p = rng.random(n)
        p /= p.sum()
        k = int(rng.integers(1, 40))
        assert np.allclose(propagate(StateDistribution(p), TransitionMatrix(P), k).probs,
                           matrix_power_dist(p, P, k), atol=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_propagate_stays_a_distribution(n_steps, n, seed):
    rng = np.random.default_rng(seed)
    P = random_stochastic(rng, n, zero_frac=0.3)
    p = rng.random(n)
    out = propagate(StateDistribution(p / p.sum()), TransitionMatrix(P), n_steps).probs
    assert np.all(out >= 0) and abs(out.sum() - 1.0) <= 1e-12


@given(st.integers(0, 200), st.integers(0, 200), st.integers(0, 2**32 - 1))
def test_propagate_semigroup(a, b, seed):
    rng = np.random.default_rng(seed)
    P = TransitionMatrix(random_stochastic(rng, 4, zero_frac=0.3))
    p = StateDistribution(np.full(4, 0.25))
    lhs = propagate(p, P, a + b).probs
    rhs = propagate(propagate(p, P, a), P, b).probs
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_propagate_converges_to_stationary():
    P = [[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.4, 0.4, 0.2]]
    ref = power_iteration(P, [0.0, 0.0, 1.0])
    out = propagate(StateDistribution.point(0, 3), TransitionMatrix(P), 10_000).probs
    assert np.max(np.abs(out - ref)) <= 1e-8


def test_stationary_examples():
    assert np.array_equal(stationary(TransitionMatrix.identity(3)).probs, np.full(3, 1 / 3))
    assert np.allclose(stationary(TransitionMatrix([[0.5, 0.5], [0.5, 0.5]])).probs, [0.5, 0.5])
    pi = stationary(TransitionMatrix([[0.9, 0.1], [0.5, 0.5]]), tol=1e-14)
    assert np.allclose(pi.probs, [5 / 6, 1 / 6], atol=1e-12)


def test_stationary_agrees_with_linear_solve():
    rng = np.random.default_rng(9)
    for _ in range(20):
        P = random_stochastic(rng, int(rng.integers(2, 8)))
        assert np.allclose(stationary(TransitionMatrix(P)).probs, stationary_linear(P), atol=1e-10)


def test_stationary_periodic_chain_does_not_converge_from_point():
    # the uniform start is already stationary for the swap chain, so use a
    # chain whose uniform start is not and whose period is 2
    P = TransitionMatrix([[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])
    with pytest.raises(ConvergenceError):
        stationary(P, max_iter=1000)
