import numpy as np
import pytest
from hypothesis import given, strategies as st

from quadsim.fuzzy_encoder import (
    CoverageError,
    FemBundle,
    InvalidFamilyError,
    MembershipFamily,
    PossibilityVector,
    FuzzyProbabilityVector,
    decode,
    fem_counts,
    fem_predict,
    fem_step,
    fem_train,
    fem_weights,
    fuzzify,
    make_family,
    normalize,
    numeric_moments,
    train_bundle,
)
from quadsim.markov_chain import StateDistribution, TransitionMatrix, propagate
from quadsim.trace_model import ScalarTrace

from oracles import crisp_conditional_mean, random_stochastic

KINDS = ["triangular", "trapezoidal", "gaussian", "indicator_partition"]


def _quadrature(fam, points=100_001):
    """Trapezoid rule on a dense grid, written independently of the package helper."""
    y = np.linspace(*fam.bounds, points)
    theta = np.asarray(fam.memberships(y))
    h = y[1] - y[0]
    w = np.full(points, h)
    w[0] = w[-1] = h / 2
    vol = w @ theta
    return vol, (w * y) @ theta / vol


# families ----------------------------------------------------------------

def test_indicator_two_cells():
    fam = make_family("indicator_partition", 2, [0, 2])
    assert fam.volumes.tolist() == [1.0, 1.0]
    assert fam.centroids.tolist() == [0.5, 1.5]
    assert fam.memberships(0.999).tolist() == [1.0, 0.0]
    assert fam.memberships(1.0).tolist() == [0.0, 1.0]
    assert fam.memberships(2.0).tolist() == [0.0, 1.0]


def test_triangular_three_on_zero_two():
    fam = make_family("triangular", 3, [0, 2])
    assert np.allclose(fam.volumes, [0.5, 1.0, 0.5])
    assert fam.centroids[1] == pytest.approx(1.0)
    vol, cen = _quadrature(fam)
    assert np.allclose(fam.volumes, vol, rtol=1e-6)
    assert np.allclose(fam.centroids, cen, rtol=1e-6)


def test_triangular_two_is_linear_ramps():
    fam = make_family("triangular", 2, [0, 1])
    for x in np.linspace(0, 1, 11):
        assert np.allclose(fam.memberships(x), [1 - x, x], atol=1e-15)
    assert np.allclose(fam.volumes, [0.5, 0.5])
    assert np.allclose(fam.centroids, [1 / 3, 2 / 3])


@pytest.mark.parametrize("kind", ["triangular", "trapezoidal", "gaussian"])
@pytest.mark.parametrize("n,bounds", [(2, (0, 1)), (5, (-3, 7)), (9, (0, 54))])
def test_closed_form_moments_match_quadrature(kind, n, bounds):
    fam = make_family(kind, n, bounds)
    vol, cen = _quadrature(fam)
    assert np.allclose(fam.volumes, vol, rtol=1e-6)
    assert np.allclose(fam.centroids, cen, rtol=1e-6)


def test_package_quadrature_helper_agrees_for_smooth_kinds():
    fam = make_family("gaussian", 6, (0, 10))
    vol, cen = numeric_moments(fam)
    assert np.allclose(vol, fam.volumes, rtol=1e-6) and np.allclose(cen, fam.centroids, rtol=1e-6)


def test_indicator_moments_exact_with_custom_edges():
    fam = make_family("indicator_partition", 3, (0, 10), {"edges": [0, 1, 4, 10]})
    assert fam.volumes.tolist() == [1.0, 3.0, 6.0]
    assert fam.centroids.tolist() == [0.5, 2.5, 7.0]


@pytest.mark.parametrize("kind", KINDS)
def test_family_invariants(kind):
    fam = make_family(kind, 7, (-2, 5))
    assert np.all(fam.volumes > 0)
    assert np.all((fam.centroids >= -2) & (fam.centroids <= 5))
    grid = np.linspace(-2, 5, 1001)
    theta = fam.memberships(grid)
    assert np.all(theta.max(axis=1) > 0) and np.all((theta >= 0) & (theta <= 1))


def test_invalid_families():
    with pytest.raises(InvalidFamilyError):
        make_family("triangular", 1, (0, 1))
    with pytest.raises(InvalidFamilyError):
        make_family("triangular", 3, (1, 1))
    with pytest.raises(InvalidFamilyError):
        make_family("triangular", 3, (0, 1), {"width": -1})
    with pytest.raises(InvalidFamilyError):
        make_family("cauchy", 3, (0, 1))
    with pytest.raises(InvalidFamilyError):
        make_family("indicator_partition", 2, (0, 1), {"edges": [0, 0.7, 0.5]})


def test_family_with_gaps_is_a_coverage_error():
    with pytest.raises(CoverageError):
        make_family("triangular", 3, (0, 2), {"width": 0.4})


@pytest.mark.parametrize("kind", KINDS)
def test_family_dict_round_trip(kind):
    fam = make_family(kind, 4, (0, 3))
    back = MembershipFamily.from_dict(fam.to_dict())
    assert back == fam and np.array_equal(back.centroids, fam.centroids)


# fuzzify / normalize / step ----------------------------------------------

def test_fuzzify_examples():
    fam = make_family("triangular", 3, (0, 2))
    assert fuzzify(1.0, fam).k.tolist() == [0.0, 1.0, 0.0]
    assert np.allclose(fuzzify(0.5, fam).k, [0.5, 0.5, 0.0])


@given(st.floats(0, 10, exclude_max=True))
def test_indicator_fuzzify_is_one_hot(x):
    k = fuzzify(x, make_family("indicator_partition", 5, (0, 10))).k
    assert sorted(k.tolist()) == [0, 0, 0, 0, 1]


def test_fuzzify_clamps_out_of_range():
    fam = make_family("triangular", 3, (0, 2))
    assert fuzzify(-5, fam).k.tolist() == fuzzify(0, fam).k.tolist()
    assert fuzzify(9, fam).k.tolist() == fuzzify(2, fam).k.tolist()


def test_normalize_examples():
    assert normalize(PossibilityVector([0.5, 0.5, 0])).k1.tolist() == [0.5, 0.5, 0.0]
    assert normalize(PossibilityVector([0.2, 0.2])).k1.tolist() == [0.5, 0.5]
    with pytest.raises(CoverageError, match="coverage violation"):
        normalize(PossibilityVector([0, 0, 0]))


def test_fem_step_examples():
    k1 = FuzzyProbabilityVector([0.3, 0.7])
    assert np.allclose(fem_step(k1, TransitionMatrix.identity(2)).k1, k1.k1)
    assert fem_step(FuzzyProbabilityVector([1, 0]), TransitionMatrix([[0.5, 0.5], [1, 0]])).k1.tolist() == [0.5, 0.5]
    assert fem_step(FuzzyProbabilityVector([0.5, 0.5]), TransitionMatrix([[0, 1], [1, 0]])).k1.tolist() == [0.5, 0.5]
    with pytest.raises(ValueError):
        fem_step(k1, TransitionMatrix.identity(3))


@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_iterated_fem_step_equals_propagate(n, seed):
    rng = np.random.default_rng(seed)
    P = TransitionMatrix(random_stochastic(rng, 5, zero_frac=0.4))
    k = rng.random(5)
    k1 = FuzzyProbabilityVector(k / k.sum())
    out = k1
    for _ in range(n):
        out = fem_step(out, P)
        assert abs(out.k1.sum() - 1) <= 1e-12
    ref = propagate(StateDistribution(k1.k1), P, n).probs
    assert np.max(np.abs(out.k1 - ref)) <= 1e-12


# prediction --------------------------------------------------------------

def test_identity_chain_returns_occupied_cell_centroid():
    fam = make_family("indicator_partition", 4, (0, 8))
    for x in [0.1, 2.5, 5.0, 7.9]:
        assert fem_predict(x, fam, TransitionMatrix.identity(4)) == pytest.approx(fam.centroids[int(x // 2)])


def test_swap_chain_hand_example():
    fam = make_family("triangular", 2, (0, 1))
    assert fem_predict(0.0, fam, TransitionMatrix([[0, 1], [1, 0]])) == pytest.approx(2 / 3)


def test_indicator_limit_matches_crisp_chain():
    rng = np.random.default_rng(21)
    P = random_stochastic(rng, 5)
    fam = make_family("indicator_partition", 5, (0, 10))
    edges = np.linspace(0, 10, 6)
    for x in rng.uniform(0, 10, 200):
        assert fem_predict(x, fam, TransitionMatrix(P)) == pytest.approx(crisp_conditional_mean(x, edges, P), abs=1e-10)


def test_vectorized_predict_matches_scalar():
    fam = make_family("gaussian", 6, (0, 5))
    P = TransitionMatrix(random_stochastic(np.random.default_rng(2), 6))
    xs = np.linspace(-1, 6, 31)
    vec = fem_predict(xs, fam, P, 3)
    assert np.allclose(vec, [fem_predict(x, fam, P, 3) for x in xs], atol=1e-15)


def test_predict_rejects_bad_arguments():
    fam = make_family("triangular", 3, (0, 2))
    with pytest.raises(ValueError):
        fem_predict(1.0, fam, TransitionMatrix.identity(3), 0)
    with pytest.raises(ValueError):
        fem_predict(1.0, fam, TransitionMatrix.identity(4))


@given(st.sampled_from(KINDS), st.integers(2, 9), st.floats(-50, 50), st.floats(0.5, 80),
       st.floats(-100, 100), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_prediction_within_centroid_hull(kind, n, lo, width, x, steps, seed):
    fam = make_family(kind, n, (lo, lo + width))
    P = TransitionMatrix(random_stochastic(np.random.default_rng(seed), n, zero_frac=0.5))
    out = fem_predict(x, fam, P, steps)
    assert fam.centroids.min() <= out <= fam.centroids.max()


class _Permuted:
    """A family with its functions listed in another order."""

    def __init__(self, fam, perm):
        self.n = fam.n
        self.perm = np.asarray(perm)
        self.fam = fam
        self.volumes = fam.volumes[self.perm]
        self.centroids = fam.centroids[self.perm]

    def memberships(self, x):
        return self.fam.memberships(x)[..., self.perm]


@given(st.permutations(list(range(5))), st.floats(0, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_relabeling_symmetry(perm, x, steps, seed):
    fam = make_family("triangular", 5, (0, 4))
    P = random_stochastic(np.random.default_rng(seed), 5)
    perm = np.asarray(perm)
    permuted_pi = TransitionMatrix(P[np.ix_(perm, perm)])
    a = fem_predict(x, fam, TransitionMatrix(P), steps)
    b = fem_predict(x, _Permuted(fam, perm), permuted_pi, steps)
    assert a == pytest.approx(b, abs=1e-12)


def test_decode_weighted_centroids():
    fam = make_family("triangular", 3, (0, 2))
    w = np.array([0.2, 0.3, 0.5])
    ref = np.sum(w * fam.volumes * fam.centroids) / np.sum(w * fam.volumes)
    assert decode(w, fam) == pytest.approx(ref)


# training ----------------------------------------------------------------

def test_constant_trace_occupies_one_state():
    fam = make_family("triangular", 4, (0, 3))
    P = fem_train(ScalarTrace([1.1] * 20, 1.0), fam)
    assert P.probs[1, 1] == 1.0
    assert np.array_equal(P.probs, np.eye(4))


def test_alternating_trace_on_indicator_cells():
    fam = make_family("indicator_partition", 2, (0, 2))
    P = fem_train(ScalarTrace([0.5, 1.5] * 10, 1.0), fam)
    assert P.probs.tolist() == [[0, 1], [1, 0]]


def test_soft_counts_hand_example():
    fam = make_family("triangular", 2, (0, 1))
    trace = ScalarTrace([0.5] * 5, 1.0)
    counts = fem_counts(trace, fam, "soft").counts
    assert np.allclose(counts, np.full((2, 2), 0.25 * 4))
    assert np.allclose(fem_train(trace, fam, "soft").probs, 0.5)


def test_argmax_ties_go_low():
    fam = make_family("triangular", 3, (0, 2))
    # 0.5 has equal membership in subsets 0 and 1
    assert fem_counts(ScalarTrace([0.5, 0.5], 1.0), fam).counts[0, 0] == 1


def test_training_rejects_short_trace_and_bad_rule():
    fam = make_family("triangular", 3, (0, 2))
    with pytest.raises(ValueError):
        fem_train(ScalarTrace([1.0], 1.0), fam)
    with pytest.raises(ValueError):
        fem_train(ScalarTrace([1.0, 1.0], 1.0), fam, "vote")


class _Holey:
    """A family whose subsets miss the value 5."""

    n = 2

    def memberships(self, xs):
        xs = np.atleast_1d(xs)
        return np.where(xs[:, None] == 5.0, 0.0, 0.5) * np.ones((1, 2))


def test_uncovered_sample_is_named():
    with pytest.raises(CoverageError) as err:
        fem_counts(ScalarTrace([1.0, 2.0, 5.0, 1.0], 1.0), _Holey())
    assert err.value.index == 2 and err.value.value == 5.0


def test_bundle_round_trip(tmp_path):
    fam = make_family("gaussian", 4, (0, 1))
    bundle = train_bundle(ScalarTrace(np.linspace(0, 1, 50), 1.0), fam)
    back = FemBundle.load(bundle.save(tmp_path / "b.json"))
    assert np.array_equal(back.transition.probs, bundle.transition.probs)
    assert back.predict(0.3) == bundle.predict(0.3)
    assert fem_weights(0.3, fam, bundle.transition).shape == (4,)
