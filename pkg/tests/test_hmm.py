import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdbounds.errors import DimensionMismatch, ZeroLikelihood
from sdbounds.hmm import (DiscreteObservation, GaussianObservation, HmmModel, TransitionMatrix,
                          as_belief, bayes_update, conditional_mean, filter_update, map_estimate,
                          predict, run_filter, simulate)
from sdbounds.opcount import count_multiplies

from conftest import random_belief, random_stochastic

P2 = np.array([[0.9, 0.1], [0.2, 0.8]])
B2 = np.array([[0.8, 0.2], [0.3, 0.7]])


def model2():
    return HmmModel(TransitionMatrix(P2), DiscreteObservation(B2))


# -- filter_update ----------------------------------------------------------

def test_filter_update_hand_computed():
    # P' pi = (0.55, 0.45); y = 1 (index 0) weights by (0.8, 0.3).
    pred = np.array([0.55, 0.45])
    expected = pred * np.array([0.8, 0.3])
    expected /= expected.sum()
    out = filter_update(np.array([0.5, 0.5]), 0, model2())
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(out, [0.44 / 0.575, 0.135 / 0.575], atol=1e-15)


def test_filter_update_noninformative_returns_prediction(rng):
    X = 6
    P = random_stochastic(X, rng)
    B = np.tile(random_belief(4, rng), (X, 1))
    m = HmmModel(TransitionMatrix(P), DiscreteObservation(B))
    pi = random_belief(X, rng)
    for y in range(4):
        np.testing.assert_allclose(filter_update(pi, y, m), P.T @ pi, atol=1e-14)


def test_filter_update_perfect_observation():
    X = 4
    P = np.full((X, X), 0.25)
    m = HmmModel(TransitionMatrix(P), DiscreteObservation(np.eye(X)))
    out = filter_update(np.full(X, 0.25), 1, m)
    np.testing.assert_array_equal(out, np.eye(X)[1])


def test_filter_update_zero_likelihood():
    m = HmmModel(TransitionMatrix(np.eye(2)), DiscreteObservation(np.eye(2)))
    with pytest.raises(ZeroLikelihood):
        filter_update(np.array([1.0, 0.0]), 1, m)


def test_filter_update_is_composition(rng):
    X = 7
    P = random_stochastic(X, rng)
    B = random_stochastic(X, rng, 3)
    m = HmmModel(TransitionMatrix(P), DiscreteObservation(B))
    for _ in range(50):
        pi = random_belief(X, rng)
        y = int(rng.integers(3))
        np.testing.assert_array_equal(filter_update(pi, y, m),
                                      bayes_update(predict(pi, m.P), y, m.obs))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 31), c=st.floats(1e-3, 1e3))
def test_likelihood_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    X, Y = 5, 3
    P = random_stochastic(X, rng)
    B = random_stochastic(X, rng, Y)
    pi = random_belief(X, rng)
    y = int(rng.integers(Y))
    like = B[:, y]

    class Scaled:
        n_states = X

        def likelihood(self, yy):
            return c * like

    a = filter_update(pi, y, HmmModel(TransitionMatrix(P), DiscreteObservation(B)))
    b = bayes_update(predict(pi, P), y, Scaled())
    np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2 ** 31), X=st.integers(2, 12))
def test_filter_output_is_belief(seed, X):
    rng = np.random.default_rng(seed)
    P = random_stochastic(X, rng)
    B = random_stochastic(X, rng, 4)
    m = HmmModel(TransitionMatrix(P), DiscreteObservation(B))
    out = filter_update(random_belief(X, rng, 0.3), int(rng.integers(4)), m)
    assert out.min() >= 0
    assert abs(out.sum() - 1) <= 1e-9


# -- predict ----------------------------------------------------------------

def test_predict_identity(rng):
    pi = random_belief(5, rng)
    np.testing.assert_allclose(predict(pi, np.eye(5)), pi, atol=1e-15)


def test_predict_iid_returns_row(rng):
    row = random_belief(6, rng)
    P = TransitionMatrix.iid(row)
    for _ in range(5):
        np.testing.assert_allclose(predict(random_belief(6, rng), P), row, atol=1e-15)


def test_predict_factored_matches_dense_x5(rng):
    P = random_stochastic(5, rng)
    F = TransitionMatrix(P).factorize()
    pi = random_belief(5, rng)
    np.testing.assert_allclose(predict(pi, F), P.T @ pi, atol=1e-10)


def test_predict_factored_matches_dense_many(rng):
    for _ in range(1000):
        X = int(rng.integers(2, 65))
        R = int(rng.integers(1, X + 1))
        # Low-rank stochastic matrix: mixtures of R fixed rows.
        W = random_stochastic(X, rng, R)
        H = random_stochastic(R, rng, X)
        P = W @ H
        F = TransitionMatrix(P).factorize(rank=R)
        pi = random_belief(X, rng)
        np.testing.assert_allclose(predict(pi, F), predict(pi, TransitionMatrix(P)), atol=1e-8)


def test_predict_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        predict(np.full(3, 1 / 3), np.eye(4))


def test_predict_multiply_counts(rng):
    X, R = 40, 3
    P = random_stochastic(X, rng, R) @ random_stochastic(R, rng, X)
    pi = random_belief(X, rng)
    with count_multiplies() as dense:
        TransitionMatrix(P).apply_transpose(pi)
    with count_multiplies() as fact:
        TransitionMatrix(P).factorize(rank=R).apply_transpose(pi)
    assert dense.count == X * X
    assert fact.count == 2 * X * R + R


# -- TransitionMatrix -------------------------------------------------------

def test_transition_matrix_validation():
    with pytest.raises(ValueError):
        TransitionMatrix([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ValueError):
        TransitionMatrix([[1.2, -0.2], [0.5, 0.5]])
    with pytest.raises(DimensionMismatch):
        TransitionMatrix(np.ones((2, 3)) / 3)


def test_transition_matrix_rejects_bad_factors(rng):
    P = random_stochastic(4, rng)
    U, s, Vt = np.linalg.svd(P)
    with pytest.raises(ValueError):
        TransitionMatrix(P, factors=(U[:, :1], s[:1], Vt[:1]))


def test_transition_matrix_is_read_only(rng):
    T = TransitionMatrix(random_stochastic(3, rng))
    with pytest.raises(ValueError):
        T.entries[0, 0] = 1.0


# -- bayes_update -----------------------------------------------------------

def test_bayes_noninformative(rng):
    pi = random_belief(4, rng)
    obs = DiscreteObservation(np.full((4, 2), 0.5))
    np.testing.assert_allclose(bayes_update(pi, 1, obs), pi, atol=1e-15)


def test_bayes_point_mass_is_fixed(rng):
    obs = DiscreteObservation(random_stochastic(5, rng, 3))
    for i in range(5):
        for y in range(3):
            np.testing.assert_array_equal(bayes_update(np.eye(5)[i], y, obs), np.eye(5)[i])


def test_bayes_matches_identity_transition(rng):
    B = random_stochastic(3, rng, 2)
    m = HmmModel(TransitionMatrix(np.eye(3)), DiscreteObservation(B))
    pi = random_belief(3, rng)
    for y in range(2):
        np.testing.assert_allclose(bayes_update(pi, y, m.obs), filter_update(pi, y, m),
                                   atol=1e-15)


# -- estimates --------------------------------------------------------------

def test_conditional_mean_examples():
    assert conditional_mean(np.eye(4)[2], np.arange(1, 5)) == 3.0
    assert conditional_mean(np.full(5, 0.2), np.arange(1, 6)) == pytest.approx(3.0)
    assert conditional_mean([0.2, 0.3, 0.5], [1, 2, 3]) == pytest.approx(2.3)
    with pytest.raises(DimensionMismatch):
        conditional_mean([0.5, 0.5], [1, 2, 3])


def test_map_estimate_examples():
    assert map_estimate(np.eye(4)[2]) == 2
    assert map_estimate(np.full(4, 0.25)) == 0
    assert map_estimate([0.2, 0.5, 0.3]) == 1


def test_as_belief_rejects_non_simplex():
    with pytest.raises(ValueError):
        as_belief([0.5, 0.6])
    with pytest.raises(ValueError):
        as_belief([1.5, -0.5])


# -- Gaussian observations --------------------------------------------------

def test_gaussian_likelihood_proportional_to_density():
    obs = GaussianObservation([1.0, 2.0, 2.0, 3.0], 0.7)
    y = 2.4
    d = obs.density(y)
    like = obs.likelihood(y)
    np.testing.assert_allclose(like / like.max(), d / d.max(), rtol=1e-12)


def test_gaussian_likelihood_survives_extreme_snr():
    obs = GaussianObservation(np.arange(1, 6, dtype=float), 1e-3)
    pi = np.full(5, 0.2)
    out = bayes_update(pi, 3.0, obs)
    np.testing.assert_allclose(out, np.eye(5)[2], atol=1e-12)
    # Far outside the levels every density underflows in natural scale.
    assert np.all(obs.density(100.0) == 0)
    out = bayes_update(pi, 100.0, obs)
    assert out.argmax() == 4


def test_gaussian_sigma_must_be_positive():
    with pytest.raises(ValueError):
        GaussianObservation([1, 2], 0.0)


# -- simulate ---------------------------------------------------------------

def test_simulate_identity_chain():
    m = HmmModel(TransitionMatrix(np.eye(3)), DiscreteObservation(np.eye(3)))
    states, ys = simulate(m, 50, seed=1, pi0=np.eye(3)[1])
    assert np.all(states == 1)
    assert np.all(ys == 1)


def test_simulate_deterministic():
    m = model2()
    a = simulate(m, 100, seed=7)
    b = simulate(m, 100, seed=7)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_simulate_transition_frequencies():
    P = np.array([[0.7, 0.2, 0.1], [0.3, 0.4, 0.3], [0.05, 0.15, 0.8]])
    m = HmmModel(TransitionMatrix(P), DiscreteObservation(np.eye(3)))
    states, _ = simulate(m, 10 ** 6, seed=3)
    prev, nxt = states[:-1], states[1:]
    for i in range(3):
        n = np.count_nonzero(prev == i)
        freq = np.bincount(nxt[prev == i], minlength=3) / n
        se = np.sqrt(P[i] * (1 - P[i]) / n)
        assert np.all(np.abs(freq - P[i]) <= 3 * se + 1e-12), (i, freq, P[i])


def test_run_filter_shape(rng):
    m = model2()
    _, ys = simulate(m, 20, seed=0)
    out = run_filter(m, ys, [0.5, 0.5])
    assert out.shape == (20, 2)
    np.testing.assert_allclose(out.sum(axis=1), 1, atol=1e-12)


def test_model_dimension_checks():
    with pytest.raises(DimensionMismatch):
        HmmModel(TransitionMatrix(np.eye(2)), DiscreteObservation(np.eye(3)))
    with pytest.raises(DimensionMismatch):
        HmmModel(TransitionMatrix(np.eye(2)), DiscreteObservation(np.eye(2)), g=[1, 2, 3])
    m = model2()
    np.testing.assert_array_equal(m.g, [1.0, 2.0])
