import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdbounds.errors import IndexOutOfRange, NotGenerator, NotTP2, SizeCapExceeded
from sdbounds.hmm import TransitionMatrix, predict
from sdbounds.kron import (BENCHMARK_Q, JointIndexCodec, KronTransition, joint_index_codec,
                           kron_rank1_bounds, kron_transition, benchmark_chain, benchmark_factor,
                           sum_gaussian_obs, tp2_generator)
from sdbounds.opcount import count_multiplies
from sdbounds.orders import is_tp2, tp2_geq_multivariate

from conftest import Q3, random_belief, random_tp2


def expm_taylor(A, terms=80):
    """Scaling and squaring with a plain Taylor series; independent of scipy."""
    k = max(0, int(np.ceil(np.log2(max(np.abs(A).sum(axis=1).max(), 1e-16)))) + 1)
    B = A / 2 ** k
    out = np.eye(len(A))
    term = np.eye(len(A))
    for n in range(1, terms):
        term = term @ B / n
        out = out + term
    for _ in range(k):
        out = out @ out
    return out


# -- generator exponential --------------------------------------------------

@pytest.mark.parametrize("t", [0.1, 1.0, 2.0, 5.0])
def test_tp2_generator_matches_taylor_oracle(t):
    A = tp2_generator(BENCHMARK_Q, t).entries
    np.testing.assert_allclose(A, expm_taylor(BENCHMARK_Q * t), atol=1e-12)


def test_tp2_generator_zero_time_is_identity():
    np.testing.assert_array_equal(tp2_generator(BENCHMARK_Q, 0.0).entries, np.eye(5))


def test_tp2_generator_semigroup():
    A1 = tp2_generator(Q3, 1.0).entries
    A2 = tp2_generator(Q3, 2.0).entries
    np.testing.assert_allclose(A1 @ A1, A2, atol=1e-13)


def test_benchmark_factor_is_tp2_and_stochastic():
    for t in (0.5, 2.0, 10.0):
        A = benchmark_factor(t).entries
        assert is_tp2(A)
        np.testing.assert_allclose(A.sum(axis=1), 1, atol=1e-15)


def test_tp2_generator_rejects_bad_generators():
    with pytest.raises(NotGenerator):
        tp2_generator(np.array([[-1.0, 1.0], [1.0, -0.5]]), 1.0)
    with pytest.raises(NotGenerator):
        tp2_generator(np.array([[-1.0, 0.5, 0.5], [0.5, -1.0, 0.5], [0.5, 0.5, -1.0]]), 1.0)
    with pytest.raises(NotGenerator):
        tp2_generator(np.array([[1.0, -1.0], [0.5, -0.5]]), 1.0)
    with pytest.raises(ValueError):
        tp2_generator(Q3, -1.0)


# -- index codec ------------------------------------------------------------

def test_codec_examples():
    enc, dec = joint_index_codec((5,) * 5, base=1)
    assert enc((1, 1, 1, 1, 1)) == 1
    assert enc((5, 5, 5, 5, 5)) == 3125
    assert enc((1, 1, 1, 1, 2)) == 2
    assert enc((2, 1, 1, 1, 1)) == 626
    assert dec(3125) == (5, 5, 5, 5, 5)
    with pytest.raises(IndexOutOfRange):
        enc((0, 1, 1, 1, 1))
    with pytest.raises(IndexOutOfRange):
        dec(3126)


def test_codec_roundtrip_full_space():
    c = JointIndexCodec((5,) * 5, base=1)
    for f in range(1, 3126):
        assert c.encode(c.decode(f)) == f
    comps = c.decode_all()
    assert comps.shape == (3125, 5)
    assert comps.min() == 1 and comps.max() == 5


@settings(max_examples=100, deadline=None)
@given(shape=st.lists(st.integers(1, 5), min_size=1, max_size=4), data=st.data())
def test_codec_roundtrip_random(shape, data):
    c = JointIndexCodec(shape)
    idx = tuple(data.draw(st.integers(0, s - 1)) for s in shape)
    assert c.decode(c.encode(idx)) == idx


def test_codec_matches_numpy_kron_layout(rng):
    # Entry (i, j) of kron(A, B) is A[i1, j1] * B[i2, j2] with i = encode(i1, i2).
    A, B = random_tp2(3, rng), random_tp2(4, rng)
    K = np.kron(A, B)
    c = JointIndexCodec((3, 4))
    for _ in range(50):
        i1, j1 = rng.integers(3, size=2)
        i2, j2 = rng.integers(4, size=2)
        assert K[c.encode((i1, i2)), c.encode((j1, j2))] == A[i1, j1] * B[i2, j2]


# -- Kronecker transitions --------------------------------------------------

def test_kron_entry_spot_checks():
    A = benchmark_factor(2.0).entries
    P = benchmark_chain(L=3, lazy=False).entries
    c = JointIndexCodec((5, 5, 5), base=1)
    assert P[c.encode((1, 1, 1)) - 1, c.encode((1, 1, 1)) - 1] == pytest.approx(A[0, 0] ** 3)
    i, j = c.encode((2, 3, 5)) - 1, c.encode((1, 4, 5)) - 1
    assert P[i, j] == pytest.approx(A[1, 0] * A[2, 3] * A[4, 4], rel=1e-14)


def test_kron_is_stochastic_and_size():
    P = benchmark_chain(L=2, lazy=False)
    assert P.n_states == 25
    np.testing.assert_allclose(P.entries.sum(axis=1), 1, atol=1e-14)


def test_lazy_predict_matches_dense_27_states(rng):
    A = tp2_generator(Q3, 2.0)
    dense = kron_transition([A] * 3, lazy=False)
    lazy = kron_transition([A] * 3, lazy=True)
    assert isinstance(lazy, KronTransition)
    for _ in range(20):
        pi = random_belief(27, rng)
        np.testing.assert_allclose(predict(pi, lazy), predict(pi, dense), atol=1e-14)


def test_lazy_predict_mixed_factors(rng):
    fs = [random_tp2(2, rng), random_tp2(3, rng), random_tp2(4, rng)]
    lazy = KronTransition(fs)
    dense = np.kron(np.kron(fs[0], fs[1]), fs[2])
    pi = random_belief(24, rng)
    np.testing.assert_allclose(lazy.apply_transpose(pi), dense.T @ pi, atol=1e-14)


def test_lazy_predict_cost_benchmark_chain(rng):
    op = benchmark_chain(L=5, lazy=True)
    assert isinstance(op, KronTransition)
    # 3125 states is under the default cap, so the unforced chain is dense.
    assert not isinstance(benchmark_chain(L=5), KronTransition)
    with count_multiplies() as c:
        op.apply_transpose(random_belief(3125, rng))
    assert c.count == 3125 * 25


def test_dense_cap():
    op = benchmark_chain(L=5, lazy=True)
    with pytest.raises(SizeCapExceeded):
        op.dense(cap=1000)
    assert op.dense().n_states == 3125


def test_lazy_sampling_frequencies():
    A = tp2_generator(Q3, 1.0).entries
    op = KronTransition([A, A])
    rng = np.random.default_rng(5)
    n = 40000
    start = 4  # components (1, 1)
    hits = np.bincount([op.sample_next(start, rng) for _ in range(n)], minlength=9) / n
    row = np.kron(A, A)[start]
    assert np.all(np.abs(hits - row) <= 4 * np.sqrt(row * (1 - row) / n) + 1e-12)


def test_flat_kron_is_not_tp2_but_rows_are_mtp2_ordered():
    P = benchmark_chain(L=2, lazy=False).entries
    # The flat ordering of the joint space breaks TP2 ...
    assert not is_tp2(P)
    # ... but componentwise-larger states have MTP2-larger rows.
    c = JointIndexCodec((5, 5))
    for a in range(5):
        for b in range(4):
            lo, hi = P[c.encode((a, b))], P[c.encode((a, b + 1))]
            assert tp2_geq_multivariate(hi, lo, shape=(5, 5))
            if a < 4:
                hi = P[c.encode((a + 1, b))]
                assert tp2_geq_multivariate(hi, lo, shape=(5, 5))


# -- observations and bounds ------------------------------------------------

def test_sum_gaussian_levels():
    obs = sum_gaussian_obs((5,) * 5, 0.5)
    assert obs.levels.shape == (3125,)
    assert obs.levels[0] == 5 and obs.levels[-1] == 25
    assert obs.levels[JointIndexCodec((5,) * 5, base=1).encode((3, 1, 1, 1, 1)) - 1] == 7


def test_kron_rank1_bounds_rows(rng):
    fs = [benchmark_factor(2.0)] * 2
    lower, upper, per = kron_rank1_bounds(fs)
    A = fs[0].entries
    assert lower.rank == 1 and upper.rank == 1
    np.testing.assert_allclose(lower.entries[7], np.kron(A[0], A[0]), atol=1e-15)
    np.testing.assert_allclose(upper.entries[0], np.kron(A[-1], A[-1]), atol=1e-15)
    assert len(per) == 2
    # Joint bound predictions sandwich the true one in the MTP2 order.
    P = np.kron(A, A)
    for _ in range(20):
        pi = random_belief(25, rng)
        ex = P.T @ pi
        assert tp2_geq_multivariate(ex, predict(pi, lower), shape=(5, 5))
        assert tp2_geq_multivariate(predict(pi, upper), ex, shape=(5, 5))


def test_kron_rank1_bounds_rejects_non_tp2():
    with pytest.raises(NotTP2):
        kron_rank1_bounds([np.array([[0.5, 0.5], [0.9, 0.1]])])


def test_kron_transition_accepts_transition_matrices():
    A = TransitionMatrix(np.eye(2))
    P = kron_transition([A, A])
    np.testing.assert_array_equal(P.entries, np.eye(4))
    assert math.isclose(P.entries.sum(), 4)
