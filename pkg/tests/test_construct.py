import cvxpy as cp
import numpy as np
import pytest

from sdbounds.admm import (Polytope, inner_solve, nuclear_norm, project_l1_rows,
                           project_simplex_rows, svt)
from sdbounds.construct import (LOWER, UPPER, BoundPair, Partition, SolverConfig, cut_matrix,
                                lp_bounds, lp_row, mlr_envelope_bounds, mlr_envelope_rows,
                                nuclear_bound_pair, nuclear_norm_bound, postprocess, rank1_bounds,
                                refine_active, update_weights)
from sdbounds.copositive import build_M, copositive_order
from sdbounds.errors import InvalidBounds, NotTP2, PostProcessDegraded, SizeCapExceeded
from sdbounds.hmm import TransitionMatrix
from sdbounds.kron import benchmark_chain, benchmark_factor
from sdbounds.orders import mlr_geq

from conftest import random_stochastic, random_tp2


# -- rank-one, envelope and LP bounds ---------------------------------------

def test_rank1_bounds_example():
    A = benchmark_factor(2.0).entries
    bp = rank1_bounds(A)
    np.testing.assert_array_equal(bp.lower.entries, np.tile(A[0], (5, 1)))
    np.testing.assert_array_equal(bp.upper.entries, np.tile(A[-1], (5, 1)))
    assert bp.ranks == (1, 1)
    assert bp.certificates["lower"].certified and bp.certificates["upper"].certified
    expect = max(np.abs(A - A[0]).sum(axis=1).max(), np.abs(A - A[-1]).sum(axis=1).max())
    assert bp.epsilon == pytest.approx(expect)
    bp.check(A)


def test_rank1_bounds_reject_non_tp2():
    with pytest.raises(NotTP2):
        rank1_bounds(np.array([[0.5, 0.5], [0.9, 0.1]]))


def test_envelope_reduces_to_rank1_for_tp2(rng):
    for _ in range(10):
        P = random_tp2(6, rng)
        lo, hi = mlr_envelope_rows(P)
        np.testing.assert_allclose(lo, P[0], atol=1e-12)
        np.testing.assert_allclose(hi, P[-1], atol=1e-12)


def test_envelope_rows_bracket_every_row(rng):
    for _ in range(20):
        P = random_stochastic(7, rng)
        lo, hi = mlr_envelope_rows(P)
        for row in P:
            assert mlr_geq(row, lo, 1e-12)
            assert mlr_geq(hi, row, 1e-12)


def test_envelope_bounds_for_kronecker_chain():
    P = benchmark_chain(L=2, lazy=False).entries
    bp = mlr_envelope_bounds(P)
    for side in ("lower", "upper"):
        cert = bp.certificates[side]
        assert cert.certified
        assert all(p.depth == 0 for p in cert.parts)
    bp.check(P)


def lp_grid_oracle(p, ref, n=300):
    """Smallest l1 distance from p over a grid of MLR-lower rows (X = 3)."""
    best = np.inf
    for a in range(n + 1):
        for b in range(n + 1 - a):
            r = np.array([a, b, n - a - b]) / n
            if mlr_geq(ref, r, 1e-12):
                best = min(best, np.abs(p - r).sum())
    return best


def test_lp_row_matches_grid_oracle(rng):
    for _ in range(5):
        P = random_tp2(3, rng)
        for i in range(3):
            r, obj = lp_row(P[i], P[0], LOWER)
            assert mlr_geq(P[0], r, 1e-9)
            assert obj == pytest.approx(np.abs(P[i] - r).sum(), abs=1e-9)
            grid = lp_grid_oracle(P[i], P[0])
            assert obj <= grid + 1e-9
            assert grid - obj <= 3 * 2 / 300


def test_lp_bounds_beat_rank1(rng):
    for _ in range(5):
        P = random_tp2(5, rng)
        lp, r1 = lp_bounds(P), rank1_bounds(P)
        lp.check(P)
        assert lp.epsilon <= r1.epsilon + 1e-9
        np.testing.assert_allclose(lp.lower.entries[0], P[0], atol=1e-9)


def test_lp_bounds_reject_non_tp2():
    with pytest.raises(NotTP2):
        lp_bounds(np.array([[0.5, 0.5], [0.9, 0.1]]))


def test_bound_pair_check_rejects_uncertified(rng):
    P = random_tp2(4, rng)
    bp = rank1_bounds(P)
    bad = BoundPair(bp.upper, bp.lower, 2.0, (1, 1),
                    {"lower": copositive_order(bp.upper.entries, P)})
    with pytest.raises(InvalidBounds):
        bad.check(P)
    tight = BoundPair(bp.lower, bp.upper, 1e-3, (1, 1), bp.certificates)
    with pytest.raises(InvalidBounds):
        tight.check(P)


# -- building blocks of the nuclear-norm solver -----------------------------

def test_project_simplex_rows_against_cvxpy(rng):
    Y = rng.normal(size=(4, 5))
    out = project_simplex_rows(Y)
    for k in range(4):
        z = cp.Variable(5)
        cp.Problem(cp.Minimize(cp.sum_squares(z - Y[k])), [z >= 0, cp.sum(z) == 1]).solve()
        np.testing.assert_allclose(out[k], z.value, atol=1e-6)


def test_project_l1_rows(rng):
    D = rng.normal(size=(6, 5))
    out = project_l1_rows(D, 1.0)
    assert np.abs(out).sum(axis=1).max() <= 1 + 1e-12
    for k in range(6):
        z = cp.Variable(5)
        cp.Problem(cp.Minimize(cp.sum_squares(z - D[k])), [cp.norm1(z) <= 1]).solve()
        np.testing.assert_allclose(out[k], z.value, atol=1e-5)
    small = D / (np.abs(D).sum(axis=1, keepdims=True) * 2)
    np.testing.assert_array_equal(project_l1_rows(small, 1.0), small)


def test_svt_is_nuclear_prox(rng):
    Y = rng.normal(size=(5, 5))
    t = 0.7
    Z, _ = svt(Y, t)
    V = cp.Variable((5, 5))
    cp.Problem(cp.Minimize(0.5 * cp.sum_squares(V - Y) + t * cp.normNuc(V))).solve()
    np.testing.assert_allclose(Z, V.value, atol=1e-4)


def test_svt_identity_at_zero_threshold(rng):
    Y = rng.normal(size=(4, 4))
    np.testing.assert_allclose(svt(Y, 0.0)[0], Y, atol=1e-12)


def test_cut_matrix_matches_copositivity_entries(rng):
    X = 4
    P = random_tp2(X, rng)
    part = Partition(X)
    A = cut_matrix(P, part, LOWER)
    np.testing.assert_allclose(A @ P.reshape(-1), 0, atol=1e-14)
    for _ in range(20):
        Z = random_stochastic(X, rng)
        lhs = A @ Z.reshape(-1)
        # With the unrefined partition the vertex entries are the entries of M.
        ent = np.concatenate([build_M(Z, P, m)[np.triu_indices(X)] for m in range(X - 1)])
        nz = np.abs(ent) > 1e-12
        np.testing.assert_array_equal(np.sign(lhs[nz]), np.sign(ent[nz]))
    Au = cut_matrix(P, part, UPPER)
    Z = random_stochastic(X, rng)
    ent = np.concatenate([build_M(P, Z, m)[np.triu_indices(X)] for m in range(X - 1)])
    nz = np.abs(ent) > 1e-12
    np.testing.assert_array_equal(np.sign((Au @ Z.reshape(-1))[nz]), np.sign(ent[nz]))


def test_refine_active_splits_only_active_cells(rng):
    X = 4
    P = random_tp2(X, rng)
    part = Partition(X)
    assert refine_active(P, P, part, LOWER, 1e-3, 12) == X - 1
    assert part.n_cells() == 2 * (X - 1)
    part = Partition(X)
    lo = np.tile(P[0], (X, 1))
    # Rank-one lower bound: M has strictly positive off-diagonal entries here.
    split = refine_active(lo, P, part, LOWER, -1.0, 12)
    assert split == 0


def test_update_weights_identity_start(rng):
    X, delta = 5, 1e-3
    Z = random_stochastic(X, rng)
    W1, W2 = update_weights(np.eye(X), np.eye(X), Z, delta)
    U, s, Vt = np.linalg.svd(Z)
    G1 = (U * s) @ U.T + delta * np.eye(X)
    G2 = (Vt.T * s) @ Vt + delta * np.eye(X)
    np.testing.assert_allclose(W1 @ G1 @ W1, np.eye(X), atol=1e-8)
    np.testing.assert_allclose(W2 @ G2 @ W2, np.eye(X), atol=1e-8)
    np.testing.assert_allclose(W1, W1.T, atol=1e-12)


def cvxpy_weighted(W1, W2, poly):
    X = poly.X
    Z = cp.Variable((X, X))
    cons = [Z >= 0, cp.sum(Z, axis=1) == 1,
            cp.sum(cp.abs(Z - poly.P), axis=1) <= poly.eps]
    if poly.A is not None:
        cons.append(poly.A @ cp.vec(Z, order="C") >= 0)
    prob = cp.Problem(cp.Minimize(cp.normNuc(W1 @ Z @ W2)), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, Z.value


@pytest.mark.parametrize("eps", [0.3, 0.8])
def test_inner_solve_matches_cvxpy(rng, eps):
    X = 5
    P = benchmark_factor(2.0).entries
    poly = Polytope(P, eps, cut_matrix(P, Partition(X), LOWER))
    W1, W2 = update_weights(np.eye(X), np.eye(X), random_stochastic(X, rng), 0.1)
    ref, _ = cvxpy_weighted(W1, W2, poly)
    res = inner_solve(W1, W2, poly, max_iter=20000, feas_tol=1e-5, obj_rtol=1e-7)
    assert res.violation <= 1e-4
    assert res.objective == pytest.approx(ref, rel=1e-3)


def test_polish_matches_cvxpy(rng):
    from sdbounds.sdp import polish_solve
    X = 5
    P = benchmark_factor(2.0).entries
    poly = Polytope(P, 0.5, cut_matrix(P, Partition(X), UPPER))
    W1, W2 = np.eye(X), np.eye(X)
    ref, _ = cvxpy_weighted(W1, W2, poly)
    Z, obj = polish_solve(W1, W2, poly)
    assert obj == pytest.approx(ref, rel=1e-6, abs=1e-7)
    assert nuclear_norm(Z) == pytest.approx(ref, rel=1e-6)
    assert poly.violation(Z) <= 1e-7


# -- post-processing --------------------------------------------------------

def test_postprocess_keeps_stochastic_low_rank():
    P = benchmark_chain(L=1, lazy=False).entries
    lo = np.tile(P[0], (5, 1))
    raw = lo + 1e-9 * np.outer(np.arange(5) - 2, [1, -1, 0, 0, 0])
    M, rep = postprocess(raw)
    assert rep["rank"] == 1 and rep["kept"] == 1
    np.testing.assert_allclose(M.entries, lo, atol=1e-8)
    assert rep["shift"] == 0


def test_postprocess_shift_and_degrade():
    raw = np.array([[1.0, 0.0], [0.0, 1.0]])
    M, rep = postprocess(raw)
    np.testing.assert_array_equal(M.entries, raw)
    # Dropping the second singular value (0.2) moves the matrix by 20 percent.
    with pytest.raises(PostProcessDegraded):
        postprocess(np.array([[0.6, 0.4], [0.4, 0.6]]), trunc_rtol=0.5)
    with pytest.raises(PostProcessDegraded):
        postprocess(raw, trunc_rtol=2.0)
    M, rep = postprocess(np.array([[0.5, -1e-9, 0.5], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]]))
    assert rep["shift"] == pytest.approx(1e-9)
    assert M.entries.min() >= 0


# -- nuclear-norm bounds ----------------------------------------------------

def test_nuclear_epsilon_zero_returns_p():
    P = benchmark_factor(2.0)
    res = nuclear_norm_bound(P, LOWER, epsilon=0.0)
    np.testing.assert_array_equal(res.matrix.entries, P.entries)
    assert res.certified and res.rank == 5


def test_nuclear_size_cap():
    with pytest.raises(SizeCapExceeded):
        nuclear_norm_bound(np.full((70, 70), 1 / 70), LOWER)


def test_nuclear_bad_side():
    with pytest.raises(ValueError):
        nuclear_norm_bound(benchmark_factor(2.0), "middle")


@pytest.mark.slow
def test_nuclear_bound_pair_small():
    P = benchmark_factor(2.0).entries
    cfg = SolverConfig(epsilon=0.6, max_inner_iters=1500)
    pair = nuclear_bound_pair(P, cfg)
    assert pair.certificates["lower"].certified
    assert pair.certificates["upper"].certified
    assert max(pair.ranks) <= 5
    for B in (pair.lower, pair.upper):
        assert B.entries.min() >= 0
        np.testing.assert_allclose(B.entries.sum(axis=1), 1, atol=1e-12)
        assert np.abs(B.entries - P).sum(axis=1).max() <= 0.6 + 1e-6


@pytest.mark.slow
def test_nuclear_large_epsilon_reaches_rank_one():
    P = benchmark_factor(2.0).entries
    eps = rank1_bounds(P).epsilon
    res = nuclear_norm_bound(P, LOWER, SolverConfig(epsilon=eps + 0.05, max_inner_iters=1500))
    assert res.certified
    assert res.rank == 1


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(epsilon=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(reweight_iters=0)


def test_transition_matrix_from_bound_is_factorizable():
    P = benchmark_factor(2.0).entries
    lo = rank1_bounds(P).lower
    assert isinstance(lo, TransitionMatrix) and lo.is_iid
