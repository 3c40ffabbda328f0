"""Offline construction of copositively ordered bound matrices.

Given a transition matrix ``P``, a lower bound ``P_lo`` and an upper bound
``P_hi`` satisfy ``P_lo <= P <= P_hi`` in the copositive ordering. Filters
run with the bounds then sandwich the optimal filter in the MLR order at
every step. Three constructions are provided:

* :func:`rank1_bounds` repeats the first (last) row of a TP2 matrix;
* :func:`lp_bounds` moves each row as close to ``P_i`` as an MLR constraint
  against the first (last) row allows;
* :func:`nuclear_norm_bound` searches for a low-rank bound within a per-row
  l1 distance ``eps`` by reweighted nuclear-norm minimization, enforcing
  copositivity on a simplicial partition that is refined between solves.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .admm import Polytope, inner_solve, nuclear_norm
from .copositive import Cell, build_M, copositive_order
from .errors import (Infeasible, InvalidBounds, NotTP2, PostProcessDegraded, SizeCapExceeded,
                     SolverStalled)
from .hmm import TransitionMatrix, numerical_rank
from .orders import is_tp2

log = logging.getLogger(__name__)

LOWER = "lower"
UPPER = "upper"


@dataclass
class SolverConfig:
    """Settings for :func:`nuclear_norm_bound`.

    Attributes
    ----------
    epsilon : float
        Per-row l1 radius around the rows of ``P``.
    delta : float
        Regularizer in the weight update ``(... + delta I)^(-1/2)``.
    reweight_iters : int
        Weighted solves per simplicial iteration.
    simplicial_tol : float
        Stop refining once the objective drops by less than this.
    feas_tol, obj_rtol, max_inner_iters
        ADMM stopping rule.
    trunc_rtol : float
        Post-processing drops singular values below ``trunc_rtol * sigma_1``.
    rank_rtol : float
        Numerical rank counts singular values above ``rank_rtol * sigma_1``.
    cert_tol : float
        Entrywise tolerance of the vertex test used for the final certificate.
    max_outer : int
        Cap on simplicial iterations.
    max_depth : int
        Bisection depth cap, both for solver partitions and certificates.
    active_tol : float
        A vertex-pair constraint counts as active below this value.
    polish : bool
        Re-solve the final weighted problem with an interior-point method.
    max_states : int
        Largest supported ``X``.
    """

    epsilon: float = 1.0
    delta: float = 1e-4
    reweight_iters: int = 5
    simplicial_tol: float = 0.01
    feas_tol: float = 1e-4
    obj_rtol: float = 1e-5
    max_inner_iters: int = 4000
    trunc_rtol: float = 1e-6
    rank_rtol: float = 1e-6
    cert_tol: float = 1e-7
    max_outer: int = 6
    max_depth: int = 12
    active_tol: float = 1e-3
    polish: bool = True
    max_states: int = 64

    def __post_init__(self):
        for name in ("delta", "simplicial_tol", "feas_tol", "obj_rtol", "trunc_rtol",
                     "rank_rtol", "cert_tol", "active_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.reweight_iters < 1 or self.max_outer < 1:
            raise ValueError("iteration counts must be at least 1")


@dataclass
class BoundPair:
    """Lower and upper bound matrices with their certificates."""

    lower: TransitionMatrix
    upper: TransitionMatrix
    epsilon: float
    ranks: tuple
    certificates: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)

    def check(self, P, cert_tol=None):
        """Assert the invariants: certified orderings and l1 distances."""
        P = np.asarray(P, dtype=float)
        for side, cert in self.certificates.items():
            if cert is None or not cert.certified:
                raise InvalidBounds(f"{side} bound is not certified")
        for name, B in (("lower", self.lower), ("upper", self.upper)):
            d = np.abs(P - B.entries).sum(axis=1).max()
            if d > self.epsilon + 1e-6:
                raise InvalidBounds(f"{name} bound is {d:.3g} from P, above eps={self.epsilon}")
        return self


def _as_array(P):
    return np.asarray(getattr(P, "entries", P), dtype=float)


def certify(lower, P, upper=None, max_depth=12, tol=1e-12, partitions=None):
    """Certificates for ``lower <= P`` and (optionally) ``P <= upper``."""
    out = {"lower": copositive_order(_as_array(lower), P, max_depth, tol,
                                     partitions=None if partitions is None else partitions.get("lower"))}
    if upper is not None:
        out["upper"] = copositive_order(P, _as_array(upper), max_depth, tol,
                                        partitions=None if partitions is None else partitions.get("upper"))
    return out


def rank1_bounds(P, certify_bounds=True, max_depth=12):
    """Rank-one bounds that repeat the first and last rows of a TP2 matrix.

    Parameters
    ----------
    P : TransitionMatrix or array_like
        TP2 transition matrix.

    Returns
    -------
    BoundPair
        ``lower`` has every row equal to ``P[0]``, ``upper`` every row equal
        to ``P[-1]``; ``epsilon`` is the largest row l1 distance.

    Raises
    ------
    NotTP2
    """
    A = _as_array(P)
    if not is_tp2(A):
        raise NotTP2("rank-one bounds need a TP2 matrix")
    lo = TransitionMatrix.iid(A[0])
    hi = TransitionMatrix.iid(A[-1])
    eps = float(max(np.abs(A - A[0]).sum(axis=1).max(), np.abs(A - A[-1]).sum(axis=1).max()))
    certs = certify(lo.entries, A, hi.entries, max_depth) if certify_bounds else {}
    return BoundPair(lo, hi, eps, (1, 1), certs, {"method": "rank1"})


def mlr_envelope_rows(P):
    """Rows ``r_lo``, ``r_hi`` MLR-below and MLR-above every row of a positive ``P``.

    ``r_lo[i+1] / r_lo[i] = min_k P[k, i+1] / P[k, i]`` makes ``P[k] / r_lo``
    nondecreasing for every ``k``; the maximum gives ``r_hi``. For a TP2
    matrix the extremes are attained by the first and last rows, so these
    reduce to :func:`rank1_bounds`.
    """
    A = _as_array(P)
    if A.min() <= 0:
        raise ValueError("the MLR envelope needs a strictly positive matrix")
    L = np.log(A)
    steps = np.diff(L, axis=1)
    lo = np.concatenate([[0.0], np.cumsum(steps.min(axis=0))])
    hi = np.concatenate([[0.0], np.cumsum(steps.max(axis=0))])
    r_lo = np.exp(lo - lo.max())
    r_hi = np.exp(hi - hi.max())
    return r_lo / r_lo.sum(), r_hi / r_hi.sum()


def mlr_envelope_bounds(P, certify_bounds=None, max_depth=12):
    """Rank-one bounds for a positive matrix that need not be TP2.

    Every row of the lower bound is the MLR envelope row below all rows of
    ``P``, so each ``M^(m)`` is entrywise nonnegative and the ordering
    certifies at depth 0. Certificates are computed for ``X <= 512`` unless
    ``certify_bounds`` says otherwise.
    """
    A = _as_array(P)
    r_lo, r_hi = mlr_envelope_rows(A)
    lo = TransitionMatrix.iid(r_lo)
    hi = TransitionMatrix.iid(r_hi)
    if certify_bounds is None:
        certify_bounds = A.shape[0] <= 512
    eps = float(max(np.abs(A - r_lo).sum(axis=1).max(), np.abs(A - r_hi).sum(axis=1).max()))
    certs = certify(lo.entries, A, hi.entries, max_depth) if certify_bounds else {}
    return BoundPair(lo, hi, eps, (1, 1), certs, {"method": "mlr-envelope"})


def _mlr_pairs(ref, all_pairs):
    X = ref.shape[0]
    if all_pairs:
        a, b = np.triu_indices(X, 1)
    else:
        a = np.arange(X - 1)
        b = a + 1
    return a, b


def lp_row(p, ref, side=LOWER, all_pairs=True):
    """Closest row (in l1) to ``p`` that is MLR-below (or above) ``ref``.

    Solves ``min ||p - r||_1`` over the simplex subject to the linear
    cross-product constraints ``ref[a] r[b] <= r[a] ref[b]`` for ``a < b``
    (lower side) or the reverse (upper side).
    """
    X = p.shape[0]
    a, b = _mlr_pairs(ref, all_pairs)
    k = a.size
    # Variables [r, t]; t >= |p - r|.
    c = np.concatenate([np.zeros(X), np.ones(X)])
    I = sp.identity(X, format="csr")
    A1 = sp.hstack([-I, -I])  # -r - t <= -p
    A2 = sp.hstack([I, -I])   # r - t <= p
    rows = np.repeat(np.arange(k), 2)
    cols = np.stack([a, b], axis=1).ravel()
    if side == LOWER:
        # ref[a] r[b] - ref[b] r[a] <= 0
        vals = np.stack([-ref[b], ref[a]], axis=1).ravel()
    else:
        vals = np.stack([ref[b], -ref[a]], axis=1).ravel()
    Am = sp.csr_matrix((vals, (rows, cols)), shape=(k, X))
    A_ub = sp.vstack([A1, A2, sp.hstack([Am, sp.csr_matrix((k, X))])])
    b_ub = np.concatenate([-p, p, np.zeros(k)])
    A_eq = sp.hstack([sp.csr_matrix(np.ones((1, X))), sp.csr_matrix((1, X))])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (2 * X), method="highs")
    if res.status != 0:
        raise Infeasible(f"row LP failed: {res.message}")
    r = np.maximum(res.x[:X], 0.0)
    return r / r.sum(), float(res.fun)


def lp_bounds(P, certify_bounds=True, max_depth=12):
    """Row-wise LP bounds: each row as close to ``P_i`` as MLR against ``P[0]``
    (lower) or ``P[-1]`` (upper) permits.

    Raises
    ------
    NotTP2
    Infeasible
        Only on solver failure; ``ref`` itself is always feasible.
    """
    A = _as_array(P)
    if not is_tp2(A):
        raise NotTP2("LP bounds need a TP2 matrix")
    X = A.shape[0]
    all_pairs = X <= 64
    lo = np.empty_like(A)
    hi = np.empty_like(A)
    for i in range(X):
        lo[i], _ = lp_row(A[i], A[0], LOWER, all_pairs)
        hi[i], _ = lp_row(A[i], A[-1], UPPER, all_pairs)
    Lo, Hi = TransitionMatrix(lo), TransitionMatrix(hi)
    eps = float(max(np.abs(A - lo).sum(axis=1).max(), np.abs(A - hi).sum(axis=1).max()))
    certs = certify(lo, A, hi, max_depth) if certify_bounds else {}
    return BoundPair(Lo, Hi, eps, (numerical_rank(lo), numerical_rank(hi)), certs,
                     {"method": "lp"})


# ---------------------------------------------------------------------------
# Nuclear-norm construction


class Partition:
    """Per-column-pair simplicial partitions used as solver constraints.

    Constraints are generated per vertex pair, so entries shared between
    neighbouring cells appear once.
    """

    def __init__(self, X):
        self.X = X
        self.cells = [[Cell(np.eye(X), 0)] for _ in range(X - 1)]

    def n_cells(self):
        return sum(len(c) for c in self.cells)

    def vertex_pairs(self, m):
        """Unique vertex pairs (as an (X, k) pair of arrays) for column pair ``m``."""
        keys = {}
        verts = []
        pairs = set()
        for cell in self.cells[m]:
            ids = []
            for a in range(self.X):
                v = cell.vertices[:, a]
                key = np.round(v, 14).tobytes()
                if key not in keys:
                    keys[key] = len(verts)
                    verts.append(v)
                ids.append(keys[key])
            for a in range(self.X):
                for b in range(a, self.X):
                    i, j = ids[a], ids[b]
                    pairs.add((min(i, j), max(i, j)))
        V = np.stack(verts, axis=1)
        pa = np.array(sorted(pairs))
        return V, pa[:, 0], pa[:, 1]

    def as_lists(self):
        return [list(c) for c in self.cells]


def cut_matrix(P, part, side=LOWER):
    """Sparse rows ``A`` with ``A vec(Z) >= 0`` iff every vertex-pair entry of
    ``V' M^(m) V`` is nonnegative (``M^(m)(Z, P)`` for the lower side,
    ``M^(m)(P, Z)`` for the upper side). Rows are scaled to unit norm."""
    X = part.X
    sgn = 1.0 if side == LOWER else -1.0
    rows, cols, vals = [], [], []
    r0 = 0
    for m in range(X - 1):
        V, a, b = part.vertex_pairs(m)
        c = V.T @ P[:, m + 1]
        d = V.T @ P[:, m]
        cm = c[b][:, None] * V[:, a].T + c[a][:, None] * V[:, b].T
        cm1 = -(d[b][:, None] * V[:, a].T + d[a][:, None] * V[:, b].T)
        C = sgn * np.concatenate([cm, cm1], axis=1)
        nrm = np.linalg.norm(C, axis=1)
        keep = nrm > 1e-14
        C = C[keep] / nrm[keep, None]
        k = C.shape[0]
        colidx = np.concatenate([np.arange(X) * X + m, np.arange(X) * X + m + 1])
        rows.append(np.repeat(np.arange(r0, r0 + k), 2 * X))
        cols.append(np.tile(colidx, k))
        vals.append(C.ravel())
        r0 += k
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(r0, X * X))


def _M(Z, P, m, side):
    return build_M(Z, P, m) if side == LOWER else build_M(P, Z, m)


def refine_active(Z, P, part, side, active_tol, max_depth):
    """Bisect cells whose off-diagonal vertex entries are active at ``Z``.

    Returns the number of cells split.
    """
    split = 0
    for m in range(part.X - 1):
        M = _M(Z, P, m, side)
        new = []
        for cell in part.cells[m]:
            V = cell.vertices
            G = V.T @ M @ V
            act = np.triu(G <= active_tol, 1)
            if cell.depth >= max_depth or not act.any():
                new.append(cell)
                continue
            a_idx, b_idx = np.nonzero(act)
            diffs = V[:, a_idx] - V[:, b_idx]
            k = int(np.argmax(np.einsum("ij,ij->j", diffs, diffs)))
            a, b = int(a_idx[k]), int(b_idx[k])
            w = 0.5 * (V[:, a] + V[:, b])
            left, right = V.copy(), V.copy()
            left[:, a] = w
            right[:, b] = w
            new += [Cell(left, cell.depth + 1), Cell(right, cell.depth + 1)]
            split += 1
        part.cells[m] = new
    return split


def _inv_sqrt_psd(A):
    w, Q = np.linalg.eigh(0.5 * (A + A.T))
    return (Q / np.sqrt(np.maximum(w, 1e-300))) @ Q.T


def update_weights(W1, W2, Z, delta):
    """Log-det reweighting from the SVD of ``W1 Z W2``."""
    U, s, Vt = np.linalg.svd(W1 @ Z @ W2)
    W1i = np.linalg.inv(W1)
    W2i = np.linalg.inv(W2)
    X = Z.shape[0]
    W1n = _inv_sqrt_psd(W1i @ (U * s) @ U.T @ W1i + delta * np.eye(X))
    W2n = _inv_sqrt_psd(W2i @ (Vt.T * s) @ Vt @ W2i + delta * np.eye(X))
    return W1n, W2n


def postprocess(raw, cfg=None, trunc_rtol=None, rank_rtol=None):
    """Truncate small singular values and restore stochasticity.

    Singular values below ``trunc_rtol * sigma_1`` are zeroed; if negative
    entries appear the minimum element is subtracted; rows are then
    normalized.

    Returns
    -------
    TransitionMatrix
    report : dict
        ``rank``, ``rel_error`` (spectral, relative to ``raw``),
        ``shift`` and ``kept`` singular values.

    Raises
    ------
    PostProcessDegraded
        If the relative spectral error exceeds 0.01.
    """
    trunc_rtol = trunc_rtol or (cfg.trunc_rtol if cfg is not None else 1e-6)
    rank_rtol = rank_rtol or (cfg.rank_rtol if cfg is not None else 1e-6)
    raw = np.asarray(raw, dtype=float)
    U, s, Vt = np.linalg.svd(raw)
    keep = max(1, int(np.sum(s > trunc_rtol * s[0])))
    Zt = (U[:, :keep] * s[:keep]) @ Vt[:keep]
    shift = 0.0
    if Zt.min() < 0:
        shift = float(-Zt.min())
        Zt = Zt + shift
    sums = Zt.sum(axis=1, keepdims=True)
    if sums.min() <= 0:
        raise PostProcessDegraded("truncation left a row with no mass")
    Zt = Zt / sums
    rel = float(np.linalg.norm(Zt - raw, 2) / np.linalg.norm(raw, 2))
    if rel > 0.01:
        raise PostProcessDegraded(f"post-processing changed the matrix by {rel:.3g} > 0.01")
    report = {"rank": numerical_rank(Zt, rank_rtol), "rel_error": rel, "shift": shift,
              "kept": keep}
    return TransitionMatrix(Zt, check=False), report


@dataclass
class NuclearResult:
    """Output of :func:`nuclear_norm_bound`."""

    matrix: TransitionMatrix
    side: str
    epsilon: float
    rank: int
    singular_values: np.ndarray
    certificate: object
    partitions: list
    history: list
    report: dict

    @property
    def certified(self):
        return self.certificate is not None and self.certificate.certified


def _feasible(Z, P, eps):
    return (Z.min() >= -1e-12 and np.abs(Z.sum(axis=1) - 1).max() <= 1e-9
            and np.abs(Z - P).sum(axis=1).max() <= eps + 1e-6)


def nuclear_norm_bound(P, side=LOWER, cfg=None, **overrides):
    """Low-rank copositive bound by reweighted nuclear-norm minimization.

    Outer loop: solve ``cfg.reweight_iters`` weighted problems on the current
    simplicial partitions, then bisect cells whose constraints are active,
    and repeat while the objective (at fixed weights) keeps dropping by at
    least ``cfg.simplicial_tol``. The final weighted problem is polished,
    post-processed and certified.

    Parameters
    ----------
    P : TransitionMatrix or array_like
        Row-stochastic matrix with at most ``cfg.max_states`` states.
    side : {"lower", "upper"}
    cfg : SolverConfig, optional
    **overrides
        Field overrides applied to ``cfg``.

    Returns
    -------
    NuclearResult
        ``report["fallback"]`` is set when the truncated matrix could not be
        certified and the polished matrix was used instead;
        ``report["stalled"]`` when some inner solve hit its iteration cap.
    """
    if side not in (LOWER, UPPER):
        raise ValueError(f"side must be 'lower' or 'upper', not {side!r}")
    cfg = cfg or SolverConfig()
    if overrides:
        cfg = SolverConfig(**{**cfg.__dict__, **overrides})
    A = _as_array(P)
    X = A.shape[0]
    if X > cfg.max_states:
        raise SizeCapExceeded(
            f"nuclear-norm construction is capped at {cfg.max_states} states (got {X}); "
            "use rank1_bounds or lp_bounds")
    t0 = time.perf_counter()
    part = Partition(X)
    if cfg.epsilon == 0:
        s = np.linalg.svd(A, compute_uv=False)
        cert = copositive_order(A, A) if side == LOWER else copositive_order(A, A)
        return NuclearResult(TransitionMatrix(A), side, 0.0, numerical_rank(A, cfg.rank_rtol), s,
                             cert, part.as_lists(), [], {"seconds": 0.0, "trivial": True})

    W1 = np.eye(X)
    W2 = np.eye(X)
    history = []
    warm = None
    Z = A.copy()
    stalled = False
    iters = 0
    for J in range(cfg.max_outer):
        poly = Polytope(A, cfg.epsilon, cut_matrix(A, part, side))
        before = nuclear_norm(W1 @ Z @ W2) if J > 0 else np.inf
        first = None
        for n in range(cfg.reweight_iters):
            used_W = (W1, W2)
            try:
                res = inner_solve(W1, W2, poly, cfg, warm)
            except SolverStalled as e:
                res = e.result
                stalled = True
            iters += res.iterations
            warm = res.state
            Z = res.Z
            if first is None:
                first = res.objective
            W1, W2 = update_weights(W1, W2, Z, cfg.delta)
        history.append({"outer": J, "cells": part.n_cells(), "cuts": poly.A.shape[0],
                        "before": before, "first": first, "final": res.objective})
        log.info("outer %d: cells=%d objective %.5g -> %.5g", J, part.n_cells(), before, first)
        if J > 0 and before - first < cfg.simplicial_tol:
            break
        if refine_active(Z, A, part, side, cfg.active_tol, cfg.max_depth) == 0:
            break
    # Weights of the last solve, for the polish.
    W1p, W2p = used_W
    poly = Polytope(A, cfg.epsilon, cut_matrix(A, part, side))
    report = {"stalled": stalled, "admm_iterations": iters, "outer_iterations": len(history)}
    raw = Z
    if cfg.polish:
        from .sdp import polish_solve
        try:
            raw, obj = polish_solve(W1p, W2p, poly)
            report["polish_objective"] = obj
        except SolverStalled as e:
            report["polish_failed"] = str(e)
    report["raw_violation"] = poly.violation(raw)

    cert_kw = dict(max_depth=cfg.max_depth, tol=cfg.cert_tol)
    parts = part.as_lists()

    def _certify(Z):
        if side == LOWER:
            return copositive_order(Z, A, partitions=parts, **cert_kw)
        return copositive_order(A, Z, partitions=parts, **cert_kw)

    fallback = False
    try:
        M, pp = postprocess(raw, cfg)
        report["postprocess"] = pp
        ok = _feasible(M.entries, A, cfg.epsilon)
        cert = _certify(M.entries) if ok else None
        if cert is None or not cert.certified:
            fallback = True
    except PostProcessDegraded as e:
        report["postprocess_error"] = str(e)
        fallback = True
    if fallback:
        Zr = np.maximum(raw, 0.0)
        Zr = Zr / Zr.sum(axis=1, keepdims=True)
        M = TransitionMatrix(Zr, check=False)
        cert = _certify(Zr)
    report["fallback"] = fallback
    report["seconds"] = time.perf_counter() - t0
    s = np.linalg.svd(M.entries, compute_uv=False)
    return NuclearResult(M, side, cfg.epsilon, int(np.sum(s > cfg.rank_rtol * s[0])), s, cert,
                         parts, history, report)


def nuclear_bound_pair(P, cfg=None, **overrides):
    """Lower and upper nuclear-norm bounds, checked against the invariants."""
    lo = nuclear_norm_bound(P, LOWER, cfg, **overrides)
    hi = nuclear_norm_bound(P, UPPER, cfg, **overrides)
    pair = BoundPair(lo.matrix, hi.matrix, lo.epsilon, (lo.rank, hi.rank),
                     {"lower": lo.certificate, "upper": hi.certificate},
                     {"lower": lo.report, "upper": hi.report})
    return pair.check(_as_array(P))
