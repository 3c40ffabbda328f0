"""Copositivity on the simplex and the copositive ordering of stochastic matrices.

A symmetric matrix ``M`` is copositive when ``pi' M pi >= 0`` for every
nonnegative ``pi``. Deciding this is co-NP-hard, so :func:`copositivity_verdict`
returns one of three answers:

``certified``
    A simplicial partition of the simplex was found on which every cell with
    vertex matrix ``V`` has ``V' M V >= -tol`` entrywise. Any point of a cell
    is a convex combination of its vertices, so the quadratic form is then
    nonnegative (up to ``tol``) on the whole simplex.
``refuted``
    A point ``pi`` with ``pi' M pi < -1e-12`` was found and is returned.
``unknown``
    The refinement budget ran out.

The copositive ordering ``Q <= P`` asks every ``M^(m)(Q, P)`` for adjacent
columns ``m, m+1`` to be copositive; it guarantees that one filter step with
``P`` MLR-dominates one step with ``Q``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import DimensionMismatch, IndexOutOfRange

#: Quadratic-form values below this are accepted as refutations.
WITNESS_TOL = 1e-12

CERTIFIED = "certified"
REFUTED = "refuted"
UNKNOWN = "unknown"


def _dense(P):
    return np.asarray(P, dtype=float)


def build_M(Q, P, m):
    """Symmetric matrix ``M^(m)(Q, P)`` for the column pair ``(m, m+1)``.

    ``M = Q_m P_{m+1}' + P_{m+1} Q_m' - P_m Q_{m+1}' - Q_{m+1} P_m'`` where
    ``A_m`` is column ``m`` of ``A`` (0-based, ``0 <= m <= X-2``). Its
    quadratic form is ``2[(Q'pi)_m (P'pi)_{m+1} - (P'pi)_m (Q'pi)_{m+1}]``.
    """
    Q = _dense(Q)
    P = _dense(P)
    if Q.shape != P.shape or Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DimensionMismatch(f"matrices have shapes {Q.shape} and {P.shape}")
    X = P.shape[0]
    if not 0 <= m <= X - 2:
        raise IndexOutOfRange(f"column index m={m} outside 0..{X - 2}")
    a = np.outer(Q[:, m], P[:, m + 1])
    b = np.outer(P[:, m], Q[:, m + 1])
    return (a + a.T) - (b + b.T)


def quad_form(M, pts):
    """``pi' M pi`` for each row of ``pts``."""
    pts = np.atleast_2d(pts)
    return np.einsum("ij,jk,ik->i", pts, M, pts)


@dataclass
class Cell:
    """One simplex of a partition: vertices are the columns of ``vertices``."""

    vertices: np.ndarray
    depth: int = 0
    min_entry: float = np.nan

    def to_dict(self):
        return {"depth": self.depth, "min_entry": float(self.min_entry),
                "vertices": self.vertices.T.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["vertices"], dtype=float).T, int(d["depth"]),
                   float(d["min_entry"]))


@dataclass
class CopositivityVerdict:
    status: str
    witness: np.ndarray = None
    witness_value: float = None
    cells: list = field(default_factory=list)
    depth: int = 0
    tol: float = 0.0

    @property
    def certified(self):
        return self.status == CERTIFIED

    @property
    def refuted(self):
        return self.status == REFUTED

    def to_dict(self):
        return {
            "status": self.status,
            "tol": self.tol,
            "depth": self.depth,
            "witness": None if self.witness is None else self.witness.tolist(),
            "witness_value": self.witness_value,
            "cells": [c.to_dict() for c in self.cells],
        }

    @classmethod
    def from_dict(cls, d):
        w = d.get("witness")
        return cls(d["status"], None if w is None else np.array(w, dtype=float),
                   d.get("witness_value"), [Cell.from_dict(c) for c in d.get("cells", [])],
                   int(d.get("depth", 0)), float(d.get("tol", 0.0)))


def standard_simplex(X):
    return [Cell(np.eye(X), 0)]


def simplex_samples(X, n, seed=0):
    """``n`` quasi-random points spread over the simplex (scrambled Sobol)."""
    u = qmc.Sobol(d=X, scramble=True, seed=seed).random(n)
    e = -np.log(np.clip(u, 1e-300, 1.0))
    return e / e.sum(axis=1, keepdims=True)


def _witness_search(M, n_samples, seed):
    """Cheap candidates: vertices, edge midpoints, quasi-random points."""
    X = M.shape[0]
    d = np.diag(M)
    best_val, best = np.inf, None
    i = int(np.argmin(d))
    best_val, best = d[i], np.eye(X)[i]
    if X > 1:
        mid = 0.25 * (d[:, None] + d[None, :] + 2 * M)
        iu = np.triu_indices(X, 1)
        k = int(np.argmin(mid[iu]))
        if mid[iu][k] < best_val:
            best_val = mid[iu][k]
            best = np.zeros(X)
            best[iu[0][k]] = best[iu[1][k]] = 0.5
    if n_samples > 0 and X > 1:
        pts = simplex_samples(X, n_samples, seed)
        vals = quad_form(M, pts)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best = vals[k], pts[k]
    return float(best_val), best


def _longest_active_edge(V, G, tol):
    a_idx, b_idx = np.nonzero(np.triu(G < -tol, 1))
    if a_idx.size == 0:
        # Only diagonal entries are negative; that is a vertex refutation.
        return None
    diffs = V[:, a_idx] - V[:, b_idx]
    k = int(np.argmax(np.einsum("ij,ij->j", diffs, diffs)))
    return int(a_idx[k]), int(b_idx[k])


def bisect(cell, a, b):
    """Split ``cell`` at the midpoint of the edge between vertices ``a`` and ``b``."""
    w = 0.5 * (cell.vertices[:, a] + cell.vertices[:, b])
    left = cell.vertices.copy()
    right = cell.vertices.copy()
    left[:, a] = w
    right[:, b] = w
    return Cell(left, cell.depth + 1), Cell(right, cell.depth + 1)


def refine_partition(M, cells, tol, max_depth=12, max_cells=20_000):
    """Refine ``cells`` until every cell passes the vertex test.

    Returns ``(status, cells, witness, witness_value)``; ``witness`` is set
    only when a negative vertex is met during refinement.
    """
    done = []
    queue = list(cells)
    status = CERTIFIED
    while queue:
        cell = queue.pop()
        V = cell.vertices
        G = V.T @ M @ V
        cell.min_entry = float(G.min())
        if cell.min_entry >= -tol:
            done.append(cell)
            continue
        dG = np.diag(G)
        k = int(np.argmin(dG))
        if dG[k] < -WITNESS_TOL:
            return REFUTED, done + [cell] + queue, V[:, k].copy(), float(dG[k])
        edge = _longest_active_edge(V, G, tol)
        if edge is None or cell.depth >= max_depth or len(done) + len(queue) >= max_cells:
            status = UNKNOWN
            done.append(cell)
            continue
        for child in bisect(cell, *edge):
            queue.append(child)
    done.sort(key=lambda c: c.depth)
    return status, done, None, None


def copositivity_verdict(M, max_depth=12, tol=1e-12, n_samples=512, seed=0,
                         partition=None, max_cells=20_000):
    """Three-valued copositivity test for a symmetric matrix.

    Parameters
    ----------
    M : (X, X) array_like
        Symmetric matrix (within 1e-10).
    max_depth : int
        Maximum number of bisections along any branch.
    tol : float
        A cell is accepted when every entry of ``V' M V`` is at least ``-tol``.
    n_samples : int
        Quasi-random points tried for a witness before refining.
    partition : list of Cell, optional
        Starting partition; defaults to the standard simplex.

    Examples
    --------
    >>> copositivity_verdict(-np.eye(2)).status
    'refuted'
    >>> copositivity_verdict(np.ones((3, 3))).status
    'certified'
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"M must be square, got {M.shape}")
    if np.abs(M - M.T).max(initial=0.0) > 1e-10:
        raise ValueError("M is not symmetric")
    X = M.shape[0]
    cells = standard_simplex(X) if partition is None else [
        Cell(c.vertices.copy(), c.depth) for c in partition]

    # Depth-0 pass: the starting partition may already certify.
    mins = [float((c.vertices.T @ M @ c.vertices).min()) for c in cells]
    if min(mins) >= -tol:
        for c, v in zip(cells, mins):
            c.min_entry = v
        return CopositivityVerdict(CERTIFIED, cells=cells, tol=tol,
                                   depth=max(c.depth for c in cells))

    val, pt = _witness_search(M, n_samples, seed)
    if val < -WITNESS_TOL:
        return CopositivityVerdict(REFUTED, witness=pt, witness_value=val, tol=tol)

    status, cells, w, wv = refine_partition(M, cells, tol, max_depth, max_cells)
    depth = max((c.depth for c in cells), default=0)
    if status == REFUTED:
        return CopositivityVerdict(REFUTED, witness=w, witness_value=wv, tol=tol, depth=depth)
    return CopositivityVerdict(status, cells=cells, tol=tol, depth=depth)


@dataclass
class OrderVerdict:
    """Aggregate verdict for ``Q <= P`` over all column pairs."""

    status: str
    parts: list
    refuted_at: int = None

    @property
    def certified(self):
        return self.status == CERTIFIED

    @property
    def refuted(self):
        return self.status == REFUTED

    @property
    def witness(self):
        if self.refuted_at is None:
            return None
        return self.parts[self.refuted_at].witness

    def to_dict(self):
        return {"status": self.status, "refuted_at": self.refuted_at,
                "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["status"], [CopositivityVerdict.from_dict(p) for p in d["parts"]],
                   d.get("refuted_at"))


def copositive_order(Q, P, max_depth=12, tol=1e-12, n_samples=512, seed=0,
                     partitions=None, stop_on_refutation=True):
    """Decide ``Q <= P`` in the copositive ordering.

    Each ``M^(m)(Q, P)`` for ``m = 0..X-2`` is tested with
    :func:`copositivity_verdict`. The result is certified only if every part
    is certified; the first refutation (smallest ``m``) wins over unknowns.

    Parameters
    ----------
    partitions : list of list of Cell, optional
        Starting partition for each ``m``, for instance the one a solver
        used when constructing ``Q``.
    """
    Q = _dense(Q)
    P = _dense(P)
    if Q.shape != P.shape:
        raise DimensionMismatch(f"matrices have shapes {Q.shape} and {P.shape}")
    X = P.shape[0]
    parts = []
    status = CERTIFIED
    refuted_at = None
    for m in range(X - 1):
        start = None if partitions is None else partitions[m]
        v = copositivity_verdict(build_M(Q, P, m), max_depth, tol, n_samples, seed, start)
        parts.append(v)
        if v.refuted and refuted_at is None:
            refuted_at = m
            status = REFUTED
            if stop_on_refutation:
                break
        elif v.status == UNKNOWN and status == CERTIFIED:
            status = UNKNOWN
    return OrderVerdict(status, parts, refuted_at)
