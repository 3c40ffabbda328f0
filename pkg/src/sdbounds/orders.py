"""Stochastic orders on beliefs and transition matrices.

Conventions
-----------
``mlr_geq(p1, p2)`` is true when ``p1`` dominates ``p2`` in the monotone
likelihood ratio sense, i.e. ``p1[i] * p2[j] <= p2[i] * p1[j]`` for every
``i < j``. Indices are 0-based.
"""

import numpy as np
from numba import njit

from .errors import DimensionMismatch, SizeCapExceeded

#: Default absolute tolerance on cross products.
ORDER_TOL = 1e-12

#: Above this many states :func:`is_tp2` only compares adjacent rows.
TP2_ALL_PAIRS_MAX = 256


@njit(cache=True)
def _mlr_kernel(p1, p2, tol):
    # Think of index i as the planar vector v_i = (p2[i], p1[i]). The order
    # holds iff cross(v_i, v_j) >= 0 for i < j, i.e. the angles of the nonzero
    # vectors are nondecreasing. A monotone chain of consecutive nonzero
    # vectors proves the exact order in O(X); only a failing chain needs the
    # tolerance-aware pairwise scan.
    n = p1.shape[0]
    prev = -1
    monotone = True
    for j in range(n):
        if p1[j] == 0.0 and p2[j] == 0.0:
            continue
        if prev >= 0 and p2[prev] * p1[j] - p1[prev] * p2[j] < 0.0:
            monotone = False
            break
        prev = j
    if monotone:
        return True
    for i in range(n):
        a1 = p1[i]
        a2 = p2[i]
        if a1 == 0.0 and a2 == 0.0:
            continue
        for j in range(i + 1, n):
            if a2 * p1[j] - a1 * p2[j] < -tol:
                return False
    return True


@njit(cache=True)
def _tp2_kernel(P, tol, all_pairs):
    n = P.shape[0]
    for i in range(n - 1):
        stop = n if all_pairs else i + 2
        for j in range(i + 1, stop):
            if not _mlr_kernel(P[j], P[i], tol):
                return False
    return True


def _pair(p1, p2):
    a = np.ascontiguousarray(p1, dtype=float)
    b = np.ascontiguousarray(p2, dtype=float)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionMismatch(f"vectors have shapes {a.shape} and {b.shape}")
    return a, b


def mlr_geq(p1, p2, tol=ORDER_TOL):
    """Whether ``p1`` MLR-dominates ``p2`` within ``tol`` on cross products.

    Examples
    --------
    >>> mlr_geq([0.2, 0.3, 0.5], [0.5, 0.3, 0.2])
    True
    >>> mlr_geq([1.0, 0.0], [0.0, 1.0])
    False
    """
    a, b = _pair(p1, p2)
    return bool(_mlr_kernel(a, b, float(tol)))


def mlr_violation(p1, p2):
    """Largest amount by which a cross product ``p2[i]p1[j] - p1[i]p2[j]``
    with ``i < j`` falls below zero (0 when the order holds exactly)."""
    a, b = _pair(p1, p2)
    D = np.outer(b, a) - np.outer(a, b)
    iu = np.triu_indices(a.shape[0], 1)
    if iu[0].size == 0:
        return 0.0
    return float(max(0.0, -D[iu].min()))


def fosd_geq(p1, p2, tol=ORDER_TOL):
    """First-order dominance: every upper tail of ``p1`` is at least that of ``p2``."""
    a, b = _pair(p1, p2)
    ta = np.cumsum(a[::-1])[::-1]
    tb = np.cumsum(b[::-1])[::-1]
    return bool(np.all(ta >= tb - tol))


def is_tp2(P, tol=ORDER_TOL):
    """Whether every 2x2 minor of ``P`` is at least ``-tol``.

    Each row must MLR-dominate every earlier row. All row pairs are compared
    for matrices with at most :data:`TP2_ALL_PAIRS_MAX` rows; larger matrices
    are checked on adjacent rows only, which is exact for positive matrices.
    """
    A = np.ascontiguousarray(np.asarray(P, dtype=float))
    if A.ndim != 2:
        raise DimensionMismatch("is_tp2 expects a matrix")
    return bool(_tp2_kernel(A, float(tol), A.shape[0] <= TP2_ALL_PAIRS_MAX))


def tp2_geq_multivariate(p, q, shape=None, tol=ORDER_TOL, max_states=4096,
                         batch_pairs=10_000):
    """Multivariate TP2 dominance of ``p`` over ``q``.

    Checks ``p(i) q(j) <= p(i v j) q(i ^ j)`` for all joint indices, where
    ``v`` and ``^`` are the componentwise max and min.

    Parameters
    ----------
    p, q : array_like
        Joint pmfs, either flat in C order (with ``shape`` given) or already
        shaped as ``shape``.
    shape : tuple of int, optional
        Per-axis sizes. Defaults to ``p.shape``.
    max_states : int
        Brute force inspects ``X**2`` index pairs; larger joint spaces raise
        :class:`SizeCapExceeded`.
    batch_pairs : int
        Number of index pairs evaluated per vectorized batch.

    Examples
    --------
    >>> p = np.array([[0.1, 0.2], [0.3, 0.4]])
    >>> tp2_geq_multivariate(p, p)
    False
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    shape = tuple(p.shape) if shape is None else tuple(int(s) for s in shape)
    X = int(np.prod(shape))
    if p.size != X or q.size != X:
        raise DimensionMismatch(f"pmfs of size {p.size}, {q.size} do not match shape {shape}")
    if X > max_states:
        raise SizeCapExceeded(f"{X} joint states exceeds the brute-force cap {max_states}")
    pf = p.reshape(-1)
    qf = q.reshape(-1)
    idx = np.stack(np.unravel_index(np.arange(X), shape), axis=1)
    rows = max(1, batch_pairs // X)
    for start in range(0, X, rows):
        I = idx[start:start + rows, None, :]
        join = np.ravel_multi_index(np.moveaxis(np.maximum(I, idx[None]), -1, 0), shape)
        meet = np.ravel_multi_index(np.moveaxis(np.minimum(I, idx[None]), -1, 0), shape)
        lhs = pf[start:start + rows, None] * qf[None, :]
        rhs = pf[join] * qf[meet]
        if np.any(lhs > rhs + tol):
            return False
    return True


def is_mtp2(p, shape=None, tol=ORDER_TOL, **kw):
    """Multivariate total positivity of a joint pmf (self-dominance)."""
    return tp2_geq_multivariate(p, p, shape, tol, **kw)
