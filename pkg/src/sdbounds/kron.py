"""Kronecker-structured multivariate Markov chains.

A chain of ``L`` independent components with per-component transition
matrices ``A_1, ..., A_L`` has joint transition matrix ``A_1 (x) ... (x) A_L``.
Joint states are flattened in C order (the last component varies fastest),
which is the row layout of :func:`numpy.kron`.
"""

from functools import reduce

import numpy as np
from scipy.linalg import expm

from .errors import DimensionMismatch, IndexOutOfRange, NotGenerator, NotTP2, SizeCapExceeded
from .hmm import GaussianObservation, TransitionMatrix
from .opcount import tally
from .orders import is_tp2

#: Tridiagonal generator used for the benchmark chain (rates per unit time).
BENCHMARK_Q = np.array([
    [-0.8147, 0.8147, 0.0, 0.0, 0.0],
    [0.4529, -0.5164, 0.0635, 0.0, 0.0],
    [0.0, 0.4567, -0.7729, 0.3162, 0.0],
    [0.0, 0.0, 0.0488, -0.1880, 0.1392],
    [0.0, 0.0, 0.0, 0.5469, -0.5469],
])

#: Largest joint space :meth:`KronTransition.dense` will materialize.
DENSE_CAP = 4096


def check_generator(Q, atol=1e-9, tridiagonal=True):
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise NotGenerator(f"generator must be square, got {Q.shape}")
    off = Q - np.diag(np.diag(Q))
    if off.min() < 0:
        raise NotGenerator("generator has negative off-diagonal rates")
    if np.abs(Q.sum(axis=1)).max() > atol:
        raise NotGenerator("generator rows do not sum to zero")
    if tridiagonal and (np.any(np.triu(off, 2) != 0) or np.any(np.tril(off, -2) != 0)):
        raise NotGenerator("generator is not tridiagonal")
    return Q


def tp2_generator(Q, t):
    """Transition matrix ``exp(Q t)`` of a birth-death generator.

    The result is TP2 for any tridiagonal generator and ``t > 0``; this is
    asserted before returning.

    Parameters
    ----------
    Q : (S, S) array_like
        Tridiagonal generator: nonnegative off-diagonals, zero row sums.
    t : float
        Time scale, ``t >= 0``.

    Returns
    -------
    TransitionMatrix
    """
    Q = check_generator(Q)
    if t < 0:
        raise ValueError("t must be nonnegative")
    A = expm(Q * float(t))
    # Clean rounding so the matrix is exactly nonnegative and stochastic.
    A = np.maximum(A, 0.0)
    A /= A.sum(axis=1, keepdims=True)
    if not is_tp2(A, tol=1e-12):
        raise NotTP2("exp(Qt) failed the TP2 check; Q is not a birth-death generator")
    return TransitionMatrix(A)


def benchmark_factor(t=2.0):
    """Five-state TP2 factor ``exp(t Q)`` for the benchmark generator."""
    return tp2_generator(BENCHMARK_Q, t)


class JointIndexCodec:
    """Bijection between joint component indices and flat Kronecker indices.

    Parameters
    ----------
    shape : tuple of int
        Per-component state counts ``(S_1, ..., S_L)``.
    base : {0, 1}
        Index base used by :meth:`encode` and :meth:`decode`.

    Examples
    --------
    >>> c = JointIndexCodec((2, 2), base=1)
    >>> c.encode((1, 1)), c.encode((2, 2))
    (1, 4)
    >>> c.decode(3)
    (2, 1)
    """

    def __init__(self, shape, base=0):
        self.shape = tuple(int(s) for s in shape)
        if not self.shape or min(self.shape) < 1:
            raise ValueError(f"invalid shape {shape}")
        if base not in (0, 1):
            raise ValueError("base must be 0 or 1")
        self.base = base
        self.size = int(np.prod(self.shape))

    def encode(self, idx):
        idx = tuple(int(i) - self.base for i in idx)
        if len(idx) != len(self.shape) or any(
                not 0 <= i < s for i, s in zip(idx, self.shape)):
            raise IndexOutOfRange(f"joint index {idx} outside shape {self.shape}")
        return int(np.ravel_multi_index(idx, self.shape)) + self.base

    def decode(self, flat):
        f = int(flat) - self.base
        if not 0 <= f < self.size:
            raise IndexOutOfRange(f"flat index {flat} outside 0..{self.size - 1} (+base)")
        return tuple(int(i) + self.base for i in np.unravel_index(f, self.shape))

    def decode_all(self):
        """(X, L) array of the components of every flat index."""
        return np.stack(np.unravel_index(np.arange(self.size), self.shape), axis=1) + self.base


def joint_index_codec(shape, base=0):
    c = JointIndexCodec(shape, base)
    return c.encode, c.decode


class KronTransition:
    """Lazy Kronecker product of row-stochastic factors.

    Supports the same prediction interface as :class:`TransitionMatrix`
    (``apply_transpose``, ``sample_next``, ``n_states``) without forming the
    joint matrix. The prediction costs ``X * sum(S_l)`` multiplications.
    """

    def __init__(self, factors):
        fs = [f if isinstance(f, TransitionMatrix) else TransitionMatrix(f) for f in factors]
        if not fs:
            raise ValueError("need at least one factor")
        self.factors = fs
        self.shape = tuple(f.n_states for f in fs)
        self.n_states = int(np.prod(self.shape))
        self._cum = [np.cumsum(f.entries, axis=1) for f in fs]

    def __repr__(self):
        return f"KronTransition(shape={self.shape})"

    def apply_transpose(self, pi):
        T = np.asarray(pi, dtype=float).reshape(self.shape)
        for axis, f in enumerate(self.factors):
            # Contract axis with A' and move the new axis back in place.
            T = np.moveaxis(np.tensordot(T, f.entries, axes=([axis], [0])), -1, axis)
        tally(self.n_states * sum(self.shape))
        return T.reshape(-1)

    def sample_next(self, state, rng):
        comps = np.unravel_index(int(state), self.shape)
        nxt = []
        for c, cum, s in zip(comps, self._cum, self.shape):
            row = cum[c]
            nxt.append(min(int(np.searchsorted(row, rng.random() * row[-1], side="right")), s - 1))
        return int(np.ravel_multi_index(tuple(nxt), self.shape))

    def dense(self, cap=DENSE_CAP):
        """Materialize the joint matrix (refused above ``cap`` states)."""
        if self.n_states > cap:
            raise SizeCapExceeded(f"{self.n_states} states exceeds dense cap {cap}")
        return TransitionMatrix(reduce(np.kron, [f.entries for f in self.factors]), check=False)

    @property
    def entries(self):
        return self.dense().entries


def kron_transition(factors, lazy=None, cap=DENSE_CAP):
    """Kronecker product of transition matrices.

    Returns a dense :class:`TransitionMatrix` when the joint space has at most
    ``cap`` states (or ``lazy=False``), else a :class:`KronTransition`.
    """
    op = KronTransition(factors)
    if lazy is None:
        lazy = op.n_states > cap
    if lazy:
        return op
    return op.dense(cap=max(cap, op.n_states))


def sum_gaussian_obs(shape, sigma):
    """Gaussian observation of the sum of 1-based component values.

    The level of joint state ``(x_1, ..., x_L)`` is ``x_1 + ... + x_L``, so
    the all-ones state has level ``L``.
    """
    levels = JointIndexCodec(shape, base=1).decode_all().sum(axis=1).astype(float)
    return GaussianObservation(levels, sigma)


def benchmark_chain(L=5, t=2.0, lazy=None):
    """Benchmark chain: ``L``-fold Kronecker power of ``exp(t Q)``."""
    A = benchmark_factor(t)
    return kron_transition([A] * L, lazy=lazy)


def kron_rank1_bounds(factors):
    """Per-component rank-one bounds and their Kronecker products.

    Each TP2 factor ``A_l`` gets ``A_l_lower = 1 A_l[0]'`` and
    ``A_l_upper = 1 A_l[-1]'``. The joint bounds are the Kronecker products,
    which are rank one with rows ``A_1[0] (x) ... (x) A_L[0]`` and the
    analogue for the last rows. They order the joint predictions in the
    multivariate TP2 sense (componentwise), not in the flat MLR sense.

    Returns
    -------
    lower, upper : TransitionMatrix
        Rank-one joint bounds carrying their factorization.
    factor_bounds : list of (lower_l, upper_l)
        Per-factor bound matrices.
    """
    fs = [f if isinstance(f, TransitionMatrix) else TransitionMatrix(f) for f in factors]
    for f in fs:
        if not is_tp2(f.entries):
            raise NotTP2("every Kronecker factor must be TP2")
    per = [(TransitionMatrix.iid(f.entries[0]), TransitionMatrix.iid(f.entries[-1])) for f in fs]
    lo_row = reduce(np.kron, [f.entries[0] for f in fs])
    hi_row = reduce(np.kron, [f.entries[-1] for f in fs])
    return TransitionMatrix.iid(lo_row), TransitionMatrix.iid(hi_row), per
