"""Exact HMM filtering primitives.

States and discrete observations are 0-based throughout the Python API.
Beliefs are plain 1-D float arrays on the unit simplex; every public function
returning a belief renormalizes it so the entries sum to one.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ZeroLikelihood
from .opcount import tally

#: Normalizers at or below this value are treated as an impossible observation.
ZERO_LIKELIHOOD = 1e-300

#: Tolerance on row sums and belief sums.
STOCHASTIC_ATOL = 1e-9


def as_belief(pi, n=None, atol=1e-6):
    """Validate ``pi`` as a probability vector and return a normalized copy."""
    v = np.array(pi, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatch(f"belief must be 1-D, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise DimensionMismatch(f"belief has length {v.shape[0]}, expected {n}")
    if v.min() < -1e-12:
        raise ValueError("belief has negative entries")
    np.maximum(v, 0.0, out=v)
    s = v.sum()
    if abs(s - 1.0) > atol:
        raise ValueError(f"belief sums to {s!r}, not 1")
    return v / s


def _normalize(v):
    s = v.sum()
    if not s > ZERO_LIKELIHOOD:
        raise ZeroLikelihood(f"normalizer {s!r} is numerically zero")
    tally(v.shape[0])
    return v / s


class TransitionMatrix:
    """Row-stochastic matrix, optionally carrying a low-rank factorization.

    Parameters
    ----------
    entries : (X, X) array_like
        Transition probabilities ``P[i, j] = P(x_{k+1} = j | x_k = i)``.
    factors : tuple (U, s, Vt), optional
        Factorization ``P = U @ diag(s) @ Vt`` with ``U`` of shape (X, R),
        ``s`` of shape (R,) and ``Vt`` of shape (R, X). When present,
        :func:`predict` runs in O(XR).
    check : bool
        Validate stochasticity and the factorization.
    """

    def __init__(self, entries, factors=None, check=True):
        P = np.array(entries, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise DimensionMismatch(f"transition matrix must be square, got {P.shape}")
        if check:
            if P.min() < -1e-12:
                raise ValueError(f"negative transition probability {P.min()!r}")
            dev = np.abs(P.sum(axis=1) - 1.0).max()
            if dev > STOCHASTIC_ATOL:
                raise ValueError(f"rows do not sum to one (max deviation {dev:.3g})")
        P.setflags(write=False)
        self._P = P
        self._factors = None
        self._iid_row = None
        if factors is not None:
            U, s, Vt = (np.array(a, dtype=float) for a in factors)
            if U.ndim != 2 or Vt.ndim != 2 or s.ndim != 1:
                raise DimensionMismatch("factors must be (U, s, Vt) with U, Vt 2-D")
            R = s.shape[0]
            X = P.shape[0]
            if U.shape != (X, R) or Vt.shape != (R, X):
                raise DimensionMismatch(
                    f"factor shapes {U.shape}, {s.shape}, {Vt.shape} do not match X={X}")
            if check:
                # ||P||_2 >= 1 for stochastic P, and the Frobenius norm bounds
                # the spectral norm, so this is conservative.
                err = np.linalg.norm(P - (U * s) @ Vt)
                if err > 1e-8:
                    raise ValueError(f"factorization reconstruction error {err:.3g} > 1e-8")
            for a in (U, s, Vt):
                a.setflags(write=False)
            self._factors = (U, s, Vt)
            if R == 1 and np.ptp(P, axis=0).max() <= 1e-14:
                row = P[0].copy()
                row.setflags(write=False)
                self._iid_row = row

    @classmethod
    def iid(cls, row, n_states=None):
        """Rank-one matrix whose rows all equal ``row``; factored without an SVD."""
        r = np.asarray(row, dtype=float)
        X = r.shape[0] if n_states is None else int(n_states)
        if X != r.shape[0]:
            raise DimensionMismatch("row length must equal the number of states")
        nr = np.linalg.norm(r)
        U = np.full((X, 1), 1.0 / np.sqrt(X))
        s = np.array([np.sqrt(X) * nr])
        Vt = (r / nr)[None, :]
        return cls(np.tile(r, (X, 1)), factors=(U, s, Vt))

    @classmethod
    def from_factors(cls, U, s, Vt, check=True):
        U = np.asarray(U, dtype=float)
        s = np.asarray(s, dtype=float)
        Vt = np.asarray(Vt, dtype=float)
        return cls((U * s) @ Vt, factors=(U, s, Vt), check=check)

    def factorize(self, rank=None, rtol=1e-12):
        """Return a copy carrying a truncated SVD factorization.

        Singular values below ``rtol * sigma_1`` are dropped unless ``rank``
        is given explicitly.
        """
        U, s, Vt = np.linalg.svd(self._P)
        if rank is None:
            rank = max(1, int(np.sum(s > rtol * s[0])))
        return TransitionMatrix(self._P, factors=(U[:, :rank], s[:rank], Vt[:rank]))

    @property
    def entries(self):
        return self._P

    @property
    def n_states(self):
        return self._P.shape[0]

    @property
    def factors(self):
        return self._factors

    @property
    def rank(self):
        """Factorization rank if factored, else the numerical rank."""
        if self._factors is not None:
            return self._factors[1].shape[0]
        return numerical_rank(self._P)

    @property
    def is_iid(self):
        return self._iid_row is not None

    def __array__(self, dtype=None, copy=None):
        return self._P if dtype is None else self._P.astype(dtype)

    def __repr__(self):
        f = "" if self._factors is None else f", rank={self.rank}"
        return f"TransitionMatrix(X={self.n_states}{f})"

    def apply_transpose(self, pi):
        """Unnormalized ``P' pi``; factored path when a factorization exists."""
        X = self.n_states
        if self._iid_row is not None:
            # P' pi = row * (1' pi) and 1' pi = 1 for a belief.
            return self._iid_row.copy()
        if self._factors is not None:
            U, s, Vt = self._factors
            R = s.shape[0]
            c = U.T @ pi
            out = Vt.T @ (s * c)
            tally(2 * X * R + R)
            return out
        tally(X * X)
        return self._P.T @ pi

    def sample_next(self, state, rng):
        row = self._P[state]
        j = int(np.searchsorted(np.cumsum(row), rng.random() * row.sum(), side="right"))
        return min(j, self.n_states - 1)


def numerical_rank(P, rtol=1e-6):
    """Number of singular values above ``rtol * sigma_1``."""
    s = np.linalg.svd(np.asarray(P, dtype=float), compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def as_transition(P):
    if isinstance(P, TransitionMatrix) or hasattr(P, "apply_transpose"):
        return P
    return TransitionMatrix(P)


class DiscreteObservation:
    """Finite observation alphabet with likelihood matrix ``B[x, y]``."""

    is_discrete = True

    def __init__(self, B):
        B = np.array(B, dtype=float)
        if B.ndim != 2:
            raise DimensionMismatch("B must be 2-D (states x observations)")
        if B.min() < 0:
            raise ValueError("B has negative entries")
        dev = np.abs(B.sum(axis=1) - 1.0).max()
        if dev > STOCHASTIC_ATOL:
            raise ValueError(f"rows of B do not sum to one (max deviation {dev:.3g})")
        B.setflags(write=False)
        self.B = B

    @property
    def n_states(self):
        return self.B.shape[0]

    @property
    def n_obs(self):
        return self.B.shape[1]

    def likelihood(self, y):
        y = int(y)
        if not 0 <= y < self.n_obs:
            raise ValueError(f"observation {y} outside 0..{self.n_obs - 1}")
        return self.B[:, y]

    def sample(self, state, rng):
        row = self.B[state]
        y = int(np.searchsorted(np.cumsum(row), rng.random() * row.sum(), side="right"))
        return min(y, self.n_obs - 1)

    def __repr__(self):
        return f"DiscreteObservation(X={self.n_states}, Y={self.n_obs})"


class GaussianObservation:
    """Scalar observation ``y = level[x] + v`` with ``v ~ N(0, sigma^2)``.

    :meth:`likelihood` returns densities rescaled so the largest equals one.
    Filtering is invariant to that scale, and the rescaling keeps high-SNR
    runs from underflowing. Each distinct level is evaluated once.
    """

    is_discrete = False

    def __init__(self, levels, sigma):
        levels = np.array(levels, dtype=float)
        if levels.ndim != 1:
            raise DimensionMismatch("levels must be 1-D")
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        levels.setflags(write=False)
        self.levels = levels
        self.sigma = float(sigma)
        self._ulevels, self._inverse = np.unique(levels, return_inverse=True)

    @property
    def n_states(self):
        return self.levels.shape[0]

    def density(self, y):
        """Gaussian density of ``y`` under every state (natural scale)."""
        d = (y - self.levels) / self.sigma
        return np.exp(-0.5 * d * d) / (np.sqrt(2 * np.pi) * self.sigma)

    def likelihood(self, y):
        d = (float(y) - self._ulevels) / self.sigma
        logl = -0.5 * d * d
        u = np.exp(logl - logl.max())
        np.maximum(u, ZERO_LIKELIHOOD, out=u)
        tally(3 * u.shape[0])
        return u[self._inverse]

    def sample(self, state, rng):
        return float(self.levels[state] + self.sigma * rng.standard_normal())

    def __repr__(self):
        return f"GaussianObservation(X={self.n_states}, sigma={self.sigma:g})"


@dataclass(frozen=True)
class HmmModel:
    P: TransitionMatrix
    obs: object
    g: np.ndarray = field(default=None)

    def __post_init__(self):
        P = as_transition(self.P)
        object.__setattr__(self, "P", P)
        X = P.n_states
        if self.obs.n_states != X:
            raise DimensionMismatch(
                f"observation model has {self.obs.n_states} states, P has {X}")
        g = np.arange(1, X + 1, dtype=float) if self.g is None else np.array(self.g, float)
        if g.shape != (X,):
            raise DimensionMismatch(f"levels g must have length {X}")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def n_states(self):
        return self.P.n_states


def predict(pi, P):
    """One-step prediction ``P' pi``, renormalized."""
    P = as_transition(P)
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (P.n_states,):
        raise DimensionMismatch(f"belief length {pi.shape} vs X={P.n_states}")
    out = P.apply_transpose(pi)
    np.maximum(out, 0.0, out=out)
    s = out.sum()
    if abs(s - 1.0) > 1e-12:
        out = _normalize(out)
    return out


def bayes_update(pi, y, obs):
    """Bayes rule ``B_y pi / 1' B_y pi``."""
    pi = np.asarray(pi, dtype=float)
    lik = obs.likelihood(y)
    if lik.shape != pi.shape:
        raise DimensionMismatch(f"likelihood length {lik.shape} vs belief {pi.shape}")
    tally(pi.shape[0])
    return _normalize(lik * pi)


def filter_update(pi, y, model, P=None):
    """One step of the HMM filter ``T(pi, y; P)``.

    ``P`` defaults to the model's transition matrix; passing a different one
    (for example a lower or upper bound matrix) runs the corresponding
    bound filter with the same observation model.
    """
    return bayes_update(predict(pi, model.P if P is None else P), y, model.obs)


def run_filter(model, observations, pi0, P=None):
    """Filtered beliefs for a whole observation path, shape (T, X)."""
    P = model.P if P is None else as_transition(P)
    pi = as_belief(pi0, model.n_states)
    out = np.empty((len(observations), model.n_states))
    for k, y in enumerate(observations):
        pi = filter_update(pi, y, model, P)
        out[k] = pi
    return out


def conditional_mean(pi, g):
    pi = np.asarray(pi, dtype=float)
    g = np.asarray(g, dtype=float)
    if pi.shape != g.shape:
        raise DimensionMismatch(f"belief {pi.shape} and levels {g.shape} differ")
    return float(g @ pi)


def map_estimate(pi):
    """Index of the most probable state; ties go to the lowest index."""
    return int(np.argmax(np.asarray(pi)))


def simulate(model, horizon, seed=None, pi0=None):
    """Draw a state path and an observation path from ``model``.

    Returns
    -------
    states : (horizon,) int array
        ``x_1, ..., x_horizon``; ``x_0`` is drawn from ``pi0`` but not returned.
    observations : (horizon,) array
        Integer indices for discrete models, floats for Gaussian ones.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = np.random.default_rng(seed)
    X = model.n_states
    pi0 = np.full(X, 1.0 / X) if pi0 is None else as_belief(pi0, X)
    x = min(int(np.searchsorted(np.cumsum(pi0), rng.random(), side="right")), X - 1)
    states = np.empty(horizon, dtype=np.int64)
    ys = np.empty(horizon, dtype=np.int64 if model.obs.is_discrete else float)
    for k in range(horizon):
        x = model.P.sample_next(x, rng)
        states[k] = x
        ys[k] = model.obs.sample(x, rng)
    return states, ys
