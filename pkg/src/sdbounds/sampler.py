"""Monte-Carlo importance-sampling filters.

:func:`constrained_is_step` estimates the prediction ``P' pi_hat`` one
coordinate at a time by importance sampling and keeps only samples whose
value is consistent with the MLR band between the lower and upper bound
predictions. :func:`lowrank_is_step` estimates the lower-bound prediction
through the SVD factors of the bound matrix.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateDistribution, DimensionMismatch, InvalidBounds
from .hmm import as_transition, bayes_update, predict
from .opcount import tally
from .orders import mlr_geq

#: Importance distributions.
POSTERIOR = "posterior"            # q_j = pi_hat
OPTIMAL = "optimal"                # q_j(i) ~ P_ij pi_hat(i); O(X^2), reference only
LOWER_WEIGHTED = "lower_weighted"  # q_j(i) ~ P_lo_ij pi_hat(i)
UPPER_WEIGHTED = "upper_weighted"  # q_j(i) ~ P_hi_ij pi_hat(i)
Q_CHOICES = (POSTERIOR, OPTIMAL, LOWER_WEIGHTED, UPPER_WEIGHTED)


@dataclass(frozen=True)
class SamplerConfig:
    """Settings for the sampling filters.

    Attributes
    ----------
    L : int
        Samples per coordinate (per factor for the low-rank filter).
    q_choice : str
        One of :data:`Q_CHOICES`.
    seed : int or None
    eliminate : bool
        Zero the importance mass of rejected indices for the rest of the
        coordinate and renormalize.
    constrained : bool
        Use the MLR band; ``False`` gives the unconstrained estimator with
        ``alpha_j = 0`` and ``beta_j`` equal to the upper-bound tail mass.
    """

    L: int = 10
    q_choice: str = POSTERIOR
    seed: int = None
    eliminate: bool = True
    constrained: bool = True

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if self.q_choice not in Q_CHOICES:
            raise ValueError(f"q_choice must be one of {Q_CHOICES}")


@dataclass
class ConstrainedEstimate:
    predicted: np.ndarray
    filtered: np.ndarray
    accepted: np.ndarray
    fallback: np.ndarray
    clipped: np.ndarray
    bounds_fallback: bool = False

    @property
    def n_fallback(self):
        return int(self.fallback.sum())


def importance_distribution(choice, j, pi_hat, P=None, bound=None):
    """Importance pmf ``q_j`` for coordinate ``j`` (0-based).

    ``posterior`` returns ``pi_hat``; ``lower_weighted``/``upper_weighted``
    weight it by column ``j`` of the bound matrix ``bound``; ``optimal``
    weights by column ``j`` of ``P``.

    Raises
    ------
    DegenerateDistribution
        If the weighted mass is zero. Callers fall back to ``pi_hat``.
    """
    pi_hat = np.asarray(pi_hat, dtype=float)
    if choice == POSTERIOR:
        w = pi_hat.copy()
    elif choice == OPTIMAL:
        w = np.asarray(getattr(P, "entries", P), dtype=float)[:, j] * pi_hat
    elif choice in (LOWER_WEIGHTED, UPPER_WEIGHTED):
        w = np.asarray(getattr(bound, "entries", bound), dtype=float)[:, j] * pi_hat
    else:
        raise ValueError(f"unknown importance choice {choice!r}")
    s = w.sum()
    if not s > 0:
        raise DegenerateDistribution(f"importance weights for coordinate {j} sum to zero")
    return w / s


@njit(cache=True)
def _draw(cdf, q, removed, n_removed, u):
    """Inverse-CDF draw from ``q`` with the indices in ``removed[:n_removed]``
    (sorted ascending) excluded and the remaining mass renormalized."""
    total = cdf[-1]
    rm = 0.0
    for k in range(n_removed):
        rm += q[removed[k]]
    target = u * (total - rm)
    acc = 0.0
    for k in range(n_removed):
        r = removed[k]
        before = cdf[r - 1] if r > 0 else 0.0
        if before - acc > target:
            break
        acc += q[r]
    i = np.searchsorted(cdf, target + acc, side="right")
    n = cdf.shape[0]
    if i >= n:
        i = n - 1
    while q[i] == 0.0 and i > 0:
        i -= 1
    return i


@njit(cache=True)
def _insert_sorted(removed, n, v):
    k = n
    while k > 0 and removed[k - 1] > v:
        removed[k] = removed[k - 1]
        k -= 1
    removed[k] = v
    return n + 1


@njit(cache=True)
def _cis_kernel(P, pi_hat, lo, hi, Qw, per_coord_q, U, constrained, eliminate):
    X = pi_hat.shape[0]
    Lm = U.shape[1]
    out = np.zeros(X)
    accepted = np.zeros(X, dtype=np.int64)
    fallback = np.zeros(X, dtype=np.bool_)
    clipped = np.zeros(X, dtype=np.bool_)
    removed = np.empty(Lm + 1, dtype=np.int64)
    mults = 0
    tail = 1.0
    q = np.empty(X)
    cdf = np.empty(X)
    if not per_coord_q:
        s = 0.0
        for i in range(X):
            q[i] = Qw[i, 0]
            s += q[i]
            cdf[i] = s
    for j in range(X):
        if per_coord_q:
            s = 0.0
            for i in range(X):
                q[i] = Qw[i, j]
                s += q[i]
                cdf[i] = s
            mults += X
        qsum = cdf[X - 1]
        # Band for coordinate j.
        if j == 0:
            a, b = 0.0, 1.0
        elif constrained:
            a = 0.0
            if lo[j - 1] > 0.0:
                a = lo[j] * out[j - 1] / lo[j - 1]
            b = tail
            if hi[j - 1] > 0.0:
                b = min(hi[j] * out[j - 1] / hi[j - 1], tail)
            mults += 4
        else:
            a, b = 0.0, tail
        n_removed = 0
        total = 0.0
        count = 0
        for l in range(Lm):
            if n_removed > 0 and qsum - _removed_mass(q, removed, n_removed) <= 0.0:
                break
            i = _draw(cdf, q, removed, n_removed, U[j, l])
            # Weights use the original q_j, so with q_j = pi_hat the sample
            # value is exactly P_ij whether or not indices were eliminated.
            v = P[i, j] * pi_hat[i] * qsum / q[i]
            mults += 3
            if a <= v <= b:
                total += v
                count += 1
            elif eliminate:
                dup = False
                for k in range(n_removed):
                    if removed[k] == i:
                        dup = True
                if not dup:
                    n_removed = _insert_sorted(removed, n_removed, i)
        if count > 0:
            val = total / count
            mults += 1
        else:
            val = lo[j]
            fallback[j] = True
        if val < a:
            val = a
            clipped[j] = True
        elif val > b:
            val = b
            clipped[j] = True
        out[j] = val
        accepted[j] = count
        tail -= hi[j]
        if tail < 0.0:
            tail = 0.0
    return out, accepted, fallback, clipped, mults


@njit(cache=True)
def _removed_mass(q, removed, n):
    s = 0.0
    for k in range(n):
        s += q[removed[k]]
    return s


def _dense_entries(P):
    E = getattr(P, "entries", P)
    return np.ascontiguousarray(np.asarray(E, dtype=float))


def _importance_matrix(cfg, pi_hat, P, lower, upper):
    """Returns (Qw, per_coord): Qw is (X, 1) for a shared q, else (X, X)."""
    if cfg.q_choice == POSTERIOR:
        return pi_hat[:, None].copy(), False
    src = {OPTIMAL: P, LOWER_WEIGHTED: lower, UPPER_WEIGHTED: upper}[cfg.q_choice]
    if src is None:
        raise ValueError(f"q_choice {cfg.q_choice!r} needs the corresponding matrix")
    if getattr(src, "is_iid", False):
        # Identical rows: q_j is proportional to pi_hat for every j.
        return pi_hat[:, None].copy(), False
    W = _dense_entries(src) * pi_hat[:, None]
    bad = W.sum(axis=0) <= 0
    if np.any(bad):
        W[:, bad] = pi_hat[:, None]
    return np.ascontiguousarray(W), True


def constrained_is_step(pi_hat_prev, bounds, y, P, obs, cfg=SamplerConfig(), rng=None,
                        lower=None, upper=None, check=True):
    """One step of the dominance-constrained importance sampling filter.

    Parameters
    ----------
    pi_hat_prev : (X,) array_like
        Previous filtered estimate.
    bounds : tuple of (X,) arrays
        Predicted lower and upper bounds ``(P_lo' pi_lo, P_hi' pi_hi)``.
    y : observation
    P : TransitionMatrix or (X, X) array
        True transition matrix; only sampled entries are read.
    obs : observation model
    cfg : SamplerConfig
    rng : numpy.random.Generator, optional
        Defaults to ``default_rng(cfg.seed)``. Each coordinate ``j`` uses row
        ``j`` of an ``(X, L)`` block of uniforms, so results do not depend on
        evaluation order.
    lower, upper : TransitionMatrix, optional
        Bound matrices, needed for the weighted importance choices.

    Returns
    -------
    ConstrainedEstimate

    Raises
    ------
    InvalidBounds
        If the upper prediction does not MLR-dominate the lower one.
    """
    pi_hat = np.ascontiguousarray(pi_hat_prev, dtype=float)
    lo = np.ascontiguousarray(bounds[0], dtype=float)
    hi = np.ascontiguousarray(bounds[1], dtype=float)
    X = pi_hat.shape[0]
    if lo.shape != (X,) or hi.shape != (X,):
        raise DimensionMismatch("bounds must match the belief length")
    if check and not mlr_geq(hi, lo, 1e-10):
        raise InvalidBounds("upper bound prediction does not MLR-dominate the lower one")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    Pd = _dense_entries(P)
    Qw, per_coord = _importance_matrix(cfg, pi_hat, P, lower, upper)
    U = rng.random((X, cfg.L))
    out, acc, fb, cl, mults = _cis_kernel(Pd, pi_hat, lo, hi, Qw, per_coord, U,
                                          cfg.constrained, cfg.eliminate)
    tally(mults + X)
    s = out.sum()
    bounds_fallback = False
    if not s > 0:
        out = lo.copy()
        s = out.sum()
        bounds_fallback = True
    predicted = out / s
    filtered = bayes_update(predicted, y, obs)
    return ConstrainedEstimate(predicted, filtered, acc, fb, cl, bounds_fallback)


@njit(cache=True)
def _lowrank_kernel(U, pi_hat, Qw, per_r, Uni):
    X, R = U.shape
    Lm = Uni.shape[1]
    uhat = np.zeros(R)
    cdf = np.empty(X)
    q = np.empty(X)
    removed = np.empty(1, dtype=np.int64)
    for r in range(R):
        col = r if per_r else 0
        s = 0.0
        for i in range(X):
            q[i] = Qw[i, col]
            s += q[i]
            cdf[i] = s
        acc = 0.0
        for l in range(Lm):
            i = _draw(cdf, q, removed, 0, Uni[r, l])
            acc += U[i, r] * pi_hat[i] * s / q[i]
        uhat[r] = acc / Lm
    return uhat


@dataclass
class LowRankEstimate:
    predicted: np.ndarray
    filtered: np.ndarray
    u_hat: np.ndarray


def lowrank_importance(U, pi_hat, choice=POSTERIOR):
    """Importance pmfs for the factored estimator: ``pi_hat`` or ``|u_r| pi_hat``."""
    if choice == POSTERIOR:
        return pi_hat[:, None].copy(), False
    if choice == "abs_weighted":
        W = np.abs(U) * pi_hat[:, None]
        bad = W.sum(axis=0) <= 0
        W[:, bad] = pi_hat[:, None]
        return np.ascontiguousarray(W), True
    raise ValueError(f"unknown importance choice {choice!r}")


def estimate_projections(factors, pi_hat, L, rng, choice=POSTERIOR):
    """Importance-sampling estimates of ``u_r' pi_hat`` for every factor ``r``."""
    U, s, Vt = factors
    pi_hat = np.ascontiguousarray(pi_hat, dtype=float)
    Qw, per_r = lowrank_importance(np.asarray(U), pi_hat, choice)
    R = len(s)
    Uni = rng.random((R, L))
    uhat = _lowrank_kernel(np.ascontiguousarray(U, dtype=float), pi_hat, Qw, per_r, Uni)
    tally(3 * R * L)
    return uhat


def lowrank_is_step(pi_lo_hat_prev, factors, y, obs, cfg=SamplerConfig(), rng=None,
                    choice=POSTERIOR):
    """One step of the factored importance-sampling filter for the lower bound.

    Parameters
    ----------
    pi_lo_hat_prev : (X,) array_like
    factors : TransitionMatrix or (U, s, Vt)
        Factorization of the bound matrix, ``P_lo = U diag(s) Vt``.
    y, obs
        Observation and observation model.

    Returns
    -------
    LowRankEstimate
    """
    if hasattr(factors, "factors"):
        if factors.factors is None:
            factors = factors.factorize()
        factors = factors.factors
    U, s, Vt = (np.asarray(a, dtype=float) for a in factors)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    uhat = estimate_projections((U, s, Vt), pi_lo_hat_prev, cfg.L, rng, choice)
    pred = Vt.T @ (s * uhat)
    tally(Vt.size + len(s))
    np.maximum(pred, 0.0, out=pred)
    tot = pred.sum()
    if not tot > 0:
        raise DegenerateDistribution("factored prediction has no positive mass")
    pred = pred / tot
    return LowRankEstimate(pred, bayes_update(pred, y, obs), uhat)


class DominanceFilter:
    """Runs the bound filters and the constrained sampler along a path.

    Parameters
    ----------
    model : HmmModel
    lower, upper : TransitionMatrix
        Bound matrices (typically factored, so prediction is O(XR)).
    cfg : SamplerConfig
    """

    def __init__(self, model, lower, upper, cfg=SamplerConfig()):
        self.model = model
        self.lower = as_transition(lower)
        self.upper = as_transition(upper)
        self.cfg = cfg

    def run(self, observations, pi0, seed=None):
        rng = np.random.default_rng(self.cfg.seed if seed is None else seed)
        X = self.model.n_states
        lo = hi = est = np.asarray(pi0, dtype=float)
        out = {"lower": np.empty((len(observations), X)), "upper": np.empty((len(observations), X)),
               "estimate": np.empty((len(observations), X)),
               "fallbacks": np.zeros(len(observations), dtype=np.int64),
               "min_accepted": np.zeros(len(observations), dtype=np.int64)}
        for k, y in enumerate(observations):
            lo_pred = predict(lo, self.lower)
            hi_pred = predict(hi, self.upper)
            e = constrained_is_step(est, (lo_pred, hi_pred), y, self.model.P, self.model.obs,
                                    self.cfg, rng, self.lower, self.upper)
            lo = bayes_update(lo_pred, y, self.model.obs)
            hi = bayes_update(hi_pred, y, self.model.obs)
            est = e.filtered
            out["lower"][k], out["upper"][k], out["estimate"][k] = lo, hi, est
            out["fallbacks"][k] = e.n_fallback
            out["min_accepted"][k] = e.accepted.min()
        return out
