"""Explicit error bounds between the exact filter and a reduced filter.

All functions take the reduced transition matrix ``P_lo`` (any matrix with
``apply_transpose``) and a discrete observation model unless noted.
Distances are l1 unless the name says variational (half l1).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateF, DimensionMismatch, RequiresDiscreteObs, ZeroLikelihood
from .hmm import DiscreteObservation, ZERO_LIKELIHOOD, as_transition, bayes_update, predict


def dobrushin(P):
    """Dobrushin ergodicity coefficient ``0.5 * max_ij ||P_i - P_j||_1``.

    Examples
    --------
    >>> dobrushin(np.eye(3))
    1.0
    >>> dobrushin(np.tile([0.2, 0.8], (2, 1)))
    0.0
    """
    P = np.asarray(getattr(P, "entries", P), dtype=float)
    if getattr(P, "ndim", 0) != 2:
        raise DimensionMismatch("expected a matrix")
    best = 0.0
    # Row blocks keep memory at O(block * X^2) for large X.
    block = max(1, 2 ** 22 // max(P.shape[0] * P.shape[1], 1))
    for s in range(0, P.shape[0], block):
        d = np.abs(P[s:s + block, None, :] - P[None, :, :]).sum(axis=2)
        best = max(best, float(d.max()))
    return 0.5 * best


def variational_distance(p1, p2):
    """Half the l1 distance between two pmfs."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if p1.shape != p2.shape:
        raise DimensionMismatch(f"shapes {p1.shape} and {p2.shape} differ")
    return 0.5 * float(np.abs(p1 - p2).sum())


def tight_holder_bound(f, p1, p2):
    """Right side of ``|f'(p1 - p2)| <= max_ij |f_i - f_j| * dvar(p1, p2)``."""
    f = np.asarray(f, dtype=float)
    return float(f.max() - f.min()) * variational_distance(p1, p2)


def _require_discrete(obs):
    if not isinstance(obs, DiscreteObservation):
        raise RequiresDiscreteObs("this bound sums over observations; use a discrete model")
    return obs.B


def row_l1_epsilon(P, P_lo):
    """Smallest ``eps`` with ``||P' pi - P_lo' pi||_1 <= eps`` for every belief."""
    P = np.asarray(getattr(P, "entries", P), dtype=float)
    P_lo = np.asarray(getattr(P_lo, "entries", P_lo), dtype=float)
    return float(np.abs(P - P_lo).sum(axis=1).max())


def one_step_bound_rhs(pi, P_lo, obs, g, eps):
    """Bound on the expected one-step deviation of conditional means.

    Returns ``eps * sum_y max_ij g'(I - T(pi, y; P_lo) 1') B_y (e_i - e_j)``.
    With ``f_i = B_iy (g_i - g' T)`` the inner maximum is ``max f - min f``.

    Raises
    ------
    RequiresDiscreteObs
    """
    B = _require_discrete(obs)
    g = np.asarray(g, dtype=float)
    pred = predict(pi, P_lo)
    total = 0.0
    for y in range(B.shape[1]):
        like = B[:, y]
        if like.max() == 0:
            continue
        unnorm = like * pred
        s = unnorm.sum()
        if s <= ZERO_LIKELIHOOD:
            # T(pi, y) is undefined; the term reduces to the spread of B_y g.
            f = like * g
        else:
            f = like * (g - g @ (unnorm / s))
        total += f.max() - f.min()
    return float(eps) * total


def one_step_deviation(pi, P, P_lo, obs, g):
    """Exact left side: ``E_y |g'(T(pi, y; P) - T(pi, y; P_lo))|`` with ``y`` drawn
    from ``sigma(pi, y; P) = 1' B_y P' pi``.

    Returns
    -------
    mean : float
    terms : (Y,) ndarray
        Per-observation deviations.
    probs : (Y,) ndarray
        ``sigma(pi, y; P)``.
    """
    B = _require_discrete(obs)
    g = np.asarray(g, dtype=float)
    a = predict(pi, P)
    b = predict(pi, P_lo)
    Ua = B * a[:, None]
    Ub = B * b[:, None]
    sa = Ua.sum(axis=0)
    sb = Ub.sum(axis=0)
    ok = (sa > ZERO_LIKELIHOOD) & (sb > ZERO_LIKELIHOOD)
    terms = np.zeros(B.shape[1])
    terms[ok] = np.abs(g @ Ua[:, ok] / sa[ok] - g @ Ub[:, ok] / sb[ok])
    return float(sa @ terms), terms, sa


def mc_one_step_deviation(pi, P, P_lo, obs, g, n, rng):
    """Monte-Carlo estimate of :func:`one_step_deviation` from ``n`` draws of ``y``.

    Returns
    -------
    mean, standard_error : float
    """
    _, terms, probs = one_step_deviation(pi, P, P_lo, obs, g)
    probs = probs / probs.sum()
    ys = rng.choice(len(probs), size=n, p=probs)
    v = terms[ys]
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")


def likelihood_ratio_floor(obs, y):
    """``mu(y) = min_i B_iy / max_i B_iy``."""
    B = _require_discrete(obs)
    col = B[:, y]
    return float(col.min() / col.max())


def normalizer_ratio(pi_lo_prev, y, P_lo, obs):
    """``F(pi_lo, y) = 1' B_y P_lo' pi_lo / max_i B_iy``."""
    B = _require_discrete(obs)
    col = B[:, y]
    return float(col @ predict(pi_lo_prev, P_lo) / col.max())


def samplepath_bound_step(prev, pi_lo_prev, y, P_lo, obs, eps, rho=None):
    """One step of the recursive l1 bound on ``||pi_k - pi_lo_k||_1``.

    Returns ``eps / max(F - eps, mu) + rho * prev / F`` where ``F`` and
    ``mu`` are given by :func:`normalizer_ratio` and
    :func:`likelihood_ratio_floor`, and ``rho`` is the Dobrushin coefficient
    of ``P_lo`` (computed when not supplied). A zero denominator gives
    ``inf``, which is a valid if useless bound.

    Raises
    ------
    DegenerateF
        If ``F <= 0``.
    """
    if prev < 0:
        raise ValueError("prev must be nonnegative")
    F = normalizer_ratio(pi_lo_prev, y, P_lo, obs)
    if not F > 0:
        raise DegenerateF(f"F = {F} for observation {y}")
    mu = likelihood_ratio_floor(obs, y)
    rho = dobrushin(P_lo) if rho is None else rho
    den = max(F - eps, mu)
    first = eps / den if den > 0 else (0.0 if eps == 0 else np.inf)
    # rho = 0 drops the memory term, even after an infinite previous bound.
    second = rho * prev / F if rho > 0 else 0.0
    return float(first + second)


def bayes_contraction_check(pi, pi_tilde, y, obs, eps=None):
    """Check the Bayes-update contraction and the normalizer lower bound.

    Returns
    -------
    lhs : float
        ``dvar(B(pi, y), B(pi_tilde, y))``.
    rhs : float
        ``max_i B_iy / (1' B_y pi) * dvar(pi, pi_tilde)``.
    normalizer : float
        ``1' B_y pi``.
    normalizer_lb : float or None
        ``max(1' B_y pi_tilde - eps * max_i B_iy, min_i B_iy)`` when ``eps``
        is given. It bounds ``normalizer`` whenever
        ``||pi - pi_tilde||_1 <= eps``.
    """
    like = np.asarray(obs.likelihood(y), dtype=float)
    pi = np.asarray(pi, dtype=float)
    pi_tilde = np.asarray(pi_tilde, dtype=float)
    s = float(like @ pi)
    if s <= ZERO_LIKELIHOOD:
        raise ZeroLikelihood(f"observation {y} has zero likelihood under pi")
    lhs = variational_distance(bayes_update(pi, y, obs), bayes_update(pi_tilde, y, obs))
    rhs = like.max() / s * variational_distance(pi, pi_tilde)
    lb = None
    if eps is not None:
        lb = max(float(like @ pi_tilde) - eps * like.max(), float(like.min()))
    return lhs, rhs, s, lb


@dataclass
class BoundTrace:
    """Per-step records of the recursive sample-path bound.

    ``distance`` holds the exact ``||pi_k - pi_lo_k||_1`` when the exact
    filter was run, else NaN.
    """

    k: list = field(default_factory=list)
    distance: list = field(default_factory=list)
    bound: list = field(default_factory=list)
    F: list = field(default_factory=list)
    mu: list = field(default_factory=list)

    def append(self, k, distance, bound, F, mu):
        self.k.append(k)
        self.distance.append(distance)
        self.bound.append(bound)
        self.F.append(F)
        self.mu.append(mu)

    def as_array(self):
        return np.column_stack([self.k, self.distance, self.bound, self.F, self.mu])

    @property
    def violations(self):
        d = np.asarray(self.distance)
        b = np.asarray(self.bound)
        ok = ~np.isnan(d)
        return int(np.count_nonzero(d[ok] > b[ok] + 1e-12))


def bound_trace(observations, P_lo, obs, eps, pi0, P=None, mode="self"):
    """Run the reduced filter and the recursive bound along an observation path.

    Parameters
    ----------
    observations : sequence
    P_lo : transition matrix
    obs : DiscreteObservation
    eps : float
        Row l1 radius, see :func:`row_l1_epsilon`.
    pi0 : (X,) array_like
        Common initial belief, so the initial distance is 0.
    P : transition matrix, optional
        True matrix; when given the exact filter runs alongside and
        ``distance`` is recorded.
    mode : {"self", "oracle"}
        ``self`` feeds the previous bound value into the recursion. Since the
        right side increases with ``prev`` this remains a valid bound.
        ``oracle`` feeds the exact previous distance (requires ``P``).

    Returns
    -------
    BoundTrace
    """
    if mode not in ("self", "oracle"):
        raise ValueError("mode must be 'self' or 'oracle'")
    if mode == "oracle" and P is None:
        raise ValueError("oracle mode needs the true matrix P")
    P_lo = as_transition(P_lo)
    rho = dobrushin(P_lo)
    lo = np.asarray(pi0, dtype=float)
    ex = lo.copy()
    prev = 0.0
    dist = 0.0
    tr = BoundTrace()
    for k, y in enumerate(observations, start=1):
        feed = dist if mode == "oracle" else prev
        b = samplepath_bound_step(feed, lo, y, P_lo, obs, eps, rho=rho)
        F = normalizer_ratio(lo, y, P_lo, obs)
        mu = likelihood_ratio_floor(obs, y)
        lo = bayes_update(predict(lo, P_lo), y, obs)
        if P is not None:
            ex = bayes_update(predict(ex, P), y, obs)
            dist = float(np.abs(ex - lo).sum())
        tr.append(k, dist if P is not None else np.nan, b, F, mu)
        prev = b
    return tr
