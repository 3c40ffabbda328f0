"""ADMM solver for weighted nuclear-norm minimization over a polytope.

Solves

    minimize    || W1 Z W2 ||_*
    subject to  Z >= 0,  Z 1 = 1                 (rows on the simplex)
                || Z_i - P_i ||_1 <= eps          (per-row l1 balls)
                A vec(Z) >= 0                     (sparse linear cuts)

by splitting ``y = K vec(Z)`` into four blocks, one per term, each with a
closed-form proximal map: singular value soft-thresholding, row-wise
projection onto the simplex, row-wise projection onto an l1 ball, and
clipping at zero. ``vec`` is row-major throughout.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .errors import SolverStalled


def project_simplex_rows(Y):
    """Euclidean projection of each row of ``Y`` onto the probability simplex."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[1]
    U = -np.sort(-Y, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    k = np.arange(1, n + 1)
    cond = U - css / k > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(Y.shape[0]), rho] / (rho + 1)
    return np.maximum(Y - theta[:, None], 0.0)


def project_l1_rows(D, radius):
    """Project each row of ``D`` onto the l1 ball of the given radius."""
    D = np.asarray(D, dtype=float)
    A = np.abs(D)
    norms = A.sum(axis=1)
    out = D.copy()
    over = norms > radius
    if not np.any(over):
        return out
    if radius <= 0:
        out[over] = 0.0
        return out
    Ao = A[over]
    n = Ao.shape[1]
    U = -np.sort(-Ao, axis=1)
    css = np.cumsum(U, axis=1) - radius
    k = np.arange(1, n + 1)
    cond = U - css / k > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(Ao.shape[0]), rho] / (rho + 1)
    out[over] = np.sign(D[over]) * np.maximum(Ao - theta[:, None], 0.0)
    return out


def svt(Y, t):
    """Singular value soft-thresholding: the prox of ``t * ||.||_*``."""
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    s = np.maximum(s - t, 0.0)
    r = int(np.count_nonzero(s))
    return (U[:, :r] * s[:r]) @ Vt[:r], s


def nuclear_norm(Y):
    return float(np.linalg.svd(Y, compute_uv=False).sum())


@dataclass
class Polytope:
    """Feasible set of the inner problem.

    Attributes
    ----------
    P : (X, X) ndarray
        Centre of the l1 balls.
    eps : float
        Per-row l1 radius.
    A : scipy.sparse matrix or None
        Cut rows acting on row-major ``vec(Z)``; feasibility is ``A z >= 0``.
    """

    P: np.ndarray
    eps: float
    A: object = None

    @property
    def X(self):
        return self.P.shape[0]

    def violation(self, Z):
        """Largest violation over all constraint families (0 when feasible)."""
        Z = np.asarray(Z, dtype=float)
        v = max(0.0, -Z.min(), np.abs(Z.sum(axis=1) - 1.0).max(),
                (np.abs(Z - self.P).sum(axis=1) - self.eps).max())
        if self.A is not None and self.A.shape[0]:
            v = max(v, -(self.A @ Z.reshape(-1)).min())
        return float(v)


@dataclass
class AdmmState:
    """Warm-start state: primal ``x`` and per-block ``(y, u)`` pairs."""

    x: np.ndarray
    y: list
    u: list
    rho: float = 1.0


@dataclass
class AdmmResult:
    Z: np.ndarray
    objective: float
    iterations: int
    violation: float
    converged: bool
    state: AdmmState


def inner_solve(W1, W2, poly, cfg=None, warm=None, *, max_iter=None, feas_tol=None,
                obj_rtol=None, sigma=1e-6, alpha=1.6, check_every=25, raise_on_stall=True,
                log=None):
    """Minimize ``||W1 Z W2||_*`` over ``poly`` with over-relaxed ADMM.

    Parameters
    ----------
    W1, W2 : (X, X) ndarray
        Symmetric positive definite weights.
    poly : Polytope
        Constraint set.
    cfg : SolverConfig, optional
        Supplies ``max_inner_iters``, ``feas_tol`` and ``obj_rtol`` unless
        given explicitly.
    warm : AdmmState, optional
        Previous state; reusing it across reweighting steps saves most of
        the iterations.

    Returns
    -------
    AdmmResult

    Raises
    ------
    SolverStalled
        If the iteration budget runs out before the residuals and the
        constraint violation drop below tolerance. The last iterate is
        attached as ``result``.
    """
    max_iter = max_iter or (cfg.max_inner_iters if cfg is not None else 20000)
    feas_tol = feas_tol or (cfg.feas_tol if cfg is not None else 1e-6)
    obj_rtol = obj_rtol or (cfg.obj_rtol if cfg is not None else 1e-6)
    X = poly.X
    n = X * X
    P = poly.P
    A = poly.A if poly.A is not None and poly.A.shape[0] else None

    # K = [kron(W1, W2'); I; I; A] acting on row-major vec(Z).
    Kn = np.kron(W1, W2.T)
    KtK_parts = [Kn.T @ Kn, np.eye(n), np.eye(n)]
    if A is not None:
        A = sp.csr_matrix(A)
        AtA = (A.T @ A).toarray()
        KtK_parts.append(AtA)
    # Scale the nuclear block so all blocks have comparable operator norms.
    kscale = 1.0 / max(np.linalg.norm(W1, 2) * np.linalg.norm(W2, 2), 1e-12)
    KtK_parts[0] = KtK_parts[0] * kscale ** 2
    Kn = Kn * kscale

    def K_apply(x):
        out = [Kn @ x, x, x]
        if A is not None:
            out.append(A @ x)
        return out

    def Kt_apply(parts):
        v = Kn.T @ parts[0] + parts[1] + parts[2]
        if A is not None:
            v = v + A.T @ parts[3]
        return v

    def prox(parts, rho):
        y0, _ = svt(parts[0].reshape(X, X), 1.0 / (kscale * rho))
        y1 = project_simplex_rows(parts[1].reshape(X, X)).reshape(-1)
        y2 = (P + project_l1_rows(parts[2].reshape(X, X) - P, poly.eps)).reshape(-1)
        out = [y0.reshape(-1), y1, y2]
        if A is not None:
            out.append(np.maximum(parts[3], 0.0))
        return out

    sizes = [b.shape[0] for b in K_apply(np.zeros(n))]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    m_tot = int(offs[-1])

    def split(v):
        return [v[offs[i]:offs[i + 1]] for i in range(len(sizes))]

    if warm is None or warm.y is None or sum(b.shape[0] for b in warm.y) != m_tot:
        x = P.reshape(-1).copy() if warm is None else warm.x.copy()
        y = np.concatenate(prox(K_apply(x), 1.0))
        u = np.zeros(m_tot)
        rho = 1.0 if warm is None else warm.rho
    else:
        x = warm.x.copy()
        y = np.concatenate(warm.y)
        u = np.concatenate(warm.u)
        rho = warm.rho

    def factor(rho):
        H = sigma * np.eye(n) + rho * sum(KtK_parts)
        return cho_factor(H, lower=False, check_finite=False)

    def step(state, rho, cf):
        x, y, u = state[:n], state[n:n + m_tot], state[n + m_tot:]
        rhs = sigma * x + rho * Kt_apply(split(y - u))
        x = cho_solve(cf, rhs, check_finite=False)
        Kx = np.concatenate(K_apply(x))
        vhat = alpha * Kx + (1 - alpha) * y
        y_new = np.concatenate(prox(split(vhat + u), rho))
        u_new = u + vhat - y_new
        return np.concatenate([x, y_new, u_new]), Kx

    cf = factor(rho)
    state = np.concatenate([x, y, u])
    last_obj = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        y_old = state[n:n + m_tot]
        g, Kx = step(state, rho, cf)
        state = g

        if it % check_every:
            continue
        x = g[:n]
        y = g[n:n + m_tot]
        r_prim = np.abs(Kx - y).max()
        r_dual = rho * np.abs(Kt_apply(split(y - y_old))).max()
        Z = x.reshape(X, X)
        obj = nuclear_norm(W1 @ Z @ W2)
        viol = poly.violation(Z)
        rel = abs(obj - last_obj) / max(1.0, abs(obj))
        last_obj = obj
        if log is not None:
            log(it, obj, viol, r_prim, r_dual, rho)
        if viol <= feas_tol and r_prim <= feas_tol and rel <= obj_rtol:
            state = g
            converged = True
            break
        # Residual balancing: keep primal and dual residuals within 5x.
        ratio = r_prim / max(r_dual, 1e-300)
        if ratio > 25.0 or ratio < 0.04:
            new_rho = float(np.clip(rho * np.sqrt(ratio), 1e-6, 1e6))
            if new_rho != rho:
                state = g.copy()
                state[n + m_tot:] *= rho / new_rho
                rho = new_rho
                cf = factor(rho)

    x = state[:n]
    y = split(state[n:n + m_tot])
    u = split(state[n + m_tot:])
    Z = x.reshape(X, X).copy()
    res = AdmmResult(Z, nuclear_norm(W1 @ Z @ W2), it, poly.violation(Z), converged,
                     AdmmState(x, y, u, rho))
    if not converged and raise_on_stall:
        raise SolverStalled(
            f"ADMM stopped after {it} iterations with violation {res.violation:.3g}", res)
    return res
