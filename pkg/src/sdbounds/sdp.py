"""Interior-point polish for the weighted nuclear-norm program.

The ADMM iterations reach moderate accuracy quickly but converge slowly in
the tail. Certification needs constraint residuals near 1e-9, so the last
weighted problem is re-solved once as a semidefinite program with Clarabel:

    minimize    (tr S1 + tr S2) / 2
    subject to  [[S1, Y], [Y', S2]] >= 0,   Y = T W2,   T = W1 Z
                plus the polytope constraints on Z.

Splitting ``W1 Z W2`` through ``T`` keeps the constraint matrix sparse.
"""

import clarabel
import numpy as np
import scipy.sparse as sp

from .errors import SolverStalled


def _svec_index(N):
    """Position of upper-triangle entry (i, j), i <= j, in column-major svec order."""
    idx = np.empty((N, N), dtype=np.int64)
    k = 0
    for j in range(N):
        for i in range(j + 1):
            idx[i, j] = idx[j, i] = k
            k += 1
    return idx, k


class _Builder:
    def __init__(self):
        self.rows, self.cols, self.vals, self.b = [], [], [], []
        self.r = 0

    def add_rows(self, count, b):
        start = self.r
        self.r += count
        self.b.append(np.broadcast_to(np.asarray(b, dtype=float), (count,)))
        return start

    def coef(self, rows, cols, vals):
        rows, cols, vals = np.broadcast_arrays(np.asarray(rows), np.asarray(cols),
                                               np.asarray(vals, dtype=float))
        self.rows.append(rows.ravel())
        self.cols.append(cols.ravel())
        self.vals.append(vals.ravel())


def polish_solve(W1, W2, poly, tol=1e-9, max_iter=200, verbose=False):
    """Solve the weighted program on ``poly`` to interior-point accuracy.

    Returns
    -------
    Z : (X, X) ndarray
    objective : float
    """
    X = poly.X
    n = X * X
    P = poly.P
    A = sp.csr_matrix((0, n)) if poly.A is None else sp.csr_matrix(poly.A)
    tri = [(i, j) for j in range(X) for i in range(j + 1)]
    ntri = len(tri)
    iz, it, iT = 0, n, 2 * n
    is1, is2 = 3 * n, 3 * n + ntri
    nv = 3 * n + 2 * ntri

    q = np.zeros(nv)
    diag_k = np.array([k for k, (i, j) in enumerate(tri) if i == j])
    q[is1 + diag_k] = 0.5
    q[is2 + diag_k] = 0.5

    bld = _Builder()
    ar = np.arange(X)
    # Zero cone: row sums and T = W1 Z.
    r0 = bld.add_rows(X, 1.0)
    bld.coef(r0 + np.repeat(ar, X), iz + np.arange(n), 1.0)
    r0 = bld.add_rows(n, 0.0)
    ii, jj, kk = np.meshgrid(ar, ar, ar, indexing="ij")
    bld.coef(r0 + ii * X + jj, iT + ii * X + jj, np.where(kk == 0, 1.0, 0.0))
    bld.coef(r0 + ii * X + jj, iz + kk * X + jj, -W1[ii, kk])
    n_zero = X + n

    # Nonnegative cone (s = b - A x >= 0).
    r0 = bld.add_rows(n, 0.0)  # z >= 0
    bld.coef(r0 + np.arange(n), iz + np.arange(n), -1.0)
    p = P.reshape(-1)
    r0 = bld.add_rows(n, p)  # t - z + p >= 0
    bld.coef(r0 + np.arange(n), iz + np.arange(n), 1.0)
    bld.coef(r0 + np.arange(n), it + np.arange(n), -1.0)
    r0 = bld.add_rows(n, -p)  # t + z - p >= 0
    bld.coef(r0 + np.arange(n), iz + np.arange(n), -1.0)
    bld.coef(r0 + np.arange(n), it + np.arange(n), -1.0)
    r0 = bld.add_rows(X, poly.eps)  # eps - sum_j t_ij >= 0
    bld.coef(r0 + np.repeat(ar, X), it + np.arange(n), 1.0)
    if A.shape[0]:
        Ac = A.tocoo()
        r0 = bld.add_rows(A.shape[0], 0.0)
        bld.coef(r0 + Ac.row, iz + Ac.col, -Ac.data)
    n_nonneg = bld.r - n_zero

    # PSD cone on [[S1, T W2], [(T W2)', S2]] in scaled svec form.
    svec, npsd = _svec_index(2 * X)
    r0 = bld.add_rows(npsd, 0.0)
    rt2 = np.sqrt(2.0)
    ti = np.array([i for i, _ in tri])
    tj = np.array([j for _, j in tri])
    scale = np.where(ti == tj, 1.0, rt2)
    bld.coef(r0 + svec[ti, tj], is1 + np.arange(ntri), -scale)
    bld.coef(r0 + svec[X + ti, X + tj], is2 + np.arange(ntri), -scale)
    # Y[i, j] = sum_k T[i, k] W2[k, j] sits at (i, X + j).
    bld.coef(r0 + svec[ii, X + jj], iT + ii * X + kk, -rt2 * W2[kk, jj])

    Am = sp.csc_matrix((np.concatenate(bld.vals), (np.concatenate(bld.rows),
                        np.concatenate(bld.cols))), shape=(bld.r, nv))
    Am.sum_duplicates()
    Am.eliminate_zeros()
    b = np.concatenate(bld.b)
    cones = [clarabel.ZeroConeT(n_zero), clarabel.NonnegativeConeT(n_nonneg),
             clarabel.PSDTriangleConeT(2 * X)]
    st = clarabel.DefaultSettings()
    st.verbose = verbose
    st.max_iter = max_iter
    st.tol_feas = tol
    st.tol_gap_abs = tol
    st.tol_gap_rel = tol
    solver = clarabel.DefaultSolver(sp.csc_matrix((nv, nv)), q, Am, b, cones, st)
    sol = solver.solve()
    status = str(sol.status)
    Z = np.array(sol.x[:n]).reshape(X, X)
    if "Solved" not in status:
        raise SolverStalled(f"interior-point polish ended with status {status}", Z)
    return Z, float(sol.obj_val)
