"""
Cardinal error bounds for a reduced-complexity filter
=====================================================

When the filter runs with a matrix P_lo close to P in row l1 distance eps,
a recursion driven by the observations bounds the l1 distance between the
exact and reduced posteriors. This demo tracks both on a 27-state Kronecker
chain with a discrete tridiagonal observation channel.
"""

import numpy as np

from sdbounds import (HmmModel, TransitionMatrix, bound_trace, copositive_order, dobrushin,
                      mlr_envelope_bounds, simulate)
from sdbounds.analysis import row_l1_epsilon
from sdbounds.experiments import tridiagonal_obs
from sdbounds.kron import kron_transition, tp2_generator

# A 3-state birth-death generator, three independent copies.
Q = np.array([[-0.8147, 0.8147, 0.0],
              [0.4529, -0.5164, 0.0635],
              [0.0, 0.4567, -0.4567]])
A = tp2_generator(Q, 2.0)
P = kron_transition([A] * 3)
env = mlr_envelope_bounds(P.entries, certify_bounds=False).lower.entries
P_lo = TransitionMatrix(0.995 * P.entries + 0.005 * env)
obs = tridiagonal_obs(27, 0.8)

eps = row_l1_epsilon(P, P_lo)
print("P_lo below P:", copositive_order(P_lo.entries, P.entries).status)
print(f"eps = {eps:.4f}, Dobrushin coefficient of P_lo = {dobrushin(P_lo):.3f}")

_, ys = simulate(HmmModel(P, obs), 400, seed=4)
tr = bound_trace(ys, P_lo, obs, eps, np.full(27, 1 / 27), P=P, mode="oracle")
rows = tr.as_array()
finite = np.isfinite(tr.bound)
print("violations:", tr.violations, f" finite bound on {finite.mean():.1%} of steps")
print(f"{'k':>4} {'distance':>9} {'bound':>9} {'F':>7} {'mu':>5}")
for r in rows[::40]:
    print(f"{int(r[0]):4d} {r[1]:9.2e} {r[2]:9.2e} {r[3]:7.3f} {r[4]:5.2f}")
