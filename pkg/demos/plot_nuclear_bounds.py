"""
Low-rank lower bounds from a reweighted nuclear-norm program
============================================================

Relaxing the distance to P lets the solver find lower bounds of smaller
rank. At radius zero the only feasible bound is P itself; at a large radius
a single repeated row suffices.

The 5-state chain keeps this demo under a minute. The 25-state Kronecker
chain follows the same path (see ``sdbounds experiment --experiment ranks``).
"""

import numpy as np

from sdbounds import SolverConfig, nuclear_norm_bound
from sdbounds.kron import benchmark_factor

P = benchmark_factor(2.0).entries
cfg = SolverConfig(max_inner_iters=1500)
print(f"{'eps':>5} {'rank':>4} {'max row l1':>10}  certificate  leading singular values")
for eps in (0.0, 0.2, 0.4, 0.8, 2.0):
    res = nuclear_norm_bound(P, "lower", cfg, epsilon=eps)
    Z = res.matrix.entries
    dist = np.abs(Z - P).sum(axis=1).max()
    status = res.certificate.status if res.certificate is not None else "-"
    print(f"{eps:5.1f} {res.rank:4d} {dist:10.4f}  {status:11s}  "
          f"{np.round(res.singular_values[:3], 4)}")
