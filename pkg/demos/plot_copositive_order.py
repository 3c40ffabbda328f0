"""
Certifying the copositive order between transition matrices
===========================================================

Q lies below P in the copositive order when every matrix M^(m)(Q, P) is
copositive on the belief simplex. The checker bisects the simplex until each
cell's vertices certify the quadratic form, or it finds a witness belief with
a negative value.
"""

import numpy as np

from sdbounds import build_M, copositive_order, copositivity_verdict, filter_update, mlr_geq
from sdbounds import DiscreteObservation, HmmModel, TransitionMatrix

# Copositivity on small examples.
for name, M in [("nonnegative", np.array([[1.0, 0.5], [0.5, 2.0]])),
                ("indefinite, still copositive", np.array([[1.0, -0.5], [-0.5, 1.0]])),
                ("not copositive", np.array([[1.0, -2.0], [-2.0, 1.0]]))]:
    v = copositivity_verdict(M)
    extra = f" witness {np.round(v.witness, 3)} value {v.witness_value:.3f}" if v.witness is not None else ""
    print(f"{name:30s} {v.status:10s} depth {v.depth}{extra}")

# A TP2 matrix and a mixture with its first row.
P = np.array([[0.6, 0.3, 0.1],
              [0.3, 0.4, 0.3],
              [0.1, 0.3, 0.6]])
Q = 0.7 * P + 0.3 * np.tile(P[0], (3, 1))
print("\nM^(0)(Q, P) =\n", np.round(build_M(Q, P, 0), 4))
print("Q below P:", copositive_order(Q, P).status)
print("P below Q:", copositive_order(P, Q).status)

# A certified pair orders one-step filter updates for any belief and observation.
B = np.array([[0.7, 0.3], [0.5, 0.5], [0.2, 0.8]])
obs = DiscreteObservation(B)
mP, mQ = HmmModel(TransitionMatrix(P), obs), HmmModel(TransitionMatrix(Q), obs)
rng = np.random.default_rng(0)
ok = all(mlr_geq(filter_update(pi, y, mP), filter_update(pi, y, mQ), 1e-12)
         for pi in rng.dirichlet(np.ones(3), 500) for y in (0, 1))
print("updates ordered on 1000 random (belief, observation) pairs:", ok)
