"""
Sandwiching an HMM filter between rank-one bound filters
========================================================

A TP2 transition matrix is bounded below and above by the rank-one matrices
built from its first and last rows. Running the filter with those matrices
gives beliefs that MLR-bracket the exact posterior at every step, so the
conditional mean and the MAP state are bracketed too.
"""

import numpy as np

from sdbounds import (DiscreteObservation, HmmModel, TransitionMatrix, conditional_mean,
                      filter_update, map_estimate, mlr_geq, rank1_bounds, simulate)
from sdbounds.kron import benchmark_factor

# A 5-state birth-death chain observed through a noisy tridiagonal channel.
P = benchmark_factor(2.0)
B = np.array([[0.8, 0.2, 0.0, 0.0, 0.0],
              [0.1, 0.8, 0.1, 0.0, 0.0],
              [0.0, 0.1, 0.8, 0.1, 0.0],
              [0.0, 0.0, 0.1, 0.8, 0.1],
              [0.0, 0.0, 0.0, 0.2, 0.8]])
model = HmmModel(P, DiscreteObservation(B))

# The bound pair carries copositivity certificates for both orderings.
bp = rank1_bounds(P.entries)
print("lower certificate:", bp.certificates["lower"].status)
print("upper certificate:", bp.certificates["upper"].status)
print("row l1 radius:", round(bp.epsilon, 4))

states, ys = simulate(model, 25, seed=11)
lo = ex = hi = np.full(5, 0.2)
print(f"{'k':>3} {'x':>2} {'lower':>7} {'exact':>7} {'upper':>7}  MAP")
for k, (x, y) in enumerate(zip(states, ys)):
    lo = filter_update(lo, y, model, P=bp.lower)
    ex = filter_update(ex, y, model)
    hi = filter_update(hi, y, model, P=bp.upper)
    assert mlr_geq(ex, lo, 1e-10) and mlr_geq(hi, ex, 1e-10)
    means = [conditional_mean(v, model.g) for v in (lo, ex, hi)]
    maps = [map_estimate(v) + 1 for v in (lo, ex, hi)]
    print(f"{k:>3} {x + 1:>2} {means[0]:7.3f} {means[1]:7.3f} {means[2]:7.3f}  {maps}")

# The bound filters only need one row each: predicting with a rank-one
# matrix ignores the previous belief entirely.
