"""Low-rank stochastic-dominance bounds for HMM filters.

The main entry points are re-exported here; see the submodules for the
full API.
"""

__version__ = "0.1.0"

from .analysis import (bayes_contraction_check, bound_trace, dobrushin, one_step_bound_rhs,
                       samplepath_bound_step, variational_distance)
from .construct import (BoundPair, SolverConfig, lp_bounds, mlr_envelope_bounds,
                        nuclear_bound_pair, nuclear_norm_bound, postprocess, rank1_bounds)
from .copositive import build_M, copositive_order, copositivity_verdict
from .errors import *  # noqa: F401,F403
from .hmm import (DiscreteObservation, GaussianObservation, HmmModel, TransitionMatrix,
                  bayes_update, conditional_mean, filter_update, map_estimate, predict,
                  run_filter, simulate)
from .kron import (JointIndexCodec, KronTransition, joint_index_codec, kron_transition,
                   benchmark_chain, sum_gaussian_obs, tp2_generator)
from .orders import fosd_geq, is_tp2, mlr_geq, tp2_geq_multivariate
from .sampler import (ConstrainedEstimate, DominanceFilter, SamplerConfig, constrained_is_step,
                      importance_distribution, lowrank_is_step)
