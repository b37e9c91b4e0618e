"""Projected and composite gradient methods for regularized M-estimators.

The package provides decomposable regularizers and their projections,
least-squares, logistic and decomposition losses, the two first-order
solvers, closed-form contraction constants with empirical RSC/RSM probes,
seeded random instance generators, and a command-line experiment harness.
"""

from .exceptions import ConfigurationError, NonConvergenceError, NumericError
from .regularizers import (RegularizerSpec, SubspacePair, dual_value, project_subspace,
                           reg_value, subspace_compat)
from .projections import (Col2Box, Intersection, L2Ball, LinfBox, RegBall, composite_prox,
                          project_box, project_group_l1, project_intersection, project_l1,
                          project_nuclear, soft_threshold)
from .losses import (DecompositionLoss, LogisticLoss, QuadraticLoss, dual_score, loss_gradient,
                     loss_value, taylor_error)
from .solvers import (IterateTrace, SolverConfig, auto_stepsize, composite_step, pgd_step,
                      reference_optimum, solve)
from .theory import (RscRsmParams, TheoryReport, cone_check, contraction_thm1, contraction_thm2,
                     corollary_constants, fit_geometric_rate, rsc_rsm_probe, tolerance_thm1)
from .ensembles import EnsembleSpec, gen_design_ar1, gen_instance, gen_truth_sparse

__version__ = "0.1.0"
