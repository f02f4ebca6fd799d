"""Multi-marginal optimal transport for hedonic matching markets.

Surpluses of the form b(x_1, ..., x_m) = sup_z sum_i f_i(x_i, z), exact and
entropic multi-marginal solvers, the contract-side matching formulation and
the tools to move between them.
"""

__version__ = "0.1.0"

from .errors import (ConvergenceError, HedonicOTError, MeasureFormatError, NewtonFailure, NonUniqueMaximizer,
                     SingularHessian, SolverError, ToolkitDefect, ValidationError, VariableCapExceeded)
from .settings import NewtonSettings, SolverSettings
from .preferences import Brenier, ConcaveSum, HeinichHead, Linear, Quadratic, preference_from_dict
from .measures import (DiscreteMeasure, InstanceSpec, Problem, generate_instance, load_measure, merge_atoms,
                       pushforward, save_measure)
from .surplus import (BilinearSurplus, ConditionReport, SampleSpec, SurplusOracle, B_matrix, check_conditions,
                      condition_III_matrix, cross_hessians, envelope_derivatives, eval_b, grad_b, hess_b_cross,
                      jac_zbar, lemma_core_matrix, solve_zbar, symmetry_product)
from .mmot import (Coupling, graph_check, marginal, objective, solve_mk_entropic, solve_mk_exact,
                   spacelike_diagnostic, swap_monotonicity_check)
from .matching import (EquivalenceReport, FixedPointResult, MapNotInvertible, MongeMap, TransportPlan, ce_purity,
                       compose_G, contract_measure, coupling_from_maps, extract_monge_maps, glue_plans,
                       graph_coupling, mam_objective, solve_mam_fixed_point, solve_mam_via_mk, solve_ot2,
                       verify_equivalence)
from .repro import (ReproReport, repro_condition_III_failure, repro_heinich, repro_quadratic_identity,
                    repro_symmetry_obstruction, run_all)
