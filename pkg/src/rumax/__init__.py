"""Robust expected utility maximization on finite scenario lattices.

Primal sup-inf solves with optimal strategies, dual minimization over scaled
martingale measures with divergence penalties, certified duality gaps, and
the surrounding machinery: exact discrete optimal transport, four ambiguity
set variants, arbitrage detection and repair.
"""

from .ambiguity import (FiniteHull, MomentConstraint, MomentSet,
                        WassersteinBall, WassersteinPenalty, alpha, contains,
                        convex_inner_min, inner_min)
from .arbitrage import admits_arbitrage, check_na, find_emm, perturb_na
from .lattice import (Claim, Measure, ScenarioLattice, Strategy,
                      build_lattice, expectation, wealth, z_weight)
from .problem_io import (InstanceShape, generate_instance, parse_problem,
                         write_instance)
from .solver import (DualCertificate, Problem, biconjugate_check,
                     certificate_value, duality_gap, entropic_value,
                     solve_dual, solve_primal)
from .transport import MetricParams, phi, path_distance, wasserstein_p
from .utility import (Conjugate, ExponentialUtility, TabulatedUtility,
                      check_conditions, conjugate_v, divergence_Dv, eval_u,
                      robust_divergence)

__version__ = "0.1.0"

__all__ = [
    "Claim", "Conjugate", "DualCertificate", "ExponentialUtility",
    "FiniteHull", "InstanceShape", "Measure", "MetricParams",
    "MomentConstraint", "MomentSet", "Problem", "ScenarioLattice", "Strategy",
    "TabulatedUtility", "WassersteinBall", "WassersteinPenalty",
    "admits_arbitrage", "alpha", "biconjugate_check", "build_lattice",
    "certificate_value", "check_conditions", "check_na", "conjugate_v",
    "contains", "convex_inner_min", "divergence_Dv", "duality_gap",
    "entropic_value", "eval_u", "expectation", "find_emm",
    "generate_instance", "inner_min", "parse_problem", "path_distance",
    "perturb_na", "phi", "robust_divergence", "solve_dual", "solve_primal",
    "wasserstein_p", "wealth", "write_instance", "z_weight",
]
