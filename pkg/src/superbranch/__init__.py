"""Subcritical measure-valued branching processes with immigration on finite
lattices: cumulant flows, exact Laplace transforms, moment semigroups and
decay certificates, Monte Carlo simulation, and ergodic convergence metrics."""

__version__ = "0.1.0"

from .errors import (ConfigError, ModelError, NotSubcriticalError, RefusalError,
                     SolverError, SuperbranchError, ValidationError)
from .model import (BranchingMechanism, ImmigrationMechanism, JumpChannel,
                    JumpSizeLaw, LatticeModel, MotionGenerator, ValidationReport,
                    h_transform, load_config, model_from_dict, model_to_dict,
                    preset_cbi, preset_kp18, preset_random_walk, validate_model)
from .mechanisms import (MomentOperator, assemble_moment_operator,
                         effective_immigration_mean, eval_phi, eval_phi_all, eval_psi)
from .cumulant import (CumulantSolution, invariant_laplace, invariant_psi_integral,
                       semigroup_defect, solve_cumulant, transition_laplace)
from .moments import (DecayCertificate, Refusal, apply_R, check_subcritical,
                      envelope_violation, integrate_R, invariant_mean,
                      require_certificate, transition_mean, weighted_operator_norm)
from .simulate import (PathEnsemble, SimConfig, empirical_laplace, empirical_mean,
                       read_ensemble, sample_invariant, simulate_paths, write_ensemble)
from .ergodicity import (ErgodicityReport, TestDictionary, compute_ergodicity_report,
                         empirical_w1, fit_decay_rate, laplace_distance_profile,
                         make_dictionary, mean_gap, theorem41_bound, theorem42_bound)
