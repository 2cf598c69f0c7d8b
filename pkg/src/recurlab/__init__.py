"""Discounted stochastic optimal control with near-optimal set-valued
policies, strictly causal rollouts and Monte Carlo recurrence certificates."""

from .certification import (AssumptionBundle, CertificateEstimate, Monomial, RecurrenceSetParams,
                            auto_bundle, check_dissipation, check_sandwich, clopper_pearson,
                            estimate_boundedness, estimate_recurrence, reachable_delta,
                            recurrence_set_contains, theoretical_gamma_star, theoretical_horizon)
from .config import ExperimentConfig, load_config, parse_config
from .errors import (ConfigError, ContractError, DetectabilityError, DimensionError,
                     EmptyFeasibleSet, GridExitError, NumericalError, RecurlabError)
from .experiments import ResultTable, emit_outputs, run_experiment
from .policy import EtaBound, PolicyOracle, check_level_boundedness, lqr_policy, membership, select
from .riccati_lqr import (lqr_oracle, lqr_value, optimal_gain, solve_discounted_riccati,
                          synthesize_detectability, verify_detectability)
from .simulator import (CausalityAudit, PerturbationSpec, TrajectoryRecord, discounted_cost,
                        first_hit_time, rollout, rollout_perturbed)
from .system_model import NoiseSpec, SigmaMetric, SystemSpec, linear_system, sigma, stage_cost, step
from .value_iteration import (GridValueFunction, StateGrid, bellman_backup, bellman_residual,
                              make_quadrature, value_iterate)

__version__ = "0.1.0"
