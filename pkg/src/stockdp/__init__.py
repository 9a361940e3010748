"""Periodic-review inventory control with setup costs: DP solver, policy structure, simulation."""

from .errors import (ConstraintError, DivergenceError, DomainError, ExtractionError, GridError,
                     InvalidSpecError, OracleDisagreementError, StockDPError, StructureUnsupportedError)
from .model import (ConstraintRegime, DemandDistribution, HoldingCost, ModelSpec, Shortfall, check,
                    expected_holding, feasible_actions, one_step_cost, transition, validate)
from .solver import (FiniteHorizonSolution, GFunction, Grid, InfiniteHorizonSolution, PolicyTable, ValueFunction,
                     bellman_backup, bellman_residual, detect_divergence, evaluate_policy_dp, g_from_value,
                     solve_finite_horizon, solve_infinite_horizon, solve_no_setup, solve_no_setup_finite)
from .structure import (StructuredPolicy, StructureReport, alpha_star, build_structured_policy, classify_regime,
                        extract_sS, k_convexity_check, n_alpha_formula, n_alpha_oracle, order_envelope,
                        sandwich_check)
from .simulate import SimConfig, SimResult, compare_policies, evaluate_policy_mc, simulate_path

__version__ = "0.1.0"
