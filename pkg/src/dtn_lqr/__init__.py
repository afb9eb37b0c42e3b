"""Optimal timer-control policies for two-hop relay routing.

Library layout:

    model        mean-field dynamics, cost weights, constraint checks
    feasibility  R-matrix positive-definiteness analysis and frontier
    ct_lqr       continuous-time finite-horizon LQ solver (Riccati + offset)
    inf_lqr      infinite-horizon scalar policies
    dt_lqr       discrete-time finite/infinite-horizon counterparts
    mc_sim       Monte-Carlo contact simulator and Jensen comparison
    scenario     JSON scenario files, bundled library, unit handling
    cli          dtn-lqr command-line interface
    plots        PNG rendering for the report paths
"""

from .model import (AugmentedState, ControlledTrajectory, CostWeights,
                    InfeasibleControlError, ModelSpec, Violation,
                    build_dynamics, check_constraints, delivery_lower_bound,
                    drift, evaluate_cost, timer_rates_from_control,
                    uncontrolled_mean)
from .feasibility import (FeasibilityReport, analyze, build_R,
                          frontier_sweep, is_positive_definite,
                          is_positive_semidefinite, min_c4_ratio,
                          min_c4_ratio_vectors, r_matrix,
                          sufficient_c4_bound, sufficient_c4_bound_vectors)
from .ct_lqr import (AugmentedSystem, BlowUpError, CtSolution,
                     SingularClosedFormError, build_system, closed_form_P,
                     closed_form_P_hamiltonian, feedback, min_j_identity,
                     rollout, rollout_open_loop, solve_ct,
                     solve_k_backward, solve_riccati_backward)
from .inf_lqr import (BoundsVerdict, ScalarPolicy, bounds_check,
                      closed_loop_rollout, control_law, linear_form_alpha,
                      make_policy, scalar_gain, scalar_offset, steady_state)
from .dt_lqr import (DiscretePolicy, DiscreteSystem, DtScalarPolicy,
                     SmallDeltaLimits, dt_rollout, dt_scalar_policy,
                     exact_discretize, finite_horizon_policy,
                     first_order_discretize, scalar_dare,
                     small_delta_limits)
from .mc_sim import (JensenReport, SamplePath, SimConfig, SimEnsemble,
                     jensen_report, monte_carlo, simulate_once)
from .scenario import (Scenario, ScenarioError, bundled_scenario_names,
                       load_scenario, parse_scenario, scaled_problem,
                       trajectory_to_si)

__version__ = "0.1.0"
