"""Model predictive adaptive cruise control: QP solver, controller, plants, simulator."""
from .errors import (ConfigError, DimensionMismatch, NotPositiveDefinite, ParseError,
                     StateOutOfRange, ValidationError)
from .matqp import QpProblem, QpSolution, hildreth_qp, kkt_residual, solve_spd
from .mpc import (MpcConfig, MpcController, PredictionMatrices, StateSpace,
                  acc_state_space, build_cost, build_input_constraints, build_prediction,
                  build_state_constraints, mpc_step, optimal_delta_u_unconstrained)
from .plant import (LagState, PowertrainState, VehicleParams, gear_schedule, lag_plant_step,
                    llc_command, nonlinear_plant_step)
from .sim import (ErrorState, ScenarioConfig, TrajectoryLog, build_error_state, compute_sivd,
                  preceding_profile, run_closed_loop)

__version__ = "0.1.0"

__all__ = [
    "QpProblem", "QpSolution", "hildreth_qp", "kkt_residual", "solve_spd",
    "ConfigError",
    "DimensionMismatch",
    "NotPositiveDefinite",
    "ParseError",
    "StateOutOfRange",
    "ValidationError",
    "MpcConfig",
    "MpcController",
    "PredictionMatrices",
    "StateSpace",
    "acc_state_space",
    "build_cost",
    "build_input_constraints",
    "build_prediction",
    "build_state_constraints",
    "mpc_step",
    "optimal_delta_u_unconstrained",
    "LagState",
    "PowertrainState",
    "VehicleParams",
    "gear_schedule",
    "lag_plant_step",
    "llc_command",
    "nonlinear_plant_step",
    "ErrorState",
    "ScenarioConfig",
    "TrajectoryLog",
    "build_error_state",
    "compute_sivd",
    "preceding_profile",
    "run_closed_loop",
]
