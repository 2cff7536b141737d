"""Distributed dual-price voltage control on radial distribution feeders."""

from .agent import (Agent, AgentState, CostParams, InfeasibleLocalSet, Limits, Message,
                    dual_update, local_control, local_control_general, make_alpha, make_beta,
                    update_z)
from .network import (BadImpedance, BadRoot, CycleDetected, DisconnectedBus, DuplicateLine, Line,
                      NetworkError, RadialNetwork, SensitivityMatrices, UnknownBus,
                      build_sensitivity, diameter, dist, mrca, random_tree, read_network,
                      validate, write_network)
from .oracle import (Constants, DualPoint, OracleSolution, centralized_solve, compute_constants,
                     dual_grad, dual_value, kkt_residual, primal_from_dual, verify_descent)
from .powerflow import (BranchFlowState, DimensionMismatch, NonPhysicalVoltage, PhysicsDiverged,
                        branch_flow_residuals, linear_voltage, measure, solve_branch_flow)
from .simulation import (ConfigError, DelayModel, LoadProfile, Scenario, Simulator, Trajectory,
                         apply_model_error, run)

from .fileio import load_scenario, read_scenario, write_outputs
from .verification import Report, verify

__version__ = "0.1.0"
