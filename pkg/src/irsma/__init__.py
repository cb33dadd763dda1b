"""Joint IRS-site selection, movable-antenna placement and phase planning.

Plans passive-reflector sites and repositionable transmit antennas so that
every sample of every target area meets its SNR requirement at minimum
hardware cost, with a feasibility check, a cost-minimization stage, an
element-pruning refinement, comparison schemes and a budget-constrained
worst-case-SNR variant.
"""

from .baselines import (SchemeResult, all_irs, budget_snr_max, fpa_irs,
                        joint_ma_irs, min_feasible_budget, per_area_union,
                        pruned_joint)
from .channel import (ChannelSet, NoLinkError, build_channels, bs_irs_channel,
                      irs_user_channel, mrt, reference_snr, snr, unit_direction)
from .config import SolverConfig
from .costmin import Plan, PlanInfeasibleError, run_costmin, write_plan
from .feasibility import FeasibilityReport, run_feasibility, write_trace
from .pruning import run_pruning
from .scenario import (AuditError, ConflictSet, CostModel, DeploymentSolution,
                       GeometryError, IrsSite, MaGrid, RadioConstants,
                       Scenario, TargetArea, build_ma_grid, conflict_set,
                       db_to_linear, default_scenario, linear_to_db,
                       max_deployable, total_cost)

__version__ = "0.1.0"

__all__ = [
    "AuditError", "ChannelSet", "ConflictSet", "CostModel",
    "DeploymentSolution", "FeasibilityReport", "GeometryError", "IrsSite",
    "MaGrid", "NoLinkError", "Plan", "PlanInfeasibleError", "RadioConstants",
    "Scenario", "SchemeResult", "SolverConfig", "TargetArea", "all_irs",
    "budget_snr_max", "build_channels", "build_ma_grid", "bs_irs_channel",
    "conflict_set", "db_to_linear", "default_scenario", "fpa_irs",
    "irs_user_channel", "joint_ma_irs", "linear_to_db", "max_deployable",
    "min_feasible_budget", "mrt", "per_area_union", "pruned_joint",
    "reference_snr", "run_costmin", "run_feasibility", "run_pruning", "snr",
    "total_cost", "unit_direction", "write_plan", "write_trace",
]
