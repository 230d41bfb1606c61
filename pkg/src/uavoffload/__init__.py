"""Joint bit-allocation and trajectory planning for a UAV-mounted cloudlet."""

from .energy import (EnergyLedger, FrameBitAlloc, InterferenceInfeasible, Trajectory,
                     ZeroSpeed)
from .scenario import (Access, DeadlineInfeasible, FlightModel, Model2PhysicalParams,
                       ParseError, Scenario, ValidationError, derive_kappas,
                       load_scenario, save_scenario, validate_deadline)
from .sca import (ConvergenceTrace, InfeasibleStart, PlanResult, ScaConfig,
                  SolverFailure, initial_point, run, stationarity_gap)
from .subproblem import (AnchorInfeasible, ConvexSubproblem, KktSolution, Pins,
                         build, build_noma_m1, build_noma_m2, build_oma_m1,
                         build_oma_m2)
from .surrogate import Anchor, PlanVariables, ProxWeights

__all__ = [
    "Access", "Anchor", "AnchorInfeasible", "ConvergenceTrace", "ConvexSubproblem",
    "DeadlineInfeasible", "EnergyLedger", "FlightModel", "FrameBitAlloc",
    "InfeasibleStart", "InterferenceInfeasible", "KktSolution",
    "Model2PhysicalParams", "ParseError", "Pins", "PlanResult", "PlanVariables",
    "ProxWeights", "ScaConfig", "Scenario", "SolverFailure", "Trajectory",
    "ValidationError", "ZeroSpeed", "build", "build_noma_m1", "build_noma_m2",
    "build_oma_m1", "build_oma_m2", "derive_kappas", "initial_point",
    "load_scenario", "run", "save_scenario", "stationarity_gap",
]

__version__ = "0.1.0"
