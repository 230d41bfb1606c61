"""Reference schemes the joint optimization is compared against.

Four baselines: local execution on the handsets (no offloading at all),
the non-optimized equal-split plan on the straight-line path, and the two
partial optimizations that free only the bit allocation or only the
trajectory.  Partial schemes reuse the full solver with the complementary
variable group pinned by extra equalities, so there is exactly one solver
code path to trust.
"""

from __future__ import annotations

import numpy as np

from . import energy as en
from . import sca
from .scenario import FlightModel, Scenario
from .subproblem import Pins


def mobile_execution(s: Scenario) -> sca.PlanResult:
    """No offloading: every user computes locally at the minimal CPU clock.

    The ledger's mobile side is the local-execution energy; the UAV side is
    the flying cost of the reference straight-line path, reported for
    context only.
    """
    total, _, _ = en.mobile_execution_energy(s)
    bits = sca.equal_split_bits(s)
    bits.uplink[:] = 0.0
    bits.compute[:] = 0.0
    bits.downlink[:] = 0.0
    traj = sca.straight_line_trajectory(s)
    fly = en.fly_energy_per_frame(s, traj)
    k, n = s.n_users, s.grid.frames
    ledger = en.EnergyLedger(
        mobile_total=total,
        uav_total=float(fly.sum()),
        budget_slack=s.uav.energy_budget - float(fly.sum()),
        uplink_per_frame=np.zeros((k, n)),
        downlink_per_frame=np.zeros((k, n)),
        compute_per_frame=np.zeros((k, n)),
        fly_per_frame=fly,
    )
    tau = None
    if s.flight is FlightModel.MODEL2:
        tau = np.linalg.norm(traj.velocities[:n], axis=1)
    plan = sca.PlanVariables(bits, traj, tau_v=tau)
    trace = sca.ConvergenceTrace(initial_objective=total, objective=[total],
                                 uav_energy=[ledger.uav_total], step_gap=[0.0],
                                 gamma=[0.0], sub_primal=[0.0], sub_dual=[0.0],
                                 sub_comp_gap=[0.0])
    rep = en.FeasibilityReport()
    return sca.PlanResult(plan=plan, ledger=ledger, trace=trace, termination="stationary",
                          iterations=0, feasibility=rep, scheme="mobile")


def no_optimization(s: Scenario) -> sca.PlanResult:
    """Equal bits in every window frame on the constant-velocity path.

    Pure evaluation: feasibility is checked and reported, never enforced.
    """
    anchor = sca.initial_point(s)
    ledger = en.uav_energy_total(s, anchor.plan.bits, anchor.plan.traj)
    rep = en.check_plan(s, anchor.plan.bits, anchor.plan.traj, anchor.plan.tau_v)
    obj = ledger.mobile_total
    trace = sca.ConvergenceTrace(initial_objective=obj, objective=[obj],
                                 uav_energy=[ledger.uav_total], step_gap=[0.0],
                                 gamma=[0.0], sub_primal=[0.0], sub_dual=[0.0],
                                 sub_comp_gap=[0.0])
    return sca.PlanResult(plan=anchor.plan, ledger=ledger, trace=trace,
                          termination="stationary", iterations=0, feasibility=rep,
                          scheme="noopt")


def bit_only(s: Scenario, cfg: sca.ScaConfig | None = None) -> sca.PlanResult:
    """Optimize the bit allocation on the frozen straight-line trajectory."""
    anchor = sca.initial_point(s)
    pins = Pins(trajectory=anchor.plan.traj.copy(),
                tau_v=None if anchor.plan.tau_v is None else anchor.plan.tau_v.copy())
    res = sca.run(s, cfg, start=anchor, pins=pins, scheme="bit")
    return res


def trajectory_only(s: Scenario, cfg: sca.ScaConfig | None = None) -> sca.PlanResult:
    """Optimize the trajectory with the equal-split bit allocation frozen."""
    anchor = sca.initial_point(s)
    pins = Pins(bits=anchor.plan.bits.copy())
    res = sca.run(s, cfg, start=anchor, pins=pins, scheme="traj")
    return res


def joint(s: Scenario, cfg: sca.ScaConfig | None = None) -> sca.PlanResult:
    """Full joint optimization (convenience wrapper matching the scheme names)."""
    return sca.run(s, cfg, scheme="joint")


SCHEMES = {
    "joint": joint,
    "bit": bit_only,
    "traj": trajectory_only,
    "noopt": lambda s, cfg=None: no_optimization(s),
    "mobile": lambda s, cfg=None: mobile_execution(s),
}
