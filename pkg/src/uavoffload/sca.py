"""Outer successive-convex-approximation loop.

Starting from a feasible plan, each iteration solves the strongly convex
inner program anchored at the current iterate and damps toward its solution,

    z(v+1) = z(v) + gamma(v) (z_hat - z(v)),   gamma(v) = gamma0 / (1 + mu v).

Because the inner program's feasible set is a convex inner approximation of
the original one and is tight at the anchor, every damped iterate remains
feasible for the original problem; the loop stops when the fixed-point gap
|z_hat - z(v)| (inf-norm, scaled variables) falls below the stopping
tolerance.  The trace records the exact-model mobile energy, never the
surrogate value: the objective surrogates are only gradient-consistent, so
their values are not meaningful progress measures.

A monotone safeguard halves the step while the exact objective would
increase; on the bundled scenarios it almost never triggers but it makes
the descent property of the trace unconditional.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import energy as en
from .energy import EnergyLedger, FrameBitAlloc, Trajectory
from .scenario import Access, FlightModel, Scenario, validate_deadline
from .subproblem import (TAU_MIN, ConvexSubproblem, MaxIterations, NumericalBreakdown,
                         Pins, build)
from .surrogate import Anchor, PlanVariables, ProxWeights, plan_lincomb


class InfeasibleStart(Exception):
    """The equal-split starting plan violates a hard constraint.

    budget_gap is the joule shortfall against the UAV budget when that is
    the violated constraint, else 0.
    """

    def __init__(self, message: str, budget_gap: float = 0.0):
        super().__init__(message)
        self.budget_gap = budget_gap


class SolverFailure(Exception):
    """An inner solve failed; carries the trace accumulated so far."""

    def __init__(self, message: str, trace: "ConvergenceTrace", cause=None):
        super().__init__(message)
        self.trace = trace
        self.cause = cause


@dataclass(frozen=True)
class ScaConfig:
    """Outer-loop controls; defaults converge on all bundled scenarios."""

    gamma0: float = 1.0  # first step size, in (0, 1]
    # step decay gamma(v) = gamma0 / (1 + mu v); with the monotone safeguard
    # active, undamped steps converge much faster at equal plan quality
    mu: float = 0.0
    eps_stop: float = 1e-4  # fixed-point gap tolerance, scaled variables
    max_outer: int = 200
    # KKT tolerance of the inner solver (scaled); 1e-6 is the reliable floor
    # of the barrier formulation in double precision across all variants
    subproblem_tol: float = 1e-6
    max_newton: int = 400
    prox_base: float = 1e-6  # proximal weight relative to the objective scale
    monotone: bool = True  # halve the step while the exact objective worsens
    max_backtracks: int = 20
    # secondary stationarity proxy: stop once the exact objective has moved by
    # less than eps_obj_rel (relative) over obj_window consecutive steps
    eps_obj_rel: float = 1e-5
    obj_window: int = 5
    t_factor: float = 60.0  # barrier weight growth per stage
    keep_iterates: bool = False  # record a copy of every outer iterate

    def gamma(self, v: int) -> float:
        return self.gamma0 / (1.0 + self.mu * v)

    def __post_init__(self):
        if not 0.0 < self.gamma0 <= 1.0:
            raise ValueError("gamma0 must lie in (0, 1]")
        if self.mu < 0.0:
            raise ValueError("mu must be >= 0")


@dataclass
class ConvergenceTrace:
    """One row per inner solve; objective entries are exact-model evaluations."""

    initial_objective: float = 0.0
    objective: list = field(default_factory=list)  # exact mobile energy after the step
    uav_energy: list = field(default_factory=list)
    step_gap: list = field(default_factory=list)  # |z_hat - z(v)|_inf, scaled
    gamma: list = field(default_factory=list)
    sub_primal: list = field(default_factory=list)
    sub_dual: list = field(default_factory=list)
    sub_comp_gap: list = field(default_factory=list)
    iterates: list = field(default_factory=list)  # plans, only when requested

    def __len__(self):
        return len(self.objective)


@dataclass
class PlanResult:
    plan: PlanVariables
    ledger: EnergyLedger
    trace: ConvergenceTrace
    termination: str  # "stationary" | "max_iters"
    iterations: int  # damped steps actually taken
    feasibility: en.FeasibilityReport
    scheme: str = "joint"

    @property
    def mobile_energy(self) -> float:
        return self.ledger.mobile_total

    @property
    def converged(self) -> bool:
        return self.termination == "stationary"


def equal_split_bits(s: Scenario) -> FrameBitAlloc:
    """Window-uniform bit allocation: I_k/(N-2) per frame, outputs likewise."""
    k, n = s.n_users, s.grid.frames
    i_k = np.array([u.input_bits for u in s.users])
    o_k = np.array([u.output_ratio for u in s.users])
    bits = FrameBitAlloc(np.zeros((k, n)), np.zeros((k, n)), np.zeros((k, n)))
    bits.uplink[:, 0:n - 2] = (i_k / (n - 2))[:, None]
    bits.compute[:, 1:n - 1] = (i_k / (n - 2))[:, None]
    bits.downlink[:, 2:n] = (o_k * i_k / (n - 2))[:, None]
    return bits


def straight_line_trajectory(s: Scenario) -> Trajectory:
    """Constant-velocity reference path; model 2 gets a consistent state history.

    With the boundary speed equal to the straight-line speed (the usual
    configuration) the model-2 state is constant velocity and zero
    acceleration.  Otherwise velocities follow a smooth sin^2 bump between
    the boundary velocity and the interior cruise velocity chosen so the
    displacement still comes out exact; positions integrate the kinematics.
    """
    n = s.grid.frames
    dt = s.grid.dt
    disp = s.uav.end - s.uav.start
    if s.flight is FlightModel.MODEL1:
        frac = np.arange(n + 1)[:, None] / n
        pos = s.uav.start[None, :] * (1 - frac) + s.uav.end[None, :] * frac
        return Trajectory(pos)

    u = disp / s.grid.deadline  # cruise velocity of the straight line
    vb = s.boundary_velocity
    vel = np.empty((n + 1, 2))
    shape = np.sin(np.pi * np.arange(n + 1) / n) ** 2  # 0 at both boundaries
    # sum of shape over frames 1..N is N/2, so the cruise peak w keeps the
    # total displacement exact: sum v_n = N u
    w = 2.0 * u - vb
    vel[:] = vb[None, :] + shape[:, None] * (w - vb)[None, :]
    vel[0] = vel[n] = vb
    acc = np.diff(vel, axis=0) / dt
    pos = np.empty((n + 1, 2))
    pos[0] = s.uav.start
    for i in range(n):
        pos[i + 1] = pos[i] + vel[i] * dt + 0.5 * acc[i] * dt**2
    return Trajectory(pos, vel, acc)


def _interference_slacks(s: Scenario, bits: FrameBitAlloc, traj: Trajectory):
    """Tight alpha/beta: the exact interference fixed points of the start plan."""
    k, n = s.n_users, s.grid.frames
    alpha = np.zeros((k, n))
    beta = np.zeros((k, n))
    gains = en.channel_gain(traj.positions[None, :n, :], s.user_positions[:, None, :],
                            s.uav.altitude, s.radio.ref_gain)
    for col in range(0, n - 2):
        e_up = en.comm_energy_noma(bits.uplink[:, col], gains[:, col], s.radio.bandwidth,
                                   s.grid.dt, s.radio.noise_psd, "up")
        alpha[:, col] = gains[:, col] * e_up
    for col in range(2, n):
        beta[:, col] = en.comm_energy_noma(bits.downlink[:, col], gains[:, col],
                                           s.radio.bandwidth, s.grid.dt,
                                           s.radio.noise_psd, "down")
    return alpha, beta


def initial_point(s: Scenario, prox_base: float = 1e-6) -> Anchor:
    """Feasible starting anchor: equal-split bits on the straight-line path.

    Raises InfeasibleStart when the plan breaks the UAV budget, a mobility
    limit, or (model 2) needs a near-zero cruise speed.
    """
    chk = validate_deadline(s)
    if not chk.ok:
        raise InfeasibleStart(
            f"deadline {chk.given_t:g} s is below the reachability minimum "
            f"{chk.required_t:g} s")
    bits = equal_split_bits(s)
    traj = straight_line_trajectory(s)

    alpha = beta = tau = None
    if s.access is Access.NON_ORTHOGONAL:
        try:
            alpha, beta = _interference_slacks(s, bits, traj)
        except en.InterferenceInfeasible as exc:
            raise InfeasibleStart(f"equal-split interference fixed point: {exc}") from exc
    if s.flight is FlightModel.MODEL2:
        speeds = np.linalg.norm(traj.velocities[:s.grid.frames], axis=1)
        if speeds.min() < TAU_MIN:
            raise InfeasibleStart(
                "starting trajectory needs a cruise speed below the model-2 "
                f"minimum {TAU_MIN} m/s; flight model 2 cannot hover")
        if speeds.max() > s.uav.v_max * (1 + 1e-9):
            raise InfeasibleStart("starting velocity profile exceeds v_max")
        accels = np.linalg.norm(traj.accelerations, axis=1)
        if accels.max() > s.uav.a_max * (1 + 1e-9):
            raise InfeasibleStart("starting velocity profile exceeds a_max")
        tau = speeds.copy()

    plan = PlanVariables(bits, traj, alpha, beta, tau)
    ledger = en.uav_energy_total(s, bits, traj)
    if not ledger.within_budget:
        raise InfeasibleStart(
            f"equal-split start exceeds the UAV energy budget by "
            f"{-ledger.budget_slack:.6g} J", budget_gap=-ledger.budget_slack)
    rep = en.check_plan(s, bits, traj, tau)
    if not rep.ok(1e-9):
        raise InfeasibleStart(f"start plan violates {rep.violations}")
    prox = ProxWeights.for_scenario(s, max(ledger.mobile_total, 1e-9), base=prox_base)
    return Anchor(s, plan, prox)


def exact_objective(s: Scenario, plan: PlanVariables) -> float:
    """True total mobile transmit energy of a plan (interference solved exactly)."""
    return en.mobile_energy_total(s, plan.bits, plan.traj)


def run(s: Scenario, cfg: ScaConfig | None = None, start: Anchor | None = None,
        pins: Pins | None = None, scheme: str = "joint") -> PlanResult:
    """Full optimization of a scenario; returns the converged plan and its ledger."""
    cfg = cfg or ScaConfig()
    anchor = start if start is not None else initial_point(s, cfg.prox_base)
    trace = ConvergenceTrace(initial_objective=exact_objective(s, anchor.plan))

    if all(u.input_bits == 0.0 for u in s.users):
        # nothing to offload: the zero-bit start is already optimal
        ledger = en.uav_energy_total(s, anchor.plan.bits, anchor.plan.traj)
        rep = en.check_plan(s, anchor.plan.bits, anchor.plan.traj, anchor.plan.tau_v)
        trace.objective.append(0.0)
        trace.uav_energy.append(ledger.uav_total)
        trace.step_gap.append(0.0)
        trace.gamma.append(0.0)
        trace.sub_primal.append(0.0)
        trace.sub_dual.append(0.0)
        trace.sub_comp_gap.append(0.0)
        return PlanResult(plan=anchor.plan, ledger=ledger, trace=trace,
                          termination="stationary", iterations=0, feasibility=rep,
                          scheme=scheme)

    termination = "max_iters"
    steps = 0
    warm_t0 = None
    for v in range(cfg.max_outer):
        sub = build(s, anchor, pins)
        try:
            plan_hat, kkt = sub.solve(tol=cfg.subproblem_tol,
                                      max_newton_iters=cfg.max_newton, t0=warm_t0,
                                      t_factor=cfg.t_factor)
        except (MaxIterations, NumericalBreakdown):
            try:  # retry once with the default barrier schedule
                plan_hat, kkt = sub.solve(tol=cfg.subproblem_tol,
                                          max_newton_iters=cfg.max_newton)
            except (MaxIterations, NumericalBreakdown) as exc:
                best = exc.best
                if best is None or max(best.primal_residual, best.dual_residual,
                                       best.comp_gap) > 1e3 * cfg.subproblem_tol:
                    raise SolverFailure(f"inner solve failed at iteration {v}: {exc}",
                                        trace, cause=exc) from exc
                plan_hat = sub.layout.decode_scaled(best.x)
                kkt = best
        # a half-stage head start on the barrier schedule; anything more
        # aggressive lands fresh anchors too far off the new central path
        warm_t0 = max(float(sub.n_ineq),
                      min(3e-4 / max(kkt.comp_gap, 1e-16), 1e-2 / cfg.subproblem_tol))

        gap = sub.anchor_gap(plan_hat)
        trace.step_gap.append(gap)
        trace.sub_primal.append(kkt.primal_residual)
        trace.sub_dual.append(kkt.dual_residual)
        trace.sub_comp_gap.append(kkt.comp_gap)

        if gap <= cfg.eps_stop:
            trace.gamma.append(0.0)
            trace.objective.append(exact_objective(s, anchor.plan))
            trace.uav_energy.append(en.uav_energy_total(s, anchor.plan.bits,
                                                        anchor.plan.traj).uav_total)
            termination = "stationary"
            break

        gamma = cfg.gamma(v)
        obj_prev = exact_objective(s, anchor.plan)
        candidate = plan_lincomb(1.0 - gamma, anchor.plan, gamma, plan_hat)
        if cfg.monotone:
            for _ in range(cfg.max_backtracks):
                if exact_objective(s, candidate) <= obj_prev + 1e-12 * max(1.0, abs(obj_prev)):
                    break
                gamma *= 0.5
                candidate = plan_lincomb(1.0 - gamma, anchor.plan, gamma, plan_hat)
            else:
                trace.gamma.append(0.0)
                trace.objective.append(obj_prev)
                trace.uav_energy.append(en.uav_energy_total(s, anchor.plan.bits,
                                                            anchor.plan.traj).uav_total)
                termination = "stationary"
                break

        anchor = Anchor(s, candidate, anchor.prox)
        steps += 1
        trace.gamma.append(gamma)
        trace.objective.append(exact_objective(s, candidate))
        trace.uav_energy.append(en.uav_energy_total(s, candidate.bits,
                                                    candidate.traj).uav_total)
        if cfg.keep_iterates:
            trace.iterates.append(candidate.copy())

        if len(trace.objective) > cfg.obj_window:
            recent = trace.objective[-cfg.obj_window - 1:]
            if abs(recent[0] - recent[-1]) <= cfg.eps_obj_rel * max(abs(recent[0]), 1e-12):
                termination = "stationary"
                break

    ledger = en.uav_energy_total(s, anchor.plan.bits, anchor.plan.traj)
    rep = en.check_plan(s, anchor.plan.bits, anchor.plan.traj, anchor.plan.tau_v)
    return PlanResult(plan=anchor.plan, ledger=ledger, trace=trace,
                      termination=termination, iterations=steps, feasibility=rep,
                      scheme=scheme)


def stationarity_gap(anchor: Anchor, s: Scenario, cfg: ScaConfig | None = None,
                     pins: Pins | None = None) -> float:
    """Fixed-point gap |z_hat(z) - z|_inf in scaled variables at one anchor."""
    cfg = cfg or ScaConfig()
    sub = build(s, anchor, pins)
    plan_hat, _ = sub.solve(tol=cfg.subproblem_tol, max_newton_iters=cfg.max_newton,
                            t_factor=cfg.t_factor)
    return sub.anchor_gap(plan_hat)
