"""Exact energy models: communication, computation, flying, local execution.

Everything here evaluates the physical models directly, with no convex
relaxation.  These functions serve three roles: reporting (energy ledgers),
feasibility checking of candidate plans, and ground truth against which the
convex surrogates are tested.

Conventions
-----------
Frames are indexed 1..N in the math; arrays are 0-based, so frame n lives at
column n-1.  Bit matrices are K x N with the pipeline windows

* uplink   nonzero only for frames 1..N-2,
* compute  nonzero only for frames 2..N-1,
* downlink nonzero only for frames 3..N,

so that the cloudlet only computes bits it has already received and only
returns outputs it has already computed.  Positions are (N+1) x 2 with row 0
pinned to the start and row N to the end location.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import Access, FlightModel, Scenario

SPEED_EPS = 1e-9  # below this, a model-2 speed counts as zero (singular)


class InterferenceInfeasible(Exception):
    """The non-orthogonal interference fixed point has no nonnegative solution."""


class ZeroSpeed(Exception):
    """Flight model 2 is singular at zero speed."""


@dataclass
class FrameBitAlloc:
    """Per-frame bit allocation, K x N each for uplink, compute, downlink."""

    uplink: np.ndarray
    compute: np.ndarray
    downlink: np.ndarray

    @property
    def n_users(self) -> int:
        return self.uplink.shape[0]

    @property
    def n_frames(self) -> int:
        return self.uplink.shape[1]

    def copy(self) -> "FrameBitAlloc":
        return FrameBitAlloc(self.uplink.copy(), self.compute.copy(), self.downlink.copy())


@dataclass
class Trajectory:
    """Discrete UAV path; velocities/accelerations are used by flight model 2.

    positions: (N+1, 2); velocities: (N+1, 2) or None; accelerations: (N, 2)
    or None.  For model 1 the velocity of frame n is implied by the positions,
    (p[n+1] - p[n]) / dt.
    """

    positions: np.ndarray
    velocities: np.ndarray | None = None
    accelerations: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0] - 1

    def implied_velocities(self, dt: float) -> np.ndarray:
        """(N, 2) finite-difference velocities from the positions."""
        return np.diff(self.positions, axis=0) / dt

    def copy(self) -> "Trajectory":
        return Trajectory(
            self.positions.copy(),
            None if self.velocities is None else self.velocities.copy(),
            None if self.accelerations is None else self.accelerations.copy(),
        )


@dataclass
class EnergyLedger:
    """Accounting of one plan's energies, all in joules."""

    mobile_total: float
    uav_total: float
    budget_slack: float
    uplink_per_frame: np.ndarray  # (K, N) mobile transmit energy
    downlink_per_frame: np.ndarray  # (K, N) cloudlet transmit energy
    compute_per_frame: np.ndarray  # (K, N) cloudlet computing energy
    fly_per_frame: np.ndarray  # (N,)

    @property
    def fly_total(self) -> float:
        return float(self.fly_per_frame.sum())

    @property
    def compute_total(self) -> float:
        return float(self.compute_per_frame.sum())

    @property
    def downlink_total(self) -> float:
        return float(self.downlink_per_frame.sum())

    @property
    def within_budget(self) -> bool:
        return self.budget_slack >= 0.0


def channel_gain(uav_xy: np.ndarray, user_xy: np.ndarray, altitude: float,
                 ref_gain: float) -> np.ndarray:
    """Line-of-sight channel gain between UAV and user(s).

    ref_gain / (dx^2 + dy^2 + H^2).  Broadcasts over leading dimensions of
    either argument.
    """
    d2 = np.sum((np.asarray(uav_xy) - np.asarray(user_xy)) ** 2, axis=-1)
    return ref_gain / (d2 + altitude**2)


def comp_energy_frame(bits: np.ndarray, cycles_per_bit: np.ndarray,
                      capacitance: float, dt: float) -> np.ndarray:
    """Cloudlet computing energy per user for one frame.

    The cloudlet clock must fit all users' cycles into the frame, so each
    user's energy is capacitance * C_k * l_k * (sum_k' C_k' l_k')^2 / dt^2.
    """
    bits = np.asarray(bits, dtype=float)
    total_cycles = float(np.dot(cycles_per_bit, bits))
    return capacitance * cycles_per_bit * bits * total_cycles**2 / dt**2


def comm_energy_oma(bits, gain, n_users: int, bandwidth: float, dt: float,
                    noise_psd: float):
    """Transmit energy for one orthogonal-access slot of dt / K seconds.

    Same expression for uplink and downlink; vectorized over bits/gain.
    """
    slot_bw_time = bandwidth * dt / n_users
    c = np.exp2(np.asarray(bits, dtype=float) / slot_bw_time) - 1.0
    return noise_psd * slot_bw_time / np.asarray(gain) * c


def _noma_rate_factors(bits: np.ndarray, bandwidth: float, dt: float) -> np.ndarray:
    return np.exp2(np.asarray(bits, dtype=float) / (bandwidth * dt)) - 1.0


def comm_energy_noma(bits: np.ndarray, gains: np.ndarray, bandwidth: float,
                     dt: float, noise_psd: float, direction: str) -> np.ndarray:
    """Per-user transmit energies under non-orthogonal access for one frame.

    All users share the full frame; interference is treated as noise, which
    couples the energies through a K x K linear fixed point:

    * uplink:   E_k = (N0 B dt + sum_{k' != k} g_k' E_k') c_k / g_k
    * downlink: E_k = (N0 B dt / g_k + sum_{k' != k} E_k') c_k

    with c_k = 2^(L_k / (B dt)) - 1.  The downlink interference sum is over
    raw energies, without channel-gain weighting; the two directions are
    intentionally asymmetric.

    Raises InterferenceInfeasible when the system has no finite nonnegative
    solution (the interference loop gain is too large).
    """
    if direction not in ("up", "down"):
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
    bits = np.asarray(bits, dtype=float)
    gains = np.asarray(gains, dtype=float)
    k = bits.shape[0]
    c = _noma_rate_factors(bits, bandwidth, dt)
    q = noise_psd * bandwidth * dt
    off_diag = np.ones((k, k)) - np.eye(k)
    if direction == "up":
        # solve for u_k = g_k E_k:  u = c * (q + sum_{k'!=k} u_k')
        mat = np.eye(k) - c[:, None] * off_diag
        rhs = c * q
    else:
        mat = np.eye(k) - c[:, None] * off_diag
        rhs = c * q / gains
    try:
        sol = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise InterferenceInfeasible("interference fixed point is singular") from exc
    resid = np.abs(mat @ sol - rhs)
    if np.any(resid > 1e-8 * (1.0 + np.abs(rhs))):
        raise InterferenceInfeasible("interference fixed point did not solve cleanly")
    if np.any(sol < -1e-12 * (1.0 + np.abs(sol).max())):
        raise InterferenceInfeasible("interference fixed point has negative energies")
    sol = np.maximum(sol, 0.0)
    return sol / gains if direction == "up" else sol


def fly_energy_model1(velocity: np.ndarray, kappa: float) -> np.ndarray:
    """Kinetic-only flying energy kappa * |v|^2 for one frame (or many)."""
    v = np.asarray(velocity, dtype=float)
    return kappa * np.sum(v * v, axis=-1)


def fly_energy_model2(velocity: np.ndarray, acceleration: np.ndarray,
                      kappa1: float, kappa2: float, gravity: float) -> np.ndarray:
    """Propulsion flying energy kappa1 |v|^3 + kappa2/|v| (1 + |a|^2/g^2).

    Singular as speed -> 0 (a fixed-wing craft cannot hover); raises
    ZeroSpeed for speeds below SPEED_EPS.
    """
    v = np.asarray(velocity, dtype=float)
    a = np.asarray(acceleration, dtype=float)
    speed = np.sqrt(np.sum(v * v, axis=-1))
    if np.any(speed < SPEED_EPS):
        raise ZeroSpeed("flight model 2 is singular at zero speed")
    acc2 = np.sum(a * a, axis=-1)
    return kappa1 * speed**3 + kappa2 / speed * (1.0 + acc2 / gravity**2)


def mobile_execution_energy(s: Scenario) -> tuple[float, np.ndarray, np.ndarray]:
    """Energy if every user computes locally within the deadline.

    Returns (total joules, per-user joules, per-user required CPU frequency).
    The frequency C_k I_k / T is the slowest clock that still finishes, and
    the energy gamma_k C_k^3 I_k^3 / T^2 follows from it.
    """
    t = s.grid.deadline
    i_k = np.array([u.input_bits for u in s.users])
    c_k = np.array([u.cycles_per_bit for u in s.users])
    gam = np.array([u.capacitance for u in s.users])
    freq = c_k * i_k / t
    per_user = gam * c_k**3 * i_k**3 / t**2
    return float(per_user.sum()), per_user, freq


# ---------------------------------------------------------------------------
# whole-plan evaluation

def _window_mask(n: int, first: int, last: int) -> np.ndarray:
    """Boolean mask over frames 1..n selecting [first, last] (1-based, inclusive)."""
    frames = np.arange(1, n + 1)
    return (frames >= first) & (frames <= last)


def uplink_energy_matrix(s: Scenario, bits: FrameBitAlloc, traj: Trajectory) -> np.ndarray:
    """(K, N) mobile transmit energies of the plan under the scenario's access scheme."""
    n = s.grid.frames
    k = s.n_users
    gains = channel_gain(traj.positions[None, :n, :], s.user_positions[:, None, :],
                         s.uav.altitude, s.radio.ref_gain)  # (K, N)
    out = np.zeros((k, n))
    window = _window_mask(n, 1, n - 2)
    if s.access is Access.ORTHOGONAL:
        e = comm_energy_oma(bits.uplink, gains, k, s.radio.bandwidth, s.grid.dt,
                            s.radio.noise_psd)
        out[:, window] = e[:, window]
    else:
        for col in np.flatnonzero(window):
            out[:, col] = comm_energy_noma(bits.uplink[:, col], gains[:, col],
                                           s.radio.bandwidth, s.grid.dt,
                                           s.radio.noise_psd, "up")
    return out


def downlink_energy_matrix(s: Scenario, bits: FrameBitAlloc, traj: Trajectory) -> np.ndarray:
    """(K, N) cloudlet transmit energies of the plan."""
    n = s.grid.frames
    k = s.n_users
    gains = channel_gain(traj.positions[None, :n, :], s.user_positions[:, None, :],
                         s.uav.altitude, s.radio.ref_gain)
    out = np.zeros((k, n))
    window = _window_mask(n, 3, n)
    if s.access is Access.ORTHOGONAL:
        e = comm_energy_oma(bits.downlink, gains, k, s.radio.bandwidth, s.grid.dt,
                            s.radio.noise_psd)
        out[:, window] = e[:, window]
    else:
        for col in np.flatnonzero(window):
            out[:, col] = comm_energy_noma(bits.downlink[:, col], gains[:, col],
                                           s.radio.bandwidth, s.grid.dt,
                                           s.radio.noise_psd, "down")
    return out


def compute_energy_matrix(s: Scenario, bits: FrameBitAlloc) -> np.ndarray:
    """(K, N) cloudlet computing energies of the plan."""
    c_k = np.array([u.cycles_per_bit for u in s.users])
    total_cycles = c_k @ bits.compute  # (N,)
    return s.uav.capacitance * c_k[:, None] * bits.compute * total_cycles[None, :]**2 \
        / s.grid.dt**2


def fly_energy_per_frame(s: Scenario, traj: Trajectory) -> np.ndarray:
    """(N,) flying energies under the scenario's flight model."""
    if s.flight is FlightModel.MODEL1:
        v = traj.implied_velocities(s.grid.dt)
        return fly_energy_model1(v, s.uav.kappa)
    if traj.velocities is None or traj.accelerations is None:
        raise ValueError("flight model 2 needs explicit velocities and accelerations")
    n = s.grid.frames
    return fly_energy_model2(traj.velocities[:n], traj.accelerations[:n],
                             s.uav.kappa1, s.uav.kappa2, s.uav.gravity)


def mobile_energy_total(s: Scenario, bits: FrameBitAlloc, traj: Trajectory) -> float:
    """Total mobile transmit energy of a plan: the planner's objective."""
    return float(uplink_energy_matrix(s, bits, traj).sum())


def uav_energy_total(s: Scenario, bits: FrameBitAlloc, traj: Trajectory) -> EnergyLedger:
    """Full energy ledger of a plan; flags budget violations via budget_slack."""
    up = uplink_energy_matrix(s, bits, traj)
    down = downlink_energy_matrix(s, bits, traj)
    comp = compute_energy_matrix(s, bits)
    fly = fly_energy_per_frame(s, traj)
    uav_total = float(comp.sum() + down.sum() + fly.sum())
    return EnergyLedger(
        mobile_total=float(up.sum()),
        uav_total=uav_total,
        budget_slack=s.uav.energy_budget - uav_total,
        uplink_per_frame=up,
        downlink_per_frame=down,
        compute_per_frame=comp,
        fly_per_frame=fly,
    )


@dataclass
class FeasibilityReport:
    """Worst relative violation per original-problem constraint group."""

    violations: dict = field(default_factory=dict)

    @property
    def max_violation(self) -> float:
        return max(self.violations.values(), default=0.0)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol


def check_plan(s: Scenario, bits: FrameBitAlloc, traj: Trajectory,
               tau_v: np.ndarray | None = None) -> FeasibilityReport:
    """Evaluate every original-problem constraint at a plan.

    Reports relative violations (positive numbers; 0 means satisfied) for:
    pipeline prefixes, bit totals, window exclusivity, nonnegativity,
    endpoint pinning, speed/acceleration limits, kinematic consistency and
    the UAV energy budget with exact energies.
    """
    n = s.grid.frames
    dt = s.grid.dt
    i_k = np.array([u.input_bits for u in s.users])
    o_k = np.array([u.output_ratio for u in s.users])
    scale_bits = np.maximum(i_k, 1.0)
    rep = FeasibilityReport()

    up_w = _window_mask(n, 1, n - 2)
    cp_w = _window_mask(n, 2, n - 1)
    dn_w = _window_mask(n, 3, n)
    rep.violations["window_exclusivity"] = float(max(
        np.abs(bits.uplink[:, ~up_w]).max(initial=0.0),
        np.abs(bits.compute[:, ~cp_w]).max(initial=0.0),
        np.abs(bits.downlink[:, ~dn_w]).max(initial=0.0),
    ) / scale_bits.max())
    rep.violations["nonnegative_bits"] = float(max(
        (-bits.uplink).max(initial=0.0), (-bits.compute).max(initial=0.0),
        (-bits.downlink).max(initial=0.0), 0.0) / scale_bits.max())

    cum_up = np.cumsum(bits.uplink[:, up_w], axis=1)
    cum_cp = np.cumsum(bits.compute[:, cp_w], axis=1)
    cum_dn = np.cumsum(bits.downlink[:, dn_w], axis=1)
    rep.violations["pipeline_compute"] = float(
        ((cum_cp - cum_up) / scale_bits[:, None]).max(initial=0.0))
    rep.violations["pipeline_downlink"] = float(
        ((cum_dn - o_k[:, None] * cum_cp) / np.maximum(o_k[:, None] * scale_bits[:, None], 1.0))
        .max(initial=0.0))

    rep.violations["total_uplink"] = float(
        (np.abs(bits.uplink.sum(axis=1) - i_k) / scale_bits).max())
    rep.violations["total_compute"] = float(
        (np.abs(bits.compute.sum(axis=1) - i_k) / scale_bits).max())
    rep.violations["total_downlink"] = float(
        (np.abs(bits.downlink.sum(axis=1) - o_k * i_k) / np.maximum(o_k * scale_bits, 1.0)).max())

    pos_scale = max(s.uav.altitude, float(np.linalg.norm(s.uav.end - s.uav.start)), 1.0)
    rep.violations["endpoints"] = float(max(
        np.linalg.norm(traj.positions[0] - s.uav.start),
        np.linalg.norm(traj.positions[n] - s.uav.end)) / pos_scale)

    if s.flight is FlightModel.MODEL1:
        speeds = np.linalg.norm(traj.implied_velocities(dt), axis=1)
        rep.violations["speed_limit"] = float(
            max(speeds.max() - s.uav.v_max, 0.0) / s.uav.v_max)
    else:
        v, a = traj.velocities, traj.accelerations
        if v is None or a is None:
            raise ValueError("flight model 2 needs explicit velocities and accelerations")
        speeds = np.linalg.norm(v, axis=1)
        accels = np.linalg.norm(a, axis=1)
        rep.violations["speed_limit"] = float(
            max(speeds.max() - s.uav.v_max, 0.0) / s.uav.v_max)
        rep.violations["accel_limit"] = float(
            max(accels.max() - s.uav.a_max, 0.0) / s.uav.a_max)
        v_next = v[:n] + a[:n] * dt
        p_next = traj.positions[:n] + v[:n] * dt + 0.5 * a[:n] * dt**2
        rep.violations["kinematics_v"] = float(
            np.abs(v_next - v[1:n + 1]).max() / s.uav.v_max)
        rep.violations["kinematics_p"] = float(np.abs(p_next - traj.positions[1:n + 1]).max()
                                               / pos_scale)
        vb = s.boundary_velocity
        rep.violations["boundary_velocity"] = float(max(
            np.linalg.norm(v[0] - vb), np.linalg.norm(v[n] - vb)) / max(s.uav.v_max, 1.0))
        if tau_v is not None:
            rep.violations["speed_slack"] = float(
                max((tau_v - speeds[:n]).max(initial=0.0), 0.0) / s.uav.v_max)

    ledger = uav_energy_total(s, bits, traj)
    rep.violations["uav_budget"] = float(
        max(-ledger.budget_slack, 0.0) / s.uav.energy_budget)
    return rep
