"""Problem instances: users, radio, UAV, time grid, and their validation.

A scenario bundles everything that defines one offloading planning problem:
the mobile users with their application demands, the radio front end, the
UAV/cloudlet physical parameters, the discrete time grid, and the selected
access scheme and flying-energy model.  Scenarios are immutable after
construction and are safe to share between concurrent solver runs.

Scenario files are YAML (key/value with nested sections).  Quantities may be
given either as plain numbers in strict SI units (bits, Hz, s, m, J) or as
strings with a declared unit suffix, e.g. ``"8 Mbit"``, ``"40 MHz"``,
``"500 kJ"``.  The reference channel may be specified either directly as
``ref_gain`` or as ``ref_snr_db`` (the SNR at 1 m for 1 W transmit power,
in dB); the dB form wins if both are present.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import yaml


class ScenarioError(Exception):
    """Base class for scenario loading problems."""


class ParseError(ScenarioError):
    """The file is not syntactically valid or is missing required keys."""


class ValidationError(ScenarioError):
    """A parsed value violates a scenario invariant."""


class DeadlineInfeasible(ValidationError):
    """The deadline is too short for the UAV to reach its final position.

    Carries the minimum feasible deadline ``required_t`` in seconds.
    """

    def __init__(self, required_t: float, given_t: float):
        self.required_t = required_t
        self.given_t = given_t
        super().__init__(
            f"deadline {given_t:g} s is below the minimum {required_t:g} s "
            f"needed to reach the final position at v_max"
        )


class Access(enum.Enum):
    ORTHOGONAL = "oma"
    NON_ORTHOGONAL = "noma"


class FlightModel(enum.Enum):
    MODEL1 = 1  # kinetic-energy-only, kappa * |v|^2
    MODEL2 = 2  # propulsion model, kappa1 |v|^3 + kappa2/|v| (1 + |a|^2/g^2)


class WingType(enum.Enum):
    FIXED_WING = "fixed_wing"
    ROTARY_WING = "rotary_wing"


@dataclass(frozen=True)
class MobileUser:
    """One ground user and the application it wants to offload."""

    position: np.ndarray  # (3,) meters, z == 0
    input_bits: float  # bits to offload
    cycles_per_bit: float  # CPU cycles per input bit
    output_ratio: float  # output bits produced per input bit
    capacitance: float  # effective switched capacitance, J s^2 / cycle^3


@dataclass(frozen=True)
class RadioParams:
    bandwidth: float  # Hz, per direction (FDD)
    noise_psd: float  # W/Hz
    ref_gain: float  # received power at 1 m for 1 W transmit

    @property
    def ref_snr(self) -> float:
        """Dimensionless reference SNR g0 / (N0 B)."""
        return self.ref_gain / (self.noise_psd * self.bandwidth)


@dataclass(frozen=True)
class UavParams:
    altitude: float  # m
    start: np.ndarray  # (2,) m
    end: np.ndarray  # (2,) m
    v_max: float  # m/s
    a_max: float  # m/s^2
    boundary_speed: float  # m/s, speed at first and last frame (flight model 2)
    energy_budget: float  # J
    capacitance: float  # cloudlet switched capacitance
    kappa: float  # model-1 constant, 0.5 * M * dt
    kappa1: float  # model-2 drag constant
    kappa2: float  # model-2 induced/lift constant
    gravity: float = 9.8  # m/s^2


@dataclass(frozen=True)
class TimeGrid:
    deadline: float  # s
    frames: int

    @property
    def dt(self) -> float:
        """Frame duration; derived so deadline == frames * dt exactly."""
        return self.deadline / self.frames


@dataclass(frozen=True)
class Model2PhysicalParams:
    """Airframe parameters from which kappa1/kappa2 can be derived."""

    air_density: float  # kg/m^3
    zero_lift_drag: float  # C_D0 (fixed wing) or C_Df (rotary wing)
    ref_area: float  # m^2
    oswald: float = 1.0
    aspect_ratio: float = 1.0
    rotor_area: float = 1.0  # m^2, rotary wing only
    induced_factor: float = 1.0  # rotary wing only
    mass: float = 1.0  # kg, gross
    gravity: float = 9.8
    wing_type: WingType = WingType.FIXED_WING


@dataclass(frozen=True)
class Scenario:
    users: tuple[MobileUser, ...]
    radio: RadioParams
    uav: UavParams
    grid: TimeGrid
    access: Access = Access.ORTHOGONAL
    flight: FlightModel = FlightModel.MODEL1

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def user_positions(self) -> np.ndarray:
        """(K, 2) horizontal user positions."""
        return np.array([u.position[:2] for u in self.users])

    @property
    def boundary_velocity(self) -> np.ndarray:
        """Boundary velocity vector: boundary_speed along start->end."""
        d = self.uav.end - self.uav.start
        dist = float(np.linalg.norm(d))
        if dist == 0.0:
            return np.zeros(2)
        return self.uav.boundary_speed * d / dist


@dataclass(frozen=True)
class DeadlineCheck:
    ok: bool
    required_t: float
    given_t: float


def validate_deadline(s: Scenario) -> DeadlineCheck:
    """Check that the UAV can reach its final position within the deadline.

    The straight-line displacement at maximum speed sets the minimum
    deadline; anything shorter makes every trajectory, and hence the whole
    offloading plan, infeasible.
    """
    dist = float(np.linalg.norm(s.uav.end - s.uav.start))
    required = dist / s.uav.v_max
    t = s.grid.deadline
    return DeadlineCheck(ok=required <= t * (1 + 1e-12), required_t=required, given_t=t)


def derive_kappas(p: Model2PhysicalParams, dt: float) -> tuple[float, float]:
    """Flight-model-2 constants from airframe physics for one frame of length dt.

    Fixed wing:   kappa1 = 0.5 rho C_D0 S_r dt,
                  kappa2 = 2 M^2 g^2 dt / (pi e0 A_R rho S_r).
    Rotary wing:  kappa1 = 0.5 rho C_Df S_r dt,
                  kappa2 = eps M^2 g^2 dt / (2 rho A).
    """
    for name in ("air_density", "zero_lift_drag", "ref_area", "oswald",
                 "aspect_ratio", "rotor_area", "induced_factor", "mass", "gravity"):
        if getattr(p, name) <= 0:
            raise ValidationError(f"physical parameter {name} must be > 0")
    if dt <= 0:
        raise ValidationError("frame duration must be > 0")
    k1 = 0.5 * p.air_density * p.zero_lift_drag * p.ref_area * dt
    if p.wing_type is WingType.FIXED_WING:
        k2 = (2.0 * p.mass**2 * p.gravity**2 * dt
              / (math.pi * p.oswald * p.aspect_ratio * p.air_density * p.ref_area))
    else:
        k2 = p.induced_factor * p.mass**2 * p.gravity**2 * dt / (2.0 * p.air_density * p.rotor_area)
    return k1, k2


def validate_scenario(s: Scenario) -> Scenario:
    """Check every scenario invariant; return the scenario unchanged if valid."""
    if s.n_users < 1:
        raise ValidationError("scenario needs at least one user")
    for i, u in enumerate(s.users):
        if u.position.shape != (3,):
            raise ValidationError(f"user {i}: position must be a 3-vector")
        if u.position[2] != 0.0:
            raise ValidationError(f"user {i}: position.z must be 0 (users are on the ground)")
        if u.input_bits < 0:
            raise ValidationError(f"user {i}: input_bits must be >= 0")
        if u.cycles_per_bit <= 0:
            raise ValidationError(f"user {i}: cycles_per_bit must be > 0")
        if u.output_ratio < 0:
            raise ValidationError(f"user {i}: output_ratio must be >= 0")
        if u.capacitance <= 0:
            raise ValidationError(f"user {i}: capacitance must be > 0")
    r = s.radio
    if r.bandwidth <= 0:
        raise ValidationError("radio.bandwidth_hz must be > 0")
    if r.noise_psd <= 0:
        raise ValidationError("radio noise PSD must be > 0 W/Hz")
    if r.ref_gain <= 0:
        raise ValidationError("radio ref_gain must be > 0")
    u = s.uav
    if u.altitude <= 0:
        raise ValidationError("uav.altitude_m must be > 0")
    if u.v_max <= 0:
        raise ValidationError("uav.v_max must be > 0")
    if u.a_max <= 0:
        raise ValidationError("uav.a_max must be > 0")
    if not 0 <= u.boundary_speed <= u.v_max:
        raise ValidationError("uav.boundary_speed must lie in [0, v_max]")
    if u.energy_budget <= 0:
        raise ValidationError("uav.energy_budget_j must be > 0")
    if u.capacitance <= 0:
        raise ValidationError("uav.capacitance must be > 0")
    for name in ("kappa", "kappa1", "kappa2"):
        if getattr(u, name) <= 0:
            raise ValidationError(f"uav.{name} must be > 0")
    if u.gravity <= 0:
        raise ValidationError("uav.gravity must be > 0")
    g = s.grid
    if g.deadline <= 0:
        raise ValidationError("grid.deadline_s must be > 0")
    if g.frames < 4:
        raise ValidationError(
            "grid.frames must be >= 4 (uplink/compute/downlink pipeline needs "
            "distinct first, middle and last frames)")
    chk = validate_deadline(s)
    if not chk.ok:
        raise DeadlineInfeasible(chk.required_t, chk.given_t)
    return s


# ---------------------------------------------------------------------------
# file loading

_UNIT_FACTORS = {
    "bit": 1.0, "kbit": 1e3, "mbit": 1e6, "gbit": 1e9,
    "hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9,
    "j": 1.0, "kj": 1e3, "mj": 1e6,
    "s": 1.0, "ms": 1e-3,
    "m": 1.0, "km": 1e3,
    "w": 1.0, "mw": 1e-3,
}


def _number(raw, key: str) -> float:
    """Accept a plain number or a '<number> <unit>' string in SI-prefixed units."""
    if isinstance(raw, bool) or raw is None:
        raise ParseError(f"{key}: expected a number, got {raw!r}")
    if isinstance(raw, (int, float)):
        return float(raw)
    if isinstance(raw, str):
        parts = raw.split()
        try:
            if len(parts) == 1:
                return float(parts[0])
            if len(parts) == 2:
                unit = parts[1].lower()
                if unit not in _UNIT_FACTORS and unit.endswith("s"):
                    unit = unit[:-1]  # plural suffix, e.g. "Mbits"
                return float(parts[0]) * _UNIT_FACTORS[unit]
        except (ValueError, KeyError):
            pass
        raise ParseError(f"{key}: cannot parse quantity {raw!r}")
    raise ParseError(f"{key}: expected a number, got {type(raw).__name__}")


def _section(doc: dict, key: str) -> dict:
    try:
        sec = doc[key]
    except (KeyError, TypeError):
        raise ParseError(f"missing section {key!r}") from None
    if not isinstance(sec, dict):
        raise ParseError(f"section {key!r} must be a mapping")
    return sec


def _get(sec: dict, key: str, where: str, default=None):
    if key in sec:
        return sec[key]
    if default is not None:
        return default
    raise ParseError(f"missing key {where}.{key}")


def _vector(raw, key: str, dim: int) -> np.ndarray:
    if not isinstance(raw, (list, tuple)) or len(raw) != dim:
        raise ParseError(f"{key}: expected a {dim}-vector")
    return np.array([_number(v, key) for v in raw])


def scenario_from_dict(doc: dict) -> Scenario:
    """Build and validate a Scenario from a parsed configuration mapping."""
    if not isinstance(doc, dict):
        raise ParseError("scenario file must contain a mapping at top level")

    raw_users = doc.get("users")
    if not isinstance(raw_users, list) or not raw_users:
        raise ParseError("scenario needs a non-empty users list")
    users = []
    for i, ru in enumerate(raw_users):
        if not isinstance(ru, dict):
            raise ParseError(f"users[{i}] must be a mapping")
        pos = ru.get("position")
        if not isinstance(pos, (list, tuple)) or len(pos) not in (2, 3):
            raise ParseError(f"users[{i}].position must be [x, y] or [x, y, 0]")
        p3 = np.array([_number(v, f"users[{i}].position") for v in pos] + [0.0] * (3 - len(pos)))
        users.append(MobileUser(
            position=p3,
            input_bits=_number(_get(ru, "input_bits", f"users[{i}]"), f"users[{i}].input_bits"),
            cycles_per_bit=_number(_get(ru, "cycles_per_bit", f"users[{i}]"),
                                   f"users[{i}].cycles_per_bit"),
            output_ratio=_number(_get(ru, "output_ratio", f"users[{i}]"),
                                 f"users[{i}].output_ratio"),
            capacitance=_number(_get(ru, "capacitance", f"users[{i}]"),
                                f"users[{i}].capacitance"),
        ))

    rsec = _section(doc, "radio")
    bandwidth = _number(_get(rsec, "bandwidth_hz", "radio"), "radio.bandwidth_hz")
    noise_psd = 10.0 ** (_number(_get(rsec, "noise_psd_dbm_hz", "radio"),
                                 "radio.noise_psd_dbm_hz") / 10.0) * 1e-3  # dBm/Hz -> W/Hz
    if "ref_snr_db" in rsec:  # dB form wins when both are present
        snr = 10.0 ** (_number(rsec["ref_snr_db"], "radio.ref_snr_db") / 10.0)
        ref_gain = snr * noise_psd * bandwidth
    elif "ref_gain" in rsec:
        ref_gain = _number(rsec["ref_gain"], "radio.ref_gain")
    else:
        raise ParseError("radio needs ref_snr_db or ref_gain")
    radio = RadioParams(bandwidth=bandwidth, noise_psd=noise_psd, ref_gain=ref_gain)

    gsec = _section(doc, "grid")
    grid = TimeGrid(deadline=_number(_get(gsec, "deadline_s", "grid"), "grid.deadline_s"),
                    frames=int(_number(_get(gsec, "frames", "grid"), "grid.frames")))

    usec = _section(doc, "uav")
    kappa1 = usec.get("kappa1")
    kappa2 = usec.get("kappa2")
    if (kappa1 is None or kappa2 is None) and "physical" in doc:
        phys = physical_from_dict(_section(doc, "physical"))
        k1, k2 = derive_kappas(phys, grid.dt)
        kappa1 = k1 if kappa1 is None else kappa1
        kappa2 = k2 if kappa2 is None else kappa2
    if kappa1 is None or kappa2 is None:
        raise ParseError("uav needs kappa1/kappa2, or a physical section to derive them")
    uav = UavParams(
        altitude=_number(_get(usec, "altitude_m", "uav"), "uav.altitude_m"),
        start=_vector(_get(usec, "start", "uav"), "uav.start", 2),
        end=_vector(_get(usec, "end", "uav"), "uav.end", 2),
        v_max=_number(_get(usec, "v_max", "uav"), "uav.v_max"),
        a_max=_number(_get(usec, "a_max", "uav"), "uav.a_max"),
        boundary_speed=_number(_get(usec, "boundary_speed", "uav", 0.0), "uav.boundary_speed"),
        energy_budget=_number(_get(usec, "energy_budget_j", "uav"), "uav.energy_budget_j"),
        capacitance=_number(_get(usec, "capacitance", "uav"), "uav.capacitance"),
        kappa=_number(_get(usec, "kappa", "uav"), "uav.kappa"),
        kappa1=_number(kappa1, "uav.kappa1"),
        kappa2=_number(kappa2, "uav.kappa2"),
        gravity=_number(usec.get("gravity", 9.8), "uav.gravity"),
    )

    access_raw = str(doc.get("access", "oma")).lower()
    try:
        access = Access(access_raw)
    except ValueError:
        raise ParseError(f"access must be 'oma' or 'noma', got {access_raw!r}") from None
    flight_raw = doc.get("flight_model", 1)
    try:
        flight = FlightModel(int(flight_raw))
    except (ValueError, TypeError):
        raise ParseError(f"flight_model must be 1 or 2, got {flight_raw!r}") from None

    return validate_scenario(Scenario(users=tuple(users), radio=radio, uav=uav,
                                      grid=grid, access=access, flight=flight))


def physical_from_dict(sec: dict) -> Model2PhysicalParams:
    wing = str(sec.get("wing_type", "fixed_wing")).lower()
    try:
        wing_type = WingType(wing)
    except ValueError:
        raise ParseError(f"physical.wing_type must be fixed_wing or rotary_wing, got {wing!r}") \
            from None
    return Model2PhysicalParams(
        air_density=_number(_get(sec, "air_density", "physical"), "physical.air_density"),
        zero_lift_drag=_number(_get(sec, "zero_lift_drag", "physical"),
                               "physical.zero_lift_drag"),
        ref_area=_number(_get(sec, "ref_area", "physical"), "physical.ref_area"),
        oswald=_number(sec.get("oswald", 1.0), "physical.oswald"),
        aspect_ratio=_number(sec.get("aspect_ratio", 1.0), "physical.aspect_ratio"),
        rotor_area=_number(sec.get("rotor_area", 1.0), "physical.rotor_area"),
        induced_factor=_number(sec.get("induced_factor", 1.0), "physical.induced_factor"),
        mass=_number(sec.get("mass", 1.0), "physical.mass"),
        gravity=_number(sec.get("gravity", 9.8), "physical.gravity"),
        wing_type=wing_type,
    )


def load_scenario(path) -> Scenario:
    """Load, parse and validate a scenario file."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read scenario file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed scenario file {path}: {exc}") from exc
    return scenario_from_dict(doc)


def scenario_to_dict(s: Scenario) -> dict:
    """Plain-SI mapping representation; inverse of scenario_from_dict."""
    noise_dbm_hz = 10.0 * math.log10(s.radio.noise_psd * 1e3)
    return {
        "users": [{
            "position": [float(v) for v in u.position],
            "input_bits": u.input_bits,
            "cycles_per_bit": u.cycles_per_bit,
            "output_ratio": u.output_ratio,
            "capacitance": u.capacitance,
        } for u in s.users],
        "radio": {
            "bandwidth_hz": s.radio.bandwidth,
            "noise_psd_dbm_hz": noise_dbm_hz,
            "ref_gain": s.radio.ref_gain,
        },
        "uav": {
            "altitude_m": s.uav.altitude,
            "start": [float(v) for v in s.uav.start],
            "end": [float(v) for v in s.uav.end],
            "v_max": s.uav.v_max,
            "a_max": s.uav.a_max,
            "boundary_speed": s.uav.boundary_speed,
            "energy_budget_j": s.uav.energy_budget,
            "capacitance": s.uav.capacitance,
            "kappa": s.uav.kappa,
            "kappa1": s.uav.kappa1,
            "kappa2": s.uav.kappa2,
            "gravity": s.uav.gravity,
        },
        "grid": {"deadline_s": s.grid.deadline, "frames": s.grid.frames},
        "access": s.access.value,
        "flight_model": s.flight.value,
    }


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(s), fh, sort_keys=False)
