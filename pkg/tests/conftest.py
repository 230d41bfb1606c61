import numpy as np
import pytest

from uavoffload.scenario import (Access, FlightModel, MobileUser, RadioParams, Scenario,
                                 TimeGrid, UavParams, scenario_from_dict, validate_scenario)

# Simulation defaults used by the bundled scenarios (Table-II-style values).
DEFAULTS = dict(
    bandwidth_hz=40e6,
    noise_psd_dbm_hz=-174.0,
    capacitance=1e-28,
    cycles_per_bit=1550.7,
    output_ratio=0.5,
    altitude_m=5.0,
    energy_budget_j=500e3,
    v_max=50.0,
    a_max=30.0,
    dt=0.045,
    gravity=9.8,
    mass=9.65,
    kappa=0.2171,
    kappa1=0.0037,
    kappa2=5.0206,
)


def make_scenario(user_xy, input_bits, deadline, frames, ref_snr_db,
                  start=(0.0, 0.0), end=(5.0, 0.0), access="oma", flight_model=1,
                  boundary_speed=None, energy_budget=None, v_max=None,
                  output_ratio=None, capacitance=None) -> Scenario:
    """Scenario factory with Table-II-style defaults."""
    d = DEFAULTS
    if boundary_speed is None:
        boundary_speed = float(np.linalg.norm(np.array(end) - np.array(start))) / deadline
    doc = {
        "users": [
            {
                "position": [float(x), float(y), 0.0],
                "input_bits": float(bits),
                "cycles_per_bit": d["cycles_per_bit"],
                "output_ratio": d["output_ratio"] if output_ratio is None else output_ratio,
                "capacitance": d["capacitance"] if capacitance is None else capacitance,
            }
            for (x, y), bits in zip(user_xy, input_bits)
        ],
        "radio": {
            "bandwidth_hz": d["bandwidth_hz"],
            "noise_psd_dbm_hz": d["noise_psd_dbm_hz"],
            "ref_snr_db": ref_snr_db,
        },
        "uav": {
            "altitude_m": d["altitude_m"],
            "start": list(start),
            "end": list(end),
            "v_max": d["v_max"] if v_max is None else v_max,
            "a_max": d["a_max"],
            "boundary_speed": boundary_speed,
            "energy_budget_j": d["energy_budget_j"] if energy_budget is None else energy_budget,
            "capacitance": d["capacitance"],
            "kappa": d["kappa"],
            "kappa1": d["kappa1"],
            "kappa2": d["kappa2"],
            "gravity": d["gravity"],
        },
        "grid": {"deadline_s": deadline, "frames": frames},
        "access": access,
        "flight_model": flight_model,
    }
    return scenario_from_dict(doc)


def fig3_scenario(access="oma", flight_model=1) -> Scenario:
    """K=3 showcase scenario: users at the corners, modest diagonal flight."""
    return make_scenario(
        user_xy=[(0.0, 10.0), (10.0, 10.0), (10.0, 0.0)],
        input_bits=[4e6, 6e6, 2e6],
        deadline=2.25, frames=50, ref_snr_db=-5.0,
        start=(0.0, 0.0), end=(5.0, 0.0),
        access=access, flight_model=flight_model,
    )


@pytest.fixture
def fig3_oma_m1():
    return fig3_scenario("oma", 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
