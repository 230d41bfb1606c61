import math

import numpy as np
import pytest

from uavoffload import scenario as sc
from conftest import fig3_scenario, make_scenario


def test_grid_dt_is_derived():
    s = fig3_scenario()
    assert s.grid.deadline == 2.25
    assert s.grid.frames == 50
    assert s.grid.dt == pytest.approx(0.045, rel=0, abs=0)


def test_ref_snr_db_conversion():
    # -5 dB reference SNR, N0 = -174 dBm/Hz, B = 40 MHz.
    s = fig3_scenario()
    n0 = 10 ** (-174.0 / 10.0) * 1e-3
    assert s.radio.noise_psd == pytest.approx(n0, rel=1e-12)
    assert s.radio.ref_gain == pytest.approx(10 ** (-0.5) * n0 * 40e6, rel=1e-12)
    assert s.radio.ref_snr == pytest.approx(10 ** (-0.5), rel=1e-12)


def test_ref_gain_direct_and_db_precedence():
    doc_gain = {"bandwidth_hz": 40e6, "noise_psd_dbm_hz": -174, "ref_gain": 1e-13}
    doc_both = dict(doc_gain, ref_snr_db=-5)
    base = sc.scenario_to_dict(fig3_scenario())
    base["radio"] = doc_gain
    assert sc.scenario_from_dict(base).radio.ref_gain == pytest.approx(1e-13)
    base["radio"] = doc_both  # dB form wins
    n0b = 10 ** (-17.4) * 1e-3 * 40e6
    assert sc.scenario_from_dict(base).radio.ref_gain == pytest.approx(10 ** (-0.5) * n0b)


def test_unit_suffixes():
    base = sc.scenario_to_dict(fig3_scenario())
    base["users"][0]["input_bits"] = "4 Mbit"
    base["radio"]["bandwidth_hz"] = "40 MHz"
    base["uav"]["energy_budget_j"] = "500 kJ"
    s = sc.scenario_from_dict(base)
    assert s.users[0].input_bits == 4e6
    assert s.radio.bandwidth == 40e6
    assert s.uav.energy_budget == 500e3


def test_roundtrip_through_file(tmp_path):
    s = fig3_scenario(access="noma", flight_model=2)
    path = tmp_path / "scenario.yaml"
    sc.save_scenario(s, path)
    s2 = sc.load_scenario(path)
    assert s2.access is sc.Access.NON_ORTHOGONAL
    assert s2.flight is sc.FlightModel.MODEL2
    assert s2.grid == s.grid
    assert s2.radio.bandwidth == s.radio.bandwidth
    assert s2.radio.ref_gain == pytest.approx(s.radio.ref_gain, rel=1e-12)
    assert np.allclose(s2.uav.start, s.uav.start)
    assert np.allclose(s2.uav.end, s.uav.end)
    for a, b in zip(s.users, s2.users):
        assert np.allclose(a.position, b.position)
        assert a.input_bits == b.input_bits
        assert a.cycles_per_bit == b.cycles_per_bit
        assert a.output_ratio == b.output_ratio
        assert a.capacitance == b.capacitance
    for name in ("altitude", "v_max", "a_max", "boundary_speed", "energy_budget",
                 "capacitance", "kappa", "kappa1", "kappa2", "gravity"):
        assert getattr(s2.uav, name) == pytest.approx(getattr(s.uav, name), rel=1e-12)


def test_missing_file_and_malformed_file(tmp_path):
    with pytest.raises(sc.ParseError):
        sc.load_scenario(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("users: [unclosed\n")
    with pytest.raises(sc.ParseError):
        sc.load_scenario(bad)


def test_validation_names_the_invariant():
    base = sc.scenario_to_dict(fig3_scenario())
    base["users"][0]["cycles_per_bit"] = 0.0
    with pytest.raises(sc.ValidationError, match="cycles_per_bit"):
        sc.scenario_from_dict(base)
    base = sc.scenario_to_dict(fig3_scenario())
    base["grid"]["frames"] = 3
    with pytest.raises(sc.ValidationError, match="frames"):
        sc.scenario_from_dict(base)
    base = sc.scenario_to_dict(fig3_scenario())
    base["users"][0]["position"] = [0.0, 10.0, 2.0]
    with pytest.raises(sc.ValidationError, match="position.z"):
        sc.scenario_from_dict(base)


def test_validate_deadline_ok_on_showcase():
    chk = sc.validate_deadline(fig3_scenario())
    assert chk.ok
    assert chk.required_t == pytest.approx(5.0 / 50.0)


def test_validate_deadline_infeasible():
    # 100 m in 1 s needs 100 m/s > v_max = 50 m/s.
    with pytest.raises(sc.DeadlineInfeasible) as err:
        make_scenario(user_xy=[(5.0, 5.0)], input_bits=[1e6], deadline=1.0, frames=20,
                      ref_snr_db=-5.0, start=(0.0, 0.0), end=(100.0, 0.0),
                      boundary_speed=0.0)
    assert err.value.required_t == pytest.approx(2.0)


def test_coincident_endpoints_always_feasible():
    s = make_scenario(user_xy=[(5.0, 5.0)], input_bits=[1e6], deadline=0.9, frames=20,
                      ref_snr_db=-5.0, start=(3.0, 4.0), end=(3.0, 4.0), boundary_speed=0.0)
    assert sc.validate_deadline(s).ok
    assert np.allclose(s.boundary_velocity, 0.0)


def test_derive_kappas_fixed_wing_table_values():
    phys = sc.Model2PhysicalParams(
        air_density=1.225, zero_lift_drag=0.0355, ref_area=3.77,
        oswald=0.85, aspect_ratio=13.0, mass=9.65, gravity=9.8,
        wing_type=sc.WingType.FIXED_WING)
    k1, k2 = sc.derive_kappas(phys, 0.045)
    assert k1 == pytest.approx(0.5 * 1.225 * 0.0355 * 3.77 * 0.045, rel=1e-12)
    assert k1 == pytest.approx(0.0037, abs=2e-5)
    assert k2 == pytest.approx(2 * 9.65**2 * 9.8**2 * 0.045
                               / (math.pi * 0.85 * 13 * 1.225 * 3.77), rel=1e-12)
    assert k2 == pytest.approx(5.0206, abs=2e-4)


def test_derive_kappas_rotary_wing():
    phys = sc.Model2PhysicalParams(
        air_density=1.2, zero_lift_drag=0.02, ref_area=0.5, rotor_area=0.8,
        induced_factor=1.1, mass=4.0, gravity=9.8, wing_type=sc.WingType.ROTARY_WING)
    k1, k2 = sc.derive_kappas(phys, 0.1)
    assert k1 == pytest.approx(0.5 * 1.2 * 0.02 * 0.5 * 0.1, rel=1e-12)
    assert k2 == pytest.approx(1.1 * 16.0 * 9.8**2 * 0.1 / (2 * 1.2 * 0.8), rel=1e-12)


def test_derive_kappas_scaling():
    phys = sc.Model2PhysicalParams(
        air_density=1.225, zero_lift_drag=0.0355, ref_area=3.77,
        oswald=0.85, aspect_ratio=13.0, mass=9.65, gravity=9.8)
    k1a, k2a = sc.derive_kappas(phys, 0.045)
    k1b, k2b = sc.derive_kappas(phys, 0.090)  # linear in dt
    assert k1b == pytest.approx(2 * k1a, rel=1e-12)
    assert k2b == pytest.approx(2 * k2a, rel=1e-12)
    heavy = sc.Model2PhysicalParams(
        air_density=1.225, zero_lift_drag=0.0355, ref_area=3.77,
        oswald=0.85, aspect_ratio=13.0, mass=2 * 9.65, gravity=9.8)
    _, k2c = sc.derive_kappas(heavy, 0.045)
    assert k2c == pytest.approx(4 * k2a, rel=1e-12)  # quadratic in mass


def test_boundary_velocity_direction():
    s = fig3_scenario()
    vb = s.boundary_velocity
    assert np.allclose(vb, [s.uav.boundary_speed, 0.0])
