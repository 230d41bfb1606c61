"""Delimited output tables and the run summary: the planner's file interface.

Fixed column orders, comma separators, full-precision floats (%.17g) so the
tables round-trip bit-exactly through the energy evaluators:

* trajectory.csv: n,x,y,vx,vy,ax,ay (n = 1..N+1; velocity/acceleration cells
  outside their windows are written as 0)
* bits.csv:       n,k,uplink,compute,downlink (full K x N matrices)
* results.csv:    scheme,access,model,T,placement,mobile_J,uav_J,fly_J,iters,converged
* trace.csv:      iter,objective_J,uav_J,step_gap,gamma,sub_primal,sub_dual,sub_gap
* summary.txt:    key: value lines mirroring the energy ledger

The readers reconstruct plans from the files alone, so downstream tools can
re-derive every ledger entry without touching solver internals.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .energy import EnergyLedger, FrameBitAlloc, Trajectory
from .scenario import FlightModel, Scenario
from .sca import PlanResult
from .surrogate import PlanVariables

FMT = "%.17g"

TRAJECTORY_COLUMNS = ["n", "x", "y", "vx", "vy", "ax", "ay"]
BITS_COLUMNS = ["n", "k", "uplink", "compute", "downlink"]
RESULTS_COLUMNS = ["scheme", "access", "model", "T", "placement",
                   "mobile_J", "uav_J", "fly_J", "iters", "converged"]
TRACE_COLUMNS = ["iter", "objective_J", "uav_J", "step_gap", "gamma",
                 "sub_primal", "sub_dual", "sub_gap"]


def _f(x) -> str:
    return FMT % float(x)


def write_trajectory(path, plan: PlanVariables) -> None:
    traj = plan.traj
    n = traj.n_frames
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for i in range(n + 1):
            vel = traj.velocities[i] if traj.velocities is not None else (0.0, 0.0)
            acc = traj.accelerations[i] if (traj.accelerations is not None and i < n) \
                else (0.0, 0.0)
            w.writerow([i + 1, _f(traj.positions[i][0]), _f(traj.positions[i][1]),
                        _f(vel[0]), _f(vel[1]), _f(acc[0]), _f(acc[1])])


def write_bits(path, plan: PlanVariables) -> None:
    bits = plan.bits
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BITS_COLUMNS)
        for col in range(bits.n_frames):
            for k in range(bits.n_users):
                w.writerow([col + 1, k + 1, _f(bits.uplink[k, col]),
                            _f(bits.compute[k, col]), _f(bits.downlink[k, col])])


def read_trajectory(path, flight: FlightModel) -> Trajectory:
    rows = _read_rows(path, TRAJECTORY_COLUMNS)
    n = len(rows) - 1
    pos = np.array([[r["x"], r["y"]] for r in rows])
    if flight is FlightModel.MODEL1:
        return Trajectory(pos)
    vel = np.array([[r["vx"], r["vy"]] for r in rows])
    acc = np.array([[r["ax"], r["ay"]] for r in rows[:n]])
    return Trajectory(pos, vel, acc)


def read_bits(path) -> FrameBitAlloc:
    rows = _read_rows(path, BITS_COLUMNS)
    n = int(max(r["n"] for r in rows))
    k = int(max(r["k"] for r in rows))
    bits = FrameBitAlloc(np.zeros((k, n)), np.zeros((k, n)), np.zeros((k, n)))
    for r in rows:
        col, kk = int(r["n"]) - 1, int(r["k"]) - 1
        bits.uplink[kk, col] = r["uplink"]
        bits.compute[kk, col] = r["compute"]
        bits.downlink[kk, col] = r["downlink"]
    return bits


def _read_rows(path, columns):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(columns) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [{k: float(v) for k, v in row.items()} for row in reader]


def result_row(res: PlanResult, s: Scenario, placement: int = 0) -> list:
    return [res.scheme, s.access.value, s.flight.value, _f(s.grid.deadline), placement,
            _f(res.ledger.mobile_total), _f(res.ledger.uav_total),
            _f(res.ledger.fly_total), res.iterations, int(res.converged)]


def write_results(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULTS_COLUMNS)
        w.writerows(rows)


def write_trace(path, res: PlanResult) -> None:
    tr = res.trace
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for i in range(len(tr)):
            w.writerow([i, _f(tr.objective[i]), _f(tr.uav_energy[i]),
                        _f(tr.step_gap[i]), _f(tr.gamma[i]), _f(tr.sub_primal[i]),
                        _f(tr.sub_dual[i]), _f(tr.sub_comp_gap[i])])


def write_summary(path, res: PlanResult, s: Scenario) -> None:
    led = res.ledger
    lines = [
        ("scheme", res.scheme),
        ("access", s.access.value),
        ("flight_model", s.flight.value),
        ("deadline_s", _f(s.grid.deadline)),
        ("frames", s.grid.frames),
        ("users", s.n_users),
        ("mobile_total_J", _f(led.mobile_total)),
        ("uav_total_J", _f(led.uav_total)),
        ("uav_compute_J", _f(led.compute_total)),
        ("uav_downlink_J", _f(led.downlink_total)),
        ("uav_fly_J", _f(led.fly_total)),
        ("budget_J", _f(s.uav.energy_budget)),
        ("budget_slack_J", _f(led.budget_slack)),
        ("iterations", res.iterations),
        ("converged", int(res.converged)),
        ("termination", res.termination),
        ("max_constraint_violation", _f(res.feasibility.max_violation)),
    ]
    with open(path, "w") as fh:
        for key, val in lines:
            fh.write(f"{key}: {val}\n")


def reevaluate_ledger(s: Scenario, out_dir) -> EnergyLedger:
    """Rebuild the energy ledger purely from the written tables."""
    out = Path(out_dir)
    bits = read_bits(out / "bits.csv")
    traj = read_trajectory(out / "trajectory.csv", s.flight)
    from . import energy as en
    return en.uav_energy_total(s, bits, traj)
