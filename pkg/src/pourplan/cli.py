"""`pourplan` command line: simulate, sweep, query, cost-map, report.

Exit codes: 0 success, 1 usage error, 2 data error (missing/malformed files,
violated invariants).  Diagnostics go to stderr; data goes to stdout or the
requested output files.  The container spec file defaults to the bundled one
and can be overridden with --specs or the POURPLAN_SPECS environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, selector, sweep
from .containers import ContainerError, default_specs_path, load_container_specs
from .fluidsim import FluidSimError, PourParams, SimConfig, make_scene, simulate_pour
from .kinematics import DEFAULT_OMEGA, KinematicsError, generate_trajectory

USAGE_ERROR = 1
DATA_ERROR = 2

DataError = (
    ContainerError,
    FluidSimError,
    KinematicsError,
    sweep.SweepError,
    selector.SelectorError,
    analysis.AnalysisError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


def _load_specs(args):
    path = args.specs or os.environ.get("POURPLAN_SPECS") or default_specs_path()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"container spec file not found: {path}")
    return load_container_specs(path)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _sim_config(args, particle_volume=None) -> SimConfig:
    kwargs = {}
    if particle_volume is not None:
        kwargs["particle_volume_ml"] = particle_volume
    elif getattr(args, "particle_volume", None) is not None:
        kwargs["particle_volume_ml"] = args.particle_volume
    if getattr(args, "dt", None) is not None:
        kwargs["dt"] = args.dt
    if getattr(args, "omega", None) is not None:
        kwargs["omega"] = float(np.radians(args.omega))
    if getattr(args, "dump", None):
        kwargs["dump_path"] = args.dump
    return SimConfig(**kwargs)


def _scene_params(args, config: SimConfig) -> PourParams:
    return PourParams(
        container=args.container,
        v_start_ml=args.v_start,
        theta_stop=float(np.radians(args.theta_stop)),
        t_stop_s=args.t_stop,
        omega=config.omega,
        seed=args.seed,
    )


def cmd_simulate(args) -> int:
    specs = _load_specs(args)
    if args.container not in specs:
        raise ContainerError(f"unknown container {args.container!r}")
    if args.receiver not in specs:
        raise ContainerError(f"unknown receiving container {args.receiver!r}")
    config = _sim_config(args)
    params = _scene_params(args, config)
    scene = make_scene(specs[args.container], specs[args.receiver], params, config)
    outcome = simulate_pour(scene)
    print("v_start_ml,v_received_ml,v_spill_ml,v_remaining_ml,settled,valid")
    print(
        f"{outcome.v_start:g},{outcome.v_received:g},{outcome.v_spill:g},"
        f"{outcome.v_remaining:g},{int(outcome.settled)},{int(outcome.valid)}"
    )
    if not outcome.valid:
        print("warning: scene went unstable; outcome marked invalid", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    specs = _load_specs(args)
    if args.preset not in sweep.PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(sweep.PRESETS)}")
    axes = sweep.PRESETS[args.preset]()
    missing = [cid for cid in axes if cid not in specs]
    if missing:
        raise ContainerError(f"preset containers missing from spec file: {missing}")
    config = _sim_config(args)
    grid = sweep.build_grid(axes, database_seed=args.seed, omega=config.omega)
    if args.dry_run:
        print(f"grid points: {len(grid)}")
        return 0
    print(f"sweeping {len(grid)} scenes with {args.workers} worker(s)...", file=sys.stderr)
    db = sweep.run_sweep(
        grid, specs, config=config, receiving_id=args.receiver,
        workers=args.workers, progress=args.progress,
    )
    sweep.save_database(db, args.out)
    print(f"wrote {len(db)} records to {args.out} (dropped {db.dropped})", file=sys.stderr)
    return 0


def cmd_query(args) -> int:
    specs = _load_specs(args)
    db = sweep.load_database(_require_file(args.db, "database"))
    query = selector.PourQuery(
        container=args.container, v_start_real=args.start, v_goal=args.goal
    )
    record, cost_value = selector.select_best(db, query)
    p, o = record.params, record.outcome
    print("container,v_start_ml,theta_stop_deg,t_stop_s,v_received_ml,v_spill_ml,cost_ml")
    print(
        f"{p.container},{p.v_start_ml:g},{np.degrees(p.theta_stop):g},{p.t_stop_s:g},"
        f"{o.v_received:g},{o.v_spill:g},{cost_value:g}"
    )
    if args.trajectory:
        if p.container not in specs:
            raise ContainerError(f"unknown container {p.container!r}")
        if args.receiver not in specs:
            raise ContainerError(f"unknown receiving container {args.receiver!r}")
        config = SimConfig(omega=float(np.radians(db.meta.omega_deg_s)))
        scene = make_scene(specs[p.container], specs[args.receiver], p, config)
        trajectory = generate_trajectory(
            scene.frame, p.theta_stop, p.t_stop_s, omega=p.omega
        )
        trajectory.write_csv(args.trajectory)
        print(f"wrote trajectory to {args.trajectory}", file=sys.stderr)
    return 0


def cmd_cost_map(args) -> int:
    db = sweep.load_database(_require_file(args.db, "database"))
    cm = selector.cost_map(db, args.container, start_max=args.start_max, step=args.step)
    selector.export_cost_map(cm, args.out)
    threshold = selector.zero_spill_threshold(db, args.container, step=args.step)
    print(f"wrote {cm.populated} cells to {args.out}", file=sys.stderr)
    print(f"zero-spill coverage up to {threshold:g} mL target volume", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    db = sweep.load_database(_require_file(args.db, "database"))
    if args.real:
        report = analysis.sim_to_real_report(db, _require_file(args.real, "real-results file"))
        print("metric,value")
        for line in report.lines():
            print(line)
    else:
        rows = analysis.spill_report(db, container=args.container)
        print(analysis.SPILL_REPORT_CSV_HEADER)
        for theta, received, spill in rows:
            print(f"{theta:g},{received:g},{spill:g}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(
        prog="pourplan",
        description="Plan small-opening pours from pre-simulated particle scenes.",
    )
    parser.add_argument("--specs", help="container spec file (default: bundled; env POURPLAN_SPECS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate one pour scene")
    p_sim.add_argument("--container", required=True, help="pouring container id")
    p_sim.add_argument("--receiver", default="flask", help="receiving container id")
    p_sim.add_argument("--v-start", type=float, required=True, dest="v_start", help="start volume (mL)")
    p_sim.add_argument("--theta-stop", type=float, required=True, dest="theta_stop", help="stop angle (deg)")
    p_sim.add_argument("--t-stop", type=float, default=1.0, dest="t_stop", help="hold time at the stop angle (s)")
    p_sim.add_argument("--omega", type=float, help="angular velocity (deg/s, default 30)")
    p_sim.add_argument("--dt", type=float, help="solver timestep (s)")
    p_sim.add_argument("--seed", type=int, default=0, help="scene seed")
    p_sim.add_argument("--particle-volume", type=float, dest="particle_volume", help="mL per particle")
    p_sim.add_argument("--dump", help="write per-step particle positions to this CSV")
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep into a database file")
    p_sweep.add_argument("--preset", default="desk", help="grid preset: desk or paper-scale")
    p_sweep.add_argument("--out", default="pours.csv", help="output database path")
    p_sweep.add_argument("--receiver", default="flask", help="receiving container id")
    p_sweep.add_argument("--seed", type=int, default=0, help="database seed")
    p_sweep.add_argument("--workers", type=int, default=1, help="parallel scene workers")
    p_sweep.add_argument("--omega", type=float, help="angular velocity (deg/s, default 30)")
    p_sweep.add_argument("--dt", type=float, help="solver timestep (s)")
    p_sweep.add_argument("--particle-volume", type=float, dest="particle_volume", help="mL per particle")
    p_sweep.add_argument("--dry-run", action="store_true", dest="dry_run", help="print the grid size and exit")
    p_sweep.add_argument("--progress", action="store_true", help="log sweep progress to stderr")
    p_sweep.set_defaults(func=cmd_sweep)

    p_query = sub.add_parser("query", help="select the minimum-cost pour for a start/goal volume")
    p_query.add_argument("--db", required=True, help="pour database file")
    p_query.add_argument("--container", required=True, help="pouring container id")
    p_query.add_argument("--start", type=float, required=True, help="real start volume (mL)")
    p_query.add_argument("--goal", type=float, required=True, help="target volume to pour (mL)")
    p_query.add_argument("--trajectory", help="write the selected pour's trajectory CSV here")
    p_query.add_argument("--receiver", default="flask", help="receiving container id (for the trajectory)")
    p_query.set_defaults(func=cmd_query)

    p_map = sub.add_parser("cost-map", help="export a min-cost map over start/target volumes")
    p_map.add_argument("--db", required=True, help="pour database file")
    p_map.add_argument("--container", required=True, help="pouring container id")
    p_map.add_argument("--start-max", type=float, dest="start_max", help="largest start volume (mL)")
    p_map.add_argument("--step", type=float, default=1.0, help="grid step (mL)")
    p_map.add_argument("--out", default="cost_map.csv", help="output CSV path")
    p_map.set_defaults(func=cmd_cost_map)

    p_rep = sub.add_parser("report", help="spill table or sim-to-real metrics from a database")
    p_rep.add_argument("--db", required=True, help="pour database file")
    p_rep.add_argument("--container", help="restrict the spill report to one container")
    p_rep.add_argument("--real", help="measured pours CSV; switches to the sim-to-real report")
    p_rep.set_defaults(func=cmd_report)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
