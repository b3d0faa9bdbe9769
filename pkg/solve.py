import os
import sys
import csv
import json
import argparse
import logging
import threading
import concurrent.futures

from dotenv import dotenv_values
from datetime import datetime
from functools import partial
import time

import numpy as np

from parashoot import __version__
from parashoot.artifacts import (
    bolza_summary, plot_orbit, read_trajectory_csv, write_json, write_trajectory_csv
)
from parashoot.checks import run_suite
from parashoot.config import RunConfig
from parashoot.entire import (
    ScatteringProblem, action_scaling, asymptotic_directions, collapse_experiment,
    continue_in_radius, extend_tails, fit_radius_law, kepler_parabolic_angle,
    self_intersection_check, solve_bolza_at
)
from parashoot.homotopy import enumerate_partitions, separates
from parashoot.types.enums import Command, ExitCode, LoggingLevel
from parashoot.types.errors import ConfigError, NonConvergedError, ParashootError

env = {**dotenv_values(".env"), **os.environ}

log_path = "_parashoot.log"
log_path = datetime.now().strftime("%Y-%m-%d:%H:%M:%S") + log_path

logging.basicConfig(
    filename=log_path,
    level=logging.ERROR,
    format='%(asctime)s %(threadName)s %(levelname)s: %(message)s')

MAX_SCAN_CENTRES = 12


def output_path(run, name):
    return os.path.join(run.output_dir, name)


def positive_int(value):
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return number


def cmd_solve_bolza(run, args):
    """
    Solve one Bolza problem with q± = R xi± and write its artifacts.

    :param run: The loaded RunConfig
    :param args: Parsed arguments; ``args.radius`` defaults to 2K
    """
    prob = run.scattering_problem()
    radius = args.radius or 2.0 * run.problem.ring_radius
    sol = solve_bolza_at(radius, prob, settings=run.solver, rng=run.rng())
    stamp = run.stamp()
    summary = bolza_summary(sol, stamp)
    summary["radius"] = radius
    summary["separates"] = separates(sol.path, prob.partition, run.problem)
    summary["self_intersections"] = len(self_intersection_check(sol.path.nodes))
    rows = write_trajectory_csv(output_path(run, "trajectory.csv"), sol.trajectory, stamp)
    summary["samples"] = rows
    write_json(output_path(run, "summary.json"), summary)
    plot_orbit(output_path(run, "orbit.svg"), sol.trajectory, run.problem,
               title=f"R = {radius:g}, class {sol.parity}", stamp=stamp)
    print(f"omega={sol.omega:.12g} action={sol.action:.12g} parity={sol.parity}")
    return ExitCode.SUCCESS


def _fit_report(result, tails, prob, run):
    cfg = run.problem
    report = {}
    directions = asymptotic_directions(result.solutions[-1], prob, tails=tails)
    report["directions"] = {
        "minus": directions.minus.tolist(), "plus": directions.plus.tolist(),
        "angle_error_minus": directions.angle_error_minus,
        "angle_error_plus": directions.angle_error_plus,
        "decay_minus": directions.decay_minus.__dict__ if directions.decay_minus else None,
        "decay_plus": directions.decay_plus.__dict__ if directions.decay_plus else None,
    }
    report["radius_law"] = {
        side: fit_radius_law(tails, side=sign).__dict__
        for side, sign in (("plus", 1), ("minus", -1))}
    scaling = action_scaling(result, cfg)
    report["action_scaling"] = {**scaling.__dict__, "relative_error": scaling.relative_error}
    return report


def cmd_solve_entire(run, args):
    """Continue in R, extend the last solution's tails and fit the asymptotics."""
    prob = run.scattering_problem()
    schedule = run.schedule()
    result = continue_in_radius(prob, schedule, run.solver, run.rng())
    stamp = run.stamp()
    for k, sol in enumerate(result.solutions):
        write_trajectory_csv(output_path(run, f"trajectory_R{k}.csv"), sol.trajectory, stamp)
        write_json(output_path(run, f"summary_R{k}.json"),
                   {**bolza_summary(sol, stamp), "radius": result.radii[k]})

    report = {
        **stamp,
        "radii": list(result.radii),
        "window": list(result.window),
        "sup_deviations": list(result.sup_deviations),
        "inside_actions": list(result.inside_actions),
        "separated": list(result.separated),
        "converged": result.converged,
    }
    tails = extend_tails(result.solutions[-1], run.problem, run.continuation.tail_extent,
                         run.integration.tolerance)
    write_trajectory_csv(output_path(run, "entire.csv"), tails, stamp)
    plot_orbit(output_path(run, "entire.svg"), [s.trajectory for s in result.solutions],
               run.problem, title=f"partition {prob.partition}", stamp=stamp)
    if len(schedule) >= 4:
        report.update(_fit_report(result, tails, prob, run))
    else:
        logging.warning(f"Schedule of {len(schedule)} radii: fits skipped")
    write_json(output_path(run, "report.json"), report)
    if not result.converged:
        raise NonConvergedError(f"Window deviations {result.sup_deviations} are not settling")
    return ExitCode.SUCCESS


def scan_cell(cell, run, radius, lock, rows, failed):
    index, partition, theta_minus, theta_plus = cell
    row = {"cell": index, "partition": str(partition), "dir_minus": theta_minus,
           "dir_plus": theta_plus}
    try:
        prob = ScatteringProblem.from_angles(theta_minus, theta_plus, partition, run.problem)
        row["scattering_angle"] = prob.scattering_angle
        sol = solve_bolza_at(radius, prob, settings=run.solver,
                             rng=np.random.default_rng([run.seed, index]))
        row.update(converged=True, action=sol.action,
                   separated=separates(sol.path, partition, run.problem),
                   crossings=len(self_intersection_check(sol.path.nodes)), error="")
    except ParashootError as e:
        logging.error(f"Scan cell {index} ({partition}, {theta_minus:.4f}, {theta_plus:.4f}) "
                      f"failed: {e.code}: {e}")
        row.update(converged=False, action=float("nan"), separated=False, crossings=-1,
                   error=e.code)
        with lock:
            failed.append(f"{index} {partition} {theta_minus!r} {theta_plus!r} {e.code}: {e}")
    with lock:
        rows.append(row)


def cmd_scan(run, args):
    """Every unordered proper partition against every pair of grid directions."""
    cfg = run.problem
    if cfg.n_centres > MAX_SCAN_CENTRES:
        raise ConfigError(f"Scan supports at most {MAX_SCAN_CENTRES} centres")
    angles = 2.0 * np.pi * np.arange(run.scan.direction_count) / run.scan.direction_count
    cells = []
    for partition in enumerate_partitions(cfg.n_centres):
        for i in range(len(angles)):
            for j in range(i + 1, len(angles)):
                cells.append((len(cells), partition, float(angles[i]), float(angles[j])))
    logging.info(f"Scanning {len(cells)} cells with {args.jobs} workers")

    lock = threading.Lock()
    rows, failed = [], []
    radius = run.scan_radius()
    with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as executor:
        list(executor.map(partial(scan_cell, run=run, radius=radius, lock=lock, rows=rows,
                                  failed=failed), cells))
    rows.sort(key=lambda row: row["cell"])

    columns = ("cell", "partition", "dir_minus", "dir_plus", "scattering_angle",
               "converged", "action", "separated", "crossings", "error")
    path = output_path(run, "scan.csv")
    os.makedirs(run.output_dir, exist_ok=True)
    with open(path, 'w', newline='') as output_file:
        for key, value in sorted(run.stamp().items()):
            output_file.write(f"# {key}: {value}\n")
        writer = csv.DictWriter(output_file, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: f"{value:.17g}" if isinstance(value, float) else value
                             for key, value in row.items()})

    if failed:
        failed_path = datetime.now().strftime("%Y-%m-%d:%H:%M:%S") + "_failed_cells.txt"
        failed_path = output_path(run, failed_path)
        with open(failed_path, 'w') as output_file:
            for key, value in sorted(run.stamp().items()):
                output_file.write(f"# {key}: {value}\n")
            output_file.write('\n'.join(failed) + '\n')
        print(f"{len(failed)} of {len(cells)} cells failed; see {failed_path}")
    print(f"Scan complete: {len(cells)} cells written to {path}")
    return ExitCode.SUCCESS


def cmd_collapse(run, args):
    prob = run.scattering_problem()
    result = continue_in_radius(prob, run.schedule(), run.solver, run.rng())
    tails = extend_tails(result.solutions[-1], run.problem, run.continuation.tail_extent,
                         run.integration.tolerance)
    table = collapse_experiment(tails, prob, run.collapse.eps,
                                probe_count=run.collapse.probe_count)
    write_json(output_path(run, "collapse.json"), {
        **run.stamp(),
        "rows": [row.__dict__ for row in table.rows],
        "decreasing": table.decreasing,
    })
    for row in table.rows:
        print(f"eps={row.eps:<8g} deviation={row.deviation:.6e} "
              f"energy_residual={row.energy_residual:.3e}")
    if not table.decreasing:
        raise NonConvergedError("Collapse deviations do not decrease with eps")
    return ExitCode.SUCCESS


def cmd_kepler_angle(run, args):
    alpha = run.problem.alpha
    angle = kepler_parabolic_angle(alpha, tol=run.integration.tolerance)
    target = 2.0 * np.pi / (2.0 - alpha)
    error = abs(angle - target) / target
    write_json(output_path(run, "kepler_angle.json"), {
        **run.stamp(), "alpha": alpha, "angle": angle, "target": target,
        "relative_error": error})
    print(f"alpha={alpha}: angle={angle:.10f} target={target:.10f} error={error:.2e}")
    return ExitCode.SUCCESS if error <= 1e-2 else ExitCode.NON_CONVERGED


def cmd_validate(run, args):
    results = run_suite(run, continuation=not args.quick)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.status.value}  {r.detail}")
    write_json(output_path(run, "validate.json"), {
        **run.stamp(),
        "checks": [{"name": r.name, "status": r.status.value, "detail": r.detail}
                   for r in results]})
    return ExitCode.SUCCESS if all(r.passed for r in results) else ExitCode.HARD_ERROR


def cmd_plot(run, args):
    traj = read_trajectory_csv(args.input, run.problem)
    target = os.path.splitext(args.input)[0] + ".svg"
    plot_orbit(target, traj, run.problem, stamp=run.stamp())
    print(f"Plot written to {target}")
    return ExitCode.SUCCESS


COMMANDS = {
    Command.SOLVE_BOLZA: cmd_solve_bolza,
    Command.SOLVE_ENTIRE: cmd_solve_entire,
    Command.SCAN: cmd_scan,
    Command.COLLAPSE: cmd_collapse,
    Command.KEPLER_ANGLE: cmd_kepler_angle,
    Command.VALIDATE: cmd_validate,
    Command.PLOT: cmd_plot,
}


def build_parser():
    parser = argparse.ArgumentParser(
        description="Zero-energy orbits of the planar N-centre problem")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in Command:
        sub = subparsers.add_parser(command.value)
        sub.add_argument(
            "--config",
            type=os.path.relpath,
            required=True,
            help="JSON run configuration"
        )
        sub.add_argument(
            "--out",
            type=str,
            help="Output directory (PARASHOOT_OUT takes precedence)"
        )
        sub.add_argument(
            "--jobs",
            type=positive_int,
            default=os.cpu_count() or 1,
            help="Number of worker threads for scans (default: number of processors)"
        )
        sub.add_argument(
            "--seed",
            type=int,
            help="Random seed for restart perturbations"
        )
        sub.add_argument(
            "--tol",
            type=float,
            help="Integration tolerance"
        )
        sub.add_argument(
            "-l", "--logging",
            type=str,
            help="Set logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)"
        )
        if command == Command.SOLVE_BOLZA:
            sub.add_argument("--radius", type=float, help="Endpoint radius R (default: 2K)")
        if command == Command.VALIDATE:
            sub.add_argument("--quick", action="store_true",
                             help="Skip the radius-continuation checks")
        if command == Command.PLOT:
            sub.add_argument("--input", type=os.path.relpath, required=True,
                             help="Trajectory CSV to plot")
    return parser


def report_error(error, run, out_dir):
    payload = {
        **error.to_dict(),
        "config_hash": run.config_hash() if run else None,
        "version": __version__,
    }
    logging.error(f"{error.code}: {error}")
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "error.json"), 'w') as output_file:
            json.dump(payload, output_file, indent=2, sort_keys=True)
    except OSError as e:
        print(f"Error writing error.json: {e}", file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.logging:
        level = LoggingLevel.map_level(args.logging)
        if level is None:
            logging.error(f"Invalid logging level: {args.logging}")
            return ExitCode.CONFIG_ERROR
        logging.getLogger().setLevel(level.value)

    out = env.get("PARASHOOT_OUT") or args.out
    run = None
    try:
        run = RunConfig.load(args.config).with_overrides(out=out, seed=args.seed, tol=args.tol)
        logging.info(f"{args.command} with config {run.config_hash()}")
        return COMMANDS[Command(args.command)](run, args)
    except ParashootError as e:
        report_error(e, run, run.output_dir if run else (out or "out"))
        return e.exit_code


if __name__ == "__main__":
    start_time = time.time()
    code = main()
    end_time = time.time()
    print(end_time - start_time)
    sys.exit(int(code))
