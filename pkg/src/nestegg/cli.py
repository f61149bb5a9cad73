"""Command-line front end: solve, sweep rates, simulate, trace the
uncommitted curve, and calibrate, emitting CSV data plus a run manifest.

Exit codes: 0 success, 2 configuration/usage error, 3 solver failure,
4 infeasible calibration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from . import exports
from .calibrate import CalibrationError, CalibrationTarget, calibrate_lbar
from .model import ConfigError, ModelParamError, ModelParams, default_params, load_params
from .policy_sim import CoalescenceError, simulate, uncommitted_curve
from .post_retirement import SolverError, solve_f
from .pre_retirement import Grid, GridError, solve_pde

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INFEASIBLE = 4


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects a comma-separated list of numbers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestegg",
        description="Optimal consumption and retirement timing for a lifecycle saver.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, grids: bool = True):
        p.add_argument("--config", help="flat key=value parameter file (defaults used when omitted)")
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        if grids:
            p.add_argument("--fine-grid", action="store_true",
                           help="use the reference grid dt=0.0005, dy=0.01 (slow)")
            p.add_argument("--dt", type=float, default=None, help="time step override in years")
            p.add_argument("--dy", type=float, default=None, help="log-wealth step override")
        p.add_argument("--workers", type=int, default=None,
                       help="max parallel worker processes for fan-out commands")

    p_solve = sub.add_parser("solve", help="solve the model and export f, boundary, surface")
    common(p_solve)
    p_solve.add_argument("--surface-stride", type=int, default=None,
                         help="extra time-slice stride for surface.csv")

    p_sweep = sub.add_parser("sweep-r", help="solve per interest rate, one boundary CSV each")
    common(p_sweep)
    p_sweep.add_argument("--rates", required=True, help="comma-separated annual rates, e.g. 0.025,0.035")

    p_sim = sub.add_parser("simulate", help="forward wealth trajectories from initial wealths")
    common(p_sim)
    p_sim.add_argument("--w0", required=True, help="comma-separated initial wealths (income multiples)")

    p_unc = sub.add_parser("uncommitted", help="trace the uncommitted curve and report w~")
    common(p_unc)
    p_unc.add_argument("--retire-ages", required=True,
                       help="comma-separated retirement times in model years since start")
    p_unc.add_argument("--coalesce-tol", type=float, default=0.01,
                       help="relative coalescence tolerance at t=0")

    p_cal = sub.add_parser("calibrate", help="search the leisure endowment against target bands")
    common(p_cal)
    p_cal.add_argument("--age-band", default="55,65", help="target retirement age band, lo,hi")
    p_cal.add_argument("--wealth-band", default="7,12", help="target retirement wealth band, lo,hi")
    p_cal.add_argument("--start-wealth", type=float, default=1.0)
    p_cal.add_argument("--lbar-range", default="6.0,7.0", help="search interval for l_bar, lo,hi")
    p_cal.add_argument("--candidates", type=int, default=11, help="scan points over the range")
    p_cal.add_argument("--no-verify", action="store_true",
                       help="skip re-verifying the winner on the fine grid")
    return parser


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _load(args) -> ModelParams:
    if args.config:
        return load_params(args.config)
    return default_params()


def _grid(args, params: ModelParams, parser: argparse.ArgumentParser) -> Grid:
    if getattr(args, "fine_grid", False):
        if args.dt is not None or args.dy is not None:
            parser.error("--fine-grid conflicts with --dt/--dy")
        _say(args, "fine grid selected (dt=0.0005, dy=0.01): expect a solve roughly "
                   "10x slower than the default grid")
        return Grid.fine(params)
    dt = args.dt if args.dt is not None else 1e-3
    dy = args.dy if args.dy is not None else 2e-2
    return Grid.build(params, dt=dt, dy=dy)


def _boundary_stride(grid: Grid) -> int:
    return max(1, (grid.n_t - 1) // 20000)


def _manifest(out_dir: str, payload: dict) -> None:
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _solve_both(params: ModelParams, grid: Grid, args):
    _say(args, f"solving the post-retirement coefficient on {grid.n_t} nodes")
    fcurve = solve_f(params, n_steps=grid.n_t - 1)
    _say(args, f"marching the working-phase HJB ({grid.n_t} x {grid.n_y} nodes)")
    surface, boundary = solve_pde(params, grid, fcurve)
    _say(args, f"done in {surface.diagnostics.runtime_seconds:.1f} s; "
               f"boundary at start: {boundary.at(0.0):.4f}")
    return fcurve, surface, boundary


def _sweep_worker(payload):
    params, grid, rate = payload
    p = params.evolve(r=rate)
    fcurve = solve_f(p, n_steps=grid.n_t - 1)
    surface, boundary = solve_pde(p, grid, fcurve)
    return rate, boundary, surface.diagnostics.summary()


def cmd_solve(args, params, grid, out_dir, outputs) -> dict:
    fcurve, surface, boundary = _solve_both(params, grid, args)
    stride = _boundary_stride(grid)
    fpath = os.path.join(out_dir, "fcurve.csv")
    exports.write_fcurve_csv(fpath, fcurve, stride=stride)
    outputs.append(fpath)
    bpath = os.path.join(out_dir, "boundary.csv")
    exports.write_boundary_csv(bpath, boundary, stride=stride)
    outputs.append(bpath)
    t_stride = args.surface_stride or max(1, len(surface.times) // 101)
    y_stride = max(1, grid.n_y // 201)
    spath = os.path.join(out_dir, "surface.csv")
    exports.write_surface_csv(spath, surface, t_stride=t_stride, y_stride=y_stride)
    outputs.append(spath)
    dpath = os.path.join(out_dir, "diagnostics.txt")
    with open(dpath, "w", encoding="utf-8") as fh:
        fh.write(surface.diagnostics.summary() + "\n")
    outputs.append(dpath)
    return {"boundary_at_start": boundary.at(0.0),
            "diagnostics": surface.diagnostics.summary().splitlines()}


def cmd_sweep_r(args, params, grid, out_dir, outputs, parser) -> dict:
    rates = _parse_floats(args.rates, "--rates")
    if not rates:
        parser.error("--rates must list at least one rate")
    jobs = [(params, grid, r) for r in rates]
    workers = args.workers or min(len(jobs), os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    results.sort(key=lambda x: x[0])
    stride = _boundary_stride(grid)
    info = {}
    for rate, boundary, diag in results:
        path = os.path.join(out_dir, f"boundary_r{rate:g}.csv")
        exports.write_boundary_csv(path, boundary, stride=stride)
        outputs.append(path)
        info[f"{rate:g}"] = {"boundary_at_start": boundary.at(0.0)}
    return {"rates": info}


def cmd_simulate(args, params, grid, out_dir, outputs, parser) -> dict:
    w0s = _parse_floats(args.w0, "--w0")
    if not w0s:
        parser.error("--w0 must list at least one initial wealth")
    if any(w <= 0.0 for w in w0s):
        parser.error("--w0 values must be positive")
    fcurve, surface, boundary = _solve_both(params, grid, args)
    stride = _boundary_stride(grid)
    info = {}
    for w0 in w0s:
        traj = simulate(surface, boundary, fcurve, w0=w0)
        path = os.path.join(out_dir, f"trajectory_w{w0:g}.csv")
        exports.write_trajectory_csv(path, traj, stride=stride)
        outputs.append(path)
        info[f"{w0:g}"] = {
            "retirement_time": traj.retirement_time,
            "retirement_age": None if traj.retirement_time is None
            else params.x + traj.retirement_time,
            "final_wealth": float(traj.wealth[-1]),
        }
    return {"trajectories": info}


def cmd_uncommitted(args, params, grid, out_dir, outputs, parser) -> dict:
    ages = _parse_floats(args.retire_ages, "--retire-ages")
    if len(ages) < 2:
        parser.error("--retire-ages needs at least two model-year values")
    if any(not 0.0 < a < params.horizon for a in ages):
        parser.error(f"--retire-ages values must lie strictly inside (0, {params.horizon})")
    fcurve, surface, boundary = _solve_both(params, grid, args)
    curve = uncommitted_curve(surface, boundary, ages, coalesce_tol=args.coalesce_tol)
    path = os.path.join(out_dir, "uncommitted.csv")
    exports.write_uncommitted_csv(path, curve, params, stride=_boundary_stride(grid))
    outputs.append(path)
    _say(args, f"w~ = {curve.w_tilde:.5f} (spread {curve.spread:.3%})")
    return {"w_tilde": curve.w_tilde, "coalescence_spread": curve.spread}


def cmd_calibrate(args, params, grid, out_dir, outputs, parser) -> dict:
    age_band = _parse_floats(args.age_band, "--age-band")
    wealth_band = _parse_floats(args.wealth_band, "--wealth-band")
    lbar_range = _parse_floats(args.lbar_range, "--lbar-range")
    if len(age_band) != 2 or len(wealth_band) != 2 or len(lbar_range) != 2:
        parser.error("--age-band/--wealth-band/--lbar-range expect exactly two numbers")
    target = CalibrationTarget(
        start_age=params.x, start_wealth=args.start_wealth,
        age_band=tuple(age_band), wealth_band=tuple(wealth_band),
        search_interval=tuple(lbar_range))
    verify_grid = None
    if not args.no_verify:
        verify_grid = Grid.fine(params)
        _say(args, "winner will be re-verified on the fine grid (dt=0.0005, dy=0.01); "
                   "pass --no-verify to skip")
    workers = args.workers or min(args.candidates, os.cpu_count() or 1)
    result = calibrate_lbar(target, grid, params_base=params,
                            n_candidates=args.candidates,
                            verify_grid=verify_grid, max_workers=workers)
    path = os.path.join(out_dir, "calibration.csv")
    exports.write_calibration_csv(path, result)
    outputs.append(path)
    lo, hi = result.feasible_interval
    _say(args, f"feasible l_bar interval: [{lo:.4g}, {hi:.4g}]; "
               f"recommended {result.recommended:.4g} "
               f"(age {result.achieved.retirement_age}, wealth {result.achieved.retirement_wealth})")
    payload = {
        "feasible_interval": [lo, hi],
        "recommended": result.recommended,
        "achieved": dataclasses.asdict(result.achieved),
    }
    if result.verified is not None:
        payload["verified"] = dataclasses.asdict(result.verified)
    return payload


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        params = _load(args)
        grid = _grid(args, params, parser)
    except (ConfigError, ModelParamError, GridError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    outputs: list[str] = []
    started = time.perf_counter()
    manifest = {
        "command": args.command,
        "params": dataclasses.asdict(params),
        "grid": {**dataclasses.asdict(grid), "dy": grid.dy, "nu_allow": grid.nu_allow,
                 "w_min": grid.w_min, "w_cutoff": grid.w_cutoff},
        "outputs": outputs,
        "status": "error",
        "error": None,
    }

    try:
        if args.command == "solve":
            extra = cmd_solve(args, params, grid, out_dir, outputs)
        elif args.command == "sweep-r":
            extra = cmd_sweep_r(args, params, grid, out_dir, outputs, parser)
        elif args.command == "simulate":
            extra = cmd_simulate(args, params, grid, out_dir, outputs, parser)
        elif args.command == "uncommitted":
            extra = cmd_uncommitted(args, params, grid, out_dir, outputs, parser)
        elif args.command == "calibrate":
            extra = cmd_calibrate(args, params, grid, out_dir, outputs, parser)
        else:  # pragma: no cover - argparse enforces the choices
            parser.error(f"unknown command {args.command}")
        manifest.update(extra)
        manifest["status"] = "ok"
        code = EXIT_OK
    except (SolverError, CoalescenceError) as exc:
        exports.remove_if_exists(outputs)
        outputs.clear()
        manifest["error"] = str(exc)
        print(f"solver error: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
    except CalibrationError as exc:
        manifest["error"] = str(exc)
        if exc.closest is not None:
            manifest["closest_miss"] = dataclasses.asdict(exc.closest)
        print(f"calibration infeasible: {exc}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    except (ConfigError, ModelParamError, GridError, ValueError) as exc:
        exports.remove_if_exists(outputs)
        outputs.clear()
        manifest["error"] = str(exc)
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    finally:
        manifest["outputs"] = [os.path.basename(p) for p in outputs]
        manifest["duration_s"] = round(time.perf_counter() - started, 3)
        _manifest(out_dir, manifest)

    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
