"""Command-line entry point: ``skt-morse <command> [options]``.

Commands
--------
diagram   trace the configured branch set and write the diagram files
continue  trace one named branch (``--branch``) and write its table and events
eig       spectrum and Morse index of a snapshot or of a branch state at ``--lambda``
limit     limiting problems: ls1, ls2, logistic, decomposition, decoupling
evolve    time-integrate from a snapshot or branch state and report the growth rate
snapshot  write the state of a branch at ``--lambda`` as CSV plus JSON sidecar

Exit status: 0 success, 2 partial (a branch stalled), 3 invalid
configuration, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import BRANCHES, load_config
from .continuation import point_at, spectrum_at
from .diagram import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_STALL, Tracer, run_diagram
from .errors import ConfigError, InputError, ParseError, SKTError, StallError
from .evolution import evolve, growth_rate, perturbed
from .limits import (
    decoupling_check,
    limiting_eigen_decomposition,
    scalar_limit_morse,
    solve_logistic,
    solve_ls1,
    solve_ls2,
)
from .model import BranchTag, Grid, SteadyState

log = logging.getLogger("skt_morse")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--lambda-max", type=float, dest="lambda_max")
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", type=Path, dest="output_dir")
    p.add_argument("--branches", help="comma-separated branch list")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skt-morse", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diagram", help="trace all configured branches")
    _common(p)

    p = sub.add_parser("continue", help="trace one branch")
    _common(p)
    p.add_argument("--branch", required=True, help=", ".join(BRANCHES))

    p = sub.add_parser("eig", help="spectrum and Morse index")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--snapshot", type=Path)
    src.add_argument("--branch")
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--full", action="store_true", help="dense full spectrum")

    p = sub.add_parser("limit", help="limiting problems")
    _common(p)
    p.add_argument("system", choices=("ls1", "ls2", "logistic", "decomposition", "decoupling"))
    p.add_argument("--lambda", type=float, dest="lam", required=True)
    p.add_argument("--j", type=int, default=2)
    p.add_argument("--orientation", type=int, choices=(1, -1), default=1)
    p.add_argument("--b", type=float, help="logistic coefficient (default b1)")

    p = sub.add_parser("evolve", help="time integration")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--snapshot", type=Path)
    src.add_argument("--branch")
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--perturb", type=float, default=1e-5, help="relative perturbation size")
    p.add_argument("--direction", choices=("unstable", "random"), default="unstable")
    p.add_argument("--window", type=float, nargs=2, default=(1e-4, 1e-2))

    p = sub.add_parser("snapshot", help="write a branch state")
    _common(p)
    p.add_argument("--branch", required=True)
    p.add_argument("--lambda", type=float, dest="lam", required=True)
    return parser


def _config(args):
    overrides = {
        "lambda_max": args.lambda_max, "n": args.n, "alpha": args.alpha,
        "output_dir": args.output_dir, "branches": args.branches, "seed": args.seed,
    }
    return load_config(args.config, overrides)


def _state_on(tracer: Tracer, name: str, lam: float):
    """Branch state at ``lam``; for segregation names ending in _plus/_minus one half is returned."""
    if lam is None:
        raise InputError("--lambda is required with --branch")
    stem = name
    base = name.rsplit("_", 1)[0] if name.endswith(("_plus", "_minus")) else name
    traced = tracer.trace(base, lambda_max=lam)
    if stem not in traced:
        stem = next(iter(traced))
    branch = traced[stem]
    return point_at(tracer.params, tracer.grid, branch, lam, tracer.config.controls.newton, tracer.config.m)


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_diagram(args, cfg):
    result = run_diagram(cfg)
    _emit({"status": result.status, "files": [str(f) for f in result.files], "errors": result.errors})
    return result.status


def cmd_continue(args, cfg):
    return cmd_diagram(args, dataclasses.replace(cfg, branches=(args.branch,)))


def _load_or_trace(args, cfg):
    if args.snapshot is not None:
        state, meta = io.load_snapshot(args.snapshot, with_meta=True)
        params = io.snapshot_params(meta) or cfg.model
        lam = args.lam if args.lam is not None else params.lam
        grid = io.snapshot_grid(meta)
        return params.with_lambda(lam), grid, state
    tracer = Tracer(cfg)
    point = _state_on(tracer, args.branch, args.lam)
    return tracer.params.with_lambda(point.lam), tracer.grid, point.state


def cmd_eig(args, cfg):
    params, grid, state = _load_or_trace(args, cfg)
    spec = spectrum_at(params, grid, state, params.lam, min(args.m, 2 * grid.n))
    out = {
        "lambda": params.lam,
        "branch_tag": state.tag.value,
        "morse_index": spec.morse_index,
        "critical": [complex(c).real for c in spec.critical],
        "tol_zero": spec.tol_zero,
        "eigenvalues": [[float(z.real), float(z.imag)] for z in spec.eigenvalues],
    }
    if args.full:
        from .model import assemble_linearization
        from .solvers import full_spectrum

        full = full_spectrum(assemble_linearization(params, grid, state))
        out["full_spectrum"] = [[float(z.real), float(z.imag)] for z in full]
    _emit(out)
    return EXIT_OK


def cmd_limit(args, cfg):
    grid = Grid(cfg.n, cfg.model.ell)
    out_dir = Path(cfg.output_dir)
    lam = args.lam
    m = cfg.model
    if args.system == "ls1":
        prof = solve_ls1(lam, grid)
        if prof is None:
            _emit({"lambda": lam, "solution": None})
            return EXIT_OK
        out_dir.mkdir(parents=True, exist_ok=True)
        path = io.write_series_csv(out_dir / f"ls1_{lam:g}.csv", ("x", "U"), (grid.nodes, prof.U))
        _emit({"lambda": lam, "sup_U": float(prof.U.max()), "file": str(path)})
    elif args.system == "logistic":
        b = args.b if args.b is not None else m.b1
        theta = solve_logistic(lam, b, grid)
        if theta is None:
            _emit({"lambda": lam, "solution": None})
            return EXIT_OK
        out_dir.mkdir(parents=True, exist_ok=True)
        path = io.write_series_csv(out_dir / f"logistic_{lam:g}.csv", ("x", "theta"), (grid.nodes, theta))
        _emit({"lambda": lam, "b": b, "sup_theta": float(theta.max()), "file": str(path)})
    elif args.system == "ls2":
        prof = solve_ls2(lam, args.j, args.orientation, grid, m.b1, m.c2)
        if prof is None:
            _emit({"lambda": lam, "j": args.j, "solution": None})
            return EXIT_OK
        out_dir.mkdir(parents=True, exist_ok=True)
        path = io.write_series_csv(out_dir / f"ls2_j{args.j}_{lam:g}.csv", ("x", "w"), (grid.nodes, prof.w))
        _emit({"lambda": lam, "j": args.j, "max_w": float(prof.w.max()), "min_w": float(prof.w.min()),
               "scalar_morse": scalar_limit_morse(lam, prof, grid), "file": str(path)})
    elif args.system == "decomposition":
        dec = limiting_eigen_decomposition(lam, grid)
        _emit({"lambda": lam, "negative": [float(x) for x in dec.negative],
               "max_mismatch": dec.max_mismatch, "min_weighted": float(np.min(dec.weighted))})
    else:
        rep = decoupling_check(lam, grid)
        _emit({"lambda": lam, "n": grid.n, "h_block": rep.h_block, "k_to_h": rep.k_to_h,
               "h_to_k": rep.h_to_k, "scale": rep.scale})
    return EXIT_OK


def cmd_evolve(args, cfg):
    params, grid, state = _load_or_trace(args, cfg)
    size = args.perturb * float(np.linalg.norm(state.z))
    if args.direction == "unstable":
        spec = spectrum_at(params, grid, state, params.lam, 8)
        d = spec.eigenvectors[:, 0].real
    else:
        d = np.random.default_rng(cfg.seed).standard_normal(2 * grid.n)
    start = perturbed(state, d, size)
    traj = evolve(params, grid, start, args.T, args.dt, reference=state)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = io.write_series_csv(out_dir / "trajectory.csv", ("t", "probe"), (traj.times, traj.probe))
    io.save_snapshot(out_dir / "final.csv", traj.states[-1], grid, params, extra={"t": float(traj.times[-1])})
    out = {"lambda": params.lam, "seed": cfg.seed, "file": str(path), "final_probe": float(traj.probe[-1])}
    try:
        out["growth_rate"] = growth_rate(traj, tuple(args.window))
    except SKTError as exc:
        out["growth_rate"] = None
        out["note"] = str(exc)
    _emit(out)
    return EXIT_OK


def cmd_snapshot(args, cfg):
    tracer = Tracer(cfg)
    point = _state_on(tracer, args.branch, args.lam)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = io.save_snapshot(out_dir / f"{args.branch}_{args.lam:g}.csv", point.state, tracer.grid,
                            tracer.params.with_lambda(point.lam), point.morse_index)
    _emit({"file": str(path), "lambda": point.lam, "morse_index": point.morse_index,
           "branch_tag": point.state.tag.value})
    return EXIT_OK


COMMANDS = {
    "diagram": cmd_diagram, "continue": cmd_continue, "eig": cmd_eig,
    "limit": cmd_limit, "evolve": cmd_evolve, "snapshot": cmd_snapshot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ParseError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StallError as exc:
        print(f"stalled: {exc}", file=sys.stderr)
        return EXIT_STALL
    except SKTError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
