"""Command-line front end: ``stokesmor validate|run|sweep|grid SCENARIO``.

Exit codes
----------
0  success (run: residual reached the tolerance)
1  malformed input: JSON parse error (with line/column), schema or usage error
2  invalid configuration: overlapping spheres, theta_max <= 1, generator failure
3  run stopped at the iteration budget
4  run diverged (the report is still written)
5  file could not be read or written
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import io
from .analysis import contraction_sweep, family_from_dict
from .errors import (DivergenceError, GenerationFailedError, OutputError,
                     OverlapError, SeparationError, StokesMORError)
from .fields import sample_grid
from .geometry import validate_config
from .reflections import SolverOptions, run

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_MAX_ITER = 3
EXIT_DIVERGED = 4
EXIT_IO = 5

OUT_ENV = "STOKESMOR_OUT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario JSON file")
    common.add_argument("--threads", type=int, default=None, metavar="N",
                        help="cap on worker threads for field evaluation")
    common.add_argument("--quad-order", type=int, default=None, metavar="K",
                        help="Lebedev order of the surface rule (overrides the scenario)")
    common.add_argument("--out", default=None, metavar="DIR",
                        help=f"output directory (default: ${OUT_ENV} or the current directory)")

    parser = _Parser(prog="stokesmor", description="Method of reflections for Stokes flow around spheres.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("validate", parents=[common], help="check separation and print geometry summary")
    p_run = sub.add_parser("run", parents=[common], help="iterate to convergence and write artifacts")
    p_run.add_argument("--timing", action="store_true", help="include per-iteration wall times in the report")
    sub.add_parser("sweep", parents=[common], help="contraction-rate sweep over phi0")
    p_grid = sub.add_parser("grid", parents=[common], help="sample velocity (and strain) on a grid")
    p_grid.add_argument("--field", default=None, metavar="PATH",
                        help="field JSON written by 'run'; solves inline when absent")
    return parser


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or ".")


def _load(args) -> io.Scenario:
    sc = io.load_scenario(args.scenario)
    if args.quad_order is not None:
        sc.options = SolverOptions.from_dict({**sc.options.to_dict(), "quad_order": args.quad_order})
    return sc


def _need_config(sc):
    if sc.config is None:
        raise _UsageError("scenario has no 'config' section")
    return sc.config


def _separation_problem(report) -> str | None:
    if report.overlapping:
        pairs = ", ".join(f"({i}, {j})" for i, j in report.overlapping)
        return f"overlapping particles: {pairs}"
    if report.n > 1 and not report.theta_max > 1.0:
        return f"configuration is not theta-separated: theta_max = {report.theta_max:.6g} <= 1"
    return None


def cmd_validate(args) -> int:
    sc = _load(args)
    rep = validate_config(_need_config(sc))
    sys.stdout.write(io.dumps(rep.to_dict()))
    problem = _separation_problem(rep)
    if problem:
        print(f"stokesmor: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _write_run(sc, out: Path, fld, report, validation, timing):
    doc = report.to_dict(include_timing=timing)
    doc["validation"] = validation.to_dict()
    if sc.description:
        doc["description"] = sc.description
    io.write_json(out / sc.outputs["report"], doc)
    io.write_csv(out / sc.outputs["residuals"], io.RESIDUAL_HEADER, io.residual_rows(report))
    if fld is not None:
        io.write_json(out / sc.outputs["field"], io.field_to_dict(fld))
    if fld is not None and sc.grid is not None:
        _write_grid(sc, out, fld)


def _write_grid(sc, out, fld):
    g = sc.grid
    sample = sample_grid(fld, g["lo"], g["hi"], g["shape"], strain=g.get("strain", False))
    io.atomic_write_text(out / sc.outputs["grid"], io.grid_csv_text(sample))


def _solve(sc):
    cfg = _need_config(sc)
    rep = validate_config(cfg)
    problem = _separation_problem(rep)
    if problem:
        raise OverlapError(problem) if rep.overlapping else SeparationError(problem)
    return cfg, rep


def cmd_run(args) -> int:
    sc = _load(args)
    cfg, validation = _solve(sc)
    out = _out_dir(args)
    try:
        fld, report = run(cfg, sc.ambient, sc.options)
    except DivergenceError as exc:
        _write_run(sc, out, exc.field, exc.report, validation, args.timing)
        print(f"stokesmor: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _write_run(sc, out, fld, report, validation, args.timing)
    return EXIT_OK if report.terminated == "tol" else EXIT_MAX_ITER


SWEEP_HEADER = ("phi0", "rho", "N", "seed", "theta_max", "iterations")


def sweep_csv_text(result) -> str:
    """Sweep rows; a ``diverged`` column is appended only when some point diverged."""
    header = list(SWEEP_HEADER)
    rows = [[p.phi0, p.rho, p.n, p.seed, p.theta_max, p.iterations] for p in result.points]
    if any(p.diverged for p in result.points):
        header.append("diverged")
        rows = [r + [int(p.diverged)] for r, p in zip(rows, result.points)]
    return io.csv_text(header, rows)


def cmd_sweep(args) -> int:
    sc = _load(args)
    if sc.sweep is None:
        raise _UsageError("scenario has no 'sweep' section")
    if not sc.sweep["phi0"]:
        raise _UsageError("sweep 'phi0' list is empty")
    family = family_from_dict(sc.sweep["family"])
    result = contraction_sweep(family, sc.sweep["phi0"], sc.options, sc.ambient, sc.seed)
    out = _out_dir(args)
    io.atomic_write_text(out / sc.outputs["sweep_csv"], sweep_csv_text(result))
    doc = result.to_dict()
    doc["family"] = sc.sweep["family"]
    doc["options"] = sc.options.to_dict()
    io.write_json(out / sc.outputs["sweep_json"], doc)
    return EXIT_OK


def cmd_grid(args) -> int:
    sc = _load(args)
    if sc.grid is None:
        raise _UsageError("scenario has no 'grid' section")
    if args.field:
        fld = io.field_from_dict(io.parse_json(io.read_text(args.field), args.field))
    else:
        cfg, _ = _solve(sc)
        try:
            fld, _ = run(cfg, sc.ambient, sc.options)
        except DivergenceError as exc:
            print(f"stokesmor: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
    _write_grid(sc, _out_dir(args), fld)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "sweep": cmd_sweep, "grid": cmd_grid}


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise _UsageError("--threads must be at least 1")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"stokesmor: usage error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OutputError as exc:
        print(f"stokesmor: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OverlapError, SeparationError, GenerationFailedError) as exc:
        print(f"stokesmor: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StokesMORError as exc:
        print(f"stokesmor: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
