"""Command-line interface: eigen, green, robin, extend, verify."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cs_extension as cx
from .green_kernel import export_green, export_robin, green_solve, robin_value
from .robin_calculus import ROUTES, evaluate_point, export_scan
from .scenarios import SCENARIOS, ConfigError, config_from_dict, emit_report, run_scenario
from .spectral_basis import eigenbasis, export_eigenfunctions, export_eigenvalues

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _points(text: str) -> list[list[float]]:
    return [_floats(p) for p in text.split(";") if p.strip()]


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config with snake_case keys")
    common.add_argument("--domain", choices=("rectangle", "ellipse", "interval"))
    common.add_argument("--extents", type=_floats, help="half extents, comma separated")
    common.add_argument("--s", type=_floats, help="fractional orders, comma separated")
    common.add_argument("--modes", type=int, help="modes per axis (tensor) or eigenpairs (grid)")
    common.add_argument("--grid", type=float, help="grid spacing")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--parallel", action="store_true")

    p = argparse.ArgumentParser(prog="fracrobin", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("eigen", parents=[common], help="eigenvalues and leading eigenfunctions")
    g = sub.add_parser("green", parents=[common], help="Green function at the grid nodes")
    g.add_argument("--source", type=_floats, required=True)
    r = sub.add_parser("robin", parents=[common], help="Robin function, gradient and Hessian")
    r.add_argument("--points", type=_points, required=True, help="'t1,t2;t1,t2;...'")
    r.add_argument("--routes", type=lambda v: tuple(v.split(",")), default=("spectral", "fd"))
    e = sub.add_parser("extend", parents=[common], help="extension of a Green function or eigenmodes")
    e.add_argument("--source", type=_floats)
    e.add_argument("--coeffs", type=_floats, help="eigen-coefficients a_1, a_2, ...")
    e.add_argument("--route", choices=("spectral", "fd"), default="spectral")
    v = sub.add_parser("verify", parents=[common], help="run a verification scenario")
    v.add_argument("scenario", choices=SCENARIOS)
    return p


def _config(args, scenario: str):
    data = {}
    if args.config is not None:
        data = json.loads(args.config.read_text())
    dom = dict(data.get("domain", {}))
    if args.domain:
        dom["kind"] = args.domain
    if args.extents:
        dom["half_extents"] = args.extents
    if args.grid:
        dom["spacing"] = args.grid
    data["domain"] = dom
    if args.s:
        data["s"] = args.s
    if args.modes:
        data["modes"] = args.modes
    if args.parallel:
        data["parallel"] = True
    data.pop("scenario", None)
    return config_from_dict(data, scenario)


def _setup(cfg):
    from .spectral_basis import build_domain

    domain, grid = build_domain(cfg.domain_spec)
    return domain, grid, eigenbasis(domain, grid, cfg.modes)


def _cylinder(cfg, grid, basis, s):
    c = cfg.cylinder
    return cx.make_cylinder(grid, basis.lambda_1, K=c.k, gamma=c.gamma, y_max=c.y_max, s=s)


def _run(args) -> int:
    cfg = _config(args, args.scenario if args.command == "verify" else "theorem1")
    args.out.mkdir(parents=True, exist_ok=True)
    if args.command == "verify":
        report = run_scenario(cfg)
        emit_report(report, args.format, args.out / f"{cfg.scenario}.{args.format}")
        n_fail = sum(not c.passed for c in report.checks)
        print(f"{cfg.scenario}: {'pass' if report.passed else 'FAIL'} "
              f"({len(report.checks) - n_fail}/{len(report.checks)} checks)")
        return EXIT_PASS if report.passed else EXIT_FAIL
    domain, grid, basis = _setup(cfg)
    if args.command == "eigen":
        export_eigenvalues(basis, args.out / "eigenvalues.csv")
        export_eigenfunctions(basis, grid, list(range(min(6, basis.n_modes))), args.out / "eigenfunctions.csv")
    elif args.command == "green":
        for s in cfg.s:
            export_green(green_solve(basis, args.source, s), args.out / f"green_s{s:g}.csv")
    elif args.command == "robin":
        bad = set(args.routes) - set(ROUTES)
        if bad:
            raise ConfigError(f"unknown routes {sorted(bad)}")
        for s in cfg.s:
            pts = [np.array(p) for p in args.points]
            export_robin([robin_value(basis, p, s) for p in pts], args.out / f"robin_s{s:g}.csv")
            cyl = _cylinder(cfg, grid, basis, s) if "boundary" in args.routes else None
            reps = [evaluate_point(basis, p, s, cfg.axis, args.routes, cyl) for p in pts]
            export_scan(reps, args.out / f"robin_derivatives_s{s:g}.csv")
    elif args.command == "extend":
        if (args.source is None) == (args.coeffs is None):
            raise ConfigError("give exactly one of --source or --coeffs")
        for s in cfg.s:
            cyl = _cylinder(cfg, grid, basis, s)
            fld = cx.extend(basis, s, cyl, coeffs=args.coeffs, source=args.source, route=args.route)
            cx.export_field(fld, args.out / f"extension_s{s:g}.csv")
            if fld.lateral is None and args.source is not None:
                cx.export_flux(cx.lateral_flux(fld), args.out / f"flux_s{s:g}.csv")
    return EXIT_PASS


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
