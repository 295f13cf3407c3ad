"""Command-line interface.

    gapflow asym eval      --dim D --i I --alpha A --eps E --at x,y[,z]
    gapflow asym residual  --dim D --i I --alpha A --eps-list E1,E2,...
    gapflow asym check     [--seed N]
    gapflow check          [--seed N] [--out checks.json]
    gapflow solve          --config cfg.json [--mode stokes|ns] [--out DIR]
    gapflow sweep          --config cfg.json --out DIR
    gapflow rates          --report DIR/sweep.json

Exit codes: 0 pass, 1 a criterion/check failed, 2 invalid input,
3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_CRITERION = 1
EXIT_INVALID = 2
EXIT_SOLVER = 3


def _parse_point(text: str, dim: int) -> np.ndarray:
    parts = [float(t) for t in text.split(",")]
    if len(parts) != dim:
        raise ValueError(f"expected {dim} coordinates, got {len(parts)}")
    return np.array(parts)


def _cmd_asym_eval(args) -> int:
    from .geometry import GapGeometry
    from .keller_fields import aux_field
    geom = GapGeometry.quadratic(args.eps, dimension=args.dim, kappa=args.kappa)
    f = aux_field(geom, args.i, args.alpha)
    x = _parse_point(args.at, args.dim)
    v = f.velocity(x)
    p = f.pressure(x)
    coords = ",".join(f"{c:.17g}" for c in x)
    print("dim,i,alpha," + ",".join(f"x{k+1}" for k in range(args.dim))
          + ",quantity,value")
    for k in range(args.dim):
        print(f"{args.dim},{args.i},{args.alpha},{coords},v{k+1},{v[k]:.17g}")
    print(f"{args.dim},{args.i},{args.alpha},{coords},p,{p:.17g}")
    return EXIT_OK


def _cmd_asym_residual(args) -> int:
    from .experiments import residual_ratio_grid
    eps_list = [float(t) for t in args.eps_list.split(",")]
    print("dim,i,alpha,eps,quantity,value")
    ratios = []
    for eps in eps_list:
        r = residual_ratio_grid(args.dim, args.i, args.alpha, eps)
        ratios.append(r)
        print(f"{args.dim},{args.i},{args.alpha},{eps:.17g},residual_ratio_max,{r:.17g}")
    if len(ratios) >= 2:
        spread = max(ratios) / max(min(ratios), 1e-300)
        print(f"{args.dim},{args.i},{args.alpha},nan,ratio_spread,{spread:.17g}")
        return EXIT_OK if spread < 2.0 else EXIT_CRITERION
    return EXIT_OK


def _cmd_check(args, field_only: bool = False) -> int:
    from .experiments import invariant_suite
    rep = invariant_suite(seed=args.seed)
    for e in rep.entries:
        print(f"{e.status:8s} {e.name} (worst {e.worst:.3g}) {e.detail}")
    if getattr(args, "out", None):
        with open(args.out, "w") as f:
            f.write(rep.to_json())
        print(f"wrote {args.out}")
    return EXIT_OK if rep.all_passed else EXIT_CRITERION


def _load_config(path):
    from .experiments import RunConfig
    with open(path) as f:
        return RunConfig.from_json(f.read())


def _cmd_solve(args) -> int:
    from .experiments import run_case
    from .mac_grid import export_field_csv
    cfg = _load_config(args.config)
    if args.mode:
        cfg.mode = {"ns": "navier_stokes"}.get(args.mode, args.mode)
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    eps = cfg.eps_list[0]
    row = run_case(cfg, eps)
    if row.error:
        print(f"solve failed: {row.error}", file=sys.stderr)
        return EXIT_SOLVER
    path = os.path.join(out_dir, f"solve_eps{eps:g}.json")
    with open(path, "w") as f:
        json.dump({k: getattr(row, k) for k in row.__dataclass_fields__},
                  f, indent=2, default=str)
    print(f"eps={eps:g} n={row.n} max_gap_gradient={row.max_gap_gradient:.6g} "
          f"pressure_oscillation={row.pressure_oscillation:.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .experiments import run_sweep, write_sweep_csv, write_sweep_json
    cfg = _load_config(args.config)
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)

    def progress(row):
        msg = (f"eps={row.eps:g} n={row.n} grad={row.max_gap_gradient:.5g} "
               f"posc={row.pressure_oscillation:.5g} t={row.runtime_seconds:.0f}s")
        if row.error:
            msg = f"eps={row.eps:g} FAILED: {row.error}"
        print(msg, flush=True)

    report = run_sweep(cfg, progress=progress)
    write_sweep_csv(report, os.path.join(out_dir, "sweep.csv"))
    write_sweep_json(report, os.path.join(out_dir, "sweep.json"))
    print(f"wrote {out_dir}/sweep.csv and sweep.json")
    for name, verdict in sorted(report.verdicts.items()):
        print(f"  {name}: {verdict}")
    for s in report.skips:
        print(f"  skip: {s}")
    if report.partial:
        return EXIT_SOLVER
    bad = [v for v in report.verdicts.values() if str(v).startswith("fail")]
    return EXIT_CRITERION if bad else EXIT_OK


def _cmd_rates(args) -> int:
    from .experiments import load_sweep_json, refit_report
    report = refit_report(load_sweep_json(args.report))
    for name, fr in sorted(report.fits.items()):
        print(f"fit {name}: slope={fr.slope:+.4f} r2={fr.r_squared:.4f} "
              f"n={fr.n_points}")
    for name, verdict in sorted(report.verdicts.items()):
        print(f"  {name}: {verdict}")
    for s in report.skips:
        print(f"  skip: {s}")
    bad = [v for v in report.verdicts.values() if str(v).startswith("fail")]
    return EXIT_CRITERION if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gapflow",
                                 description="thin-gap two-particle flow toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    asym = sub.add_parser("asym", help="closed-form gap field operations")
    asub = asym.add_subparsers(dest="subcommand", required=True)
    ev = asub.add_parser("eval", help="evaluate a gap field at a point")
    ev.add_argument("--dim", type=int, choices=(2, 3), required=True)
    ev.add_argument("--i", type=int, choices=(1, 2), required=True)
    ev.add_argument("--alpha", type=int, required=True)
    ev.add_argument("--eps", type=float, required=True)
    ev.add_argument("--at", type=str, required=True, help="x,y[,z]")
    ev.add_argument("--kappa", type=float, default=1.0)
    ev.set_defaults(fn=_cmd_asym_eval)
    rs = asub.add_parser("residual", help="normalized residual stability")
    rs.add_argument("--dim", type=int, choices=(2, 3), required=True)
    rs.add_argument("--i", type=int, choices=(1, 2), required=True)
    rs.add_argument("--alpha", type=int, required=True)
    rs.add_argument("--eps-list", type=str, required=True)
    rs.set_defaults(fn=_cmd_asym_residual)
    ck = asub.add_parser("check", help="field-level invariant checks")
    ck.add_argument("--seed", type=int, default=0)
    ck.set_defaults(fn=_cmd_check)

    ch = sub.add_parser("check", help="full invariant suite")
    ch.add_argument("--seed", type=int, default=0)
    ch.add_argument("--out", type=str, default=None)
    ch.set_defaults(fn=_cmd_check)

    so = sub.add_parser("solve", help="single-gap solve from a config")
    so.add_argument("--config", type=str, required=True)
    so.add_argument("--mode", type=str, choices=("stokes", "ns", "navier_stokes"),
                    default=None)
    so.add_argument("--out", type=str, default=None)
    so.set_defaults(fn=_cmd_solve)

    sw = sub.add_parser("sweep", help="gap-width sweep with rate fits")
    sw.add_argument("--config", type=str, required=True)
    sw.add_argument("--out", type=str, required=True)
    sw.set_defaults(fn=_cmd_sweep)

    ra = sub.add_parser("rates", help="refit rates from a sweep report")
    ra.add_argument("--report", type=str, required=True)
    ra.set_defaults(fn=_cmd_rates)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
