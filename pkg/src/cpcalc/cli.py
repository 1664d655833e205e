"""Command line front end: error-table sweeps, property checks, band dumps.

Subcommands
-----------
run     Execute advection/heat experiments over (h, cp, operator)
        combinations and write a CSV table plus a JSON manifest.
verify  Run the closest point property checks and write a JSON report.
band    Build a banded grid and dump it as CSV.

All computations are deterministic: identical flags produce byte-identical
outputs.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import solver, verify
from .band import band_to_csv, build_band
from .cpfn import cache_cp
from .geometry import (
    curve_point,
    cylinder_paraboloid_curve,
    tangent_projector,
)
from .reference import total_arc_length

_CP_ALIASES = {
    "cyl_first": "cyl_first",
    "par_first": "par_first",
    "euclid": "euclid",
    "levelset_cyl_first": "cyl_first",
    "levelset_par_first": "par_first",
    "euclidean": "euclid",
}


def _parse_cp_list(value: str) -> list[str]:
    if value == "all":
        return ["cyl_first", "par_first", "euclid"]
    out = []
    for item in value.split(","):
        item = item.strip()
        if item not in _CP_ALIASES:
            raise argparse.ArgumentTypeError(f"unknown cp choice {item!r}")
        out.append(_CP_ALIASES[item])
    return out


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--band-tol", type=float, default=0.125)
    p.add_argument("--ode-rtol", type=float, default=1e-12)
    p.add_argument("--ode-atol", type=float, default=1e-14)
    p.add_argument(
        "--seed-free",
        action="store_true",
        help="assert that no randomness is used (always true; kept for scripts)",
    )


def _cmd_run(args) -> int:
    h_list = [float(v) for v in args.h.split(",")]
    cps = _parse_cp_list(args.cp)
    if args.pde == "heat":
        operators = [args.operator] if args.operator else ["lap1", "lap2", "lap3"]
    else:
        operators = ["lf_advection"]
    configs = []
    for op in operators:
        for cp in cps:
            for h in sorted(h_list, reverse=True):
                configs.append(
                    solver.ExperimentConfig(
                        pde=args.pde,
                        cp_choice=cp,
                        operator=None if args.pde == "advection" else op,
                        h=h,
                        t_end=args.t_end,
                        band_tol=args.band_tol,
                        ode_rtol=args.ode_rtol,
                        ode_atol=args.ode_atol,
                    )
                )
    reports = []
    for cfg in configs:
        print(f"running {cfg.label()} ...", flush=True)
        rep = solver.run(cfg)
        print(
            f"  error={rep.linf_error:.6e}  steps={rep.steps}  "
            f"seconds={rep.seconds:.1f}",
            flush=True,
        )
        reports.append(rep)
    solver.reports_to_csv(args.out, reports)
    manifest = args.out + ".manifest.json"
    solver.run_manifest(manifest, configs, reports)
    if args.dat:
        _write_dat(args.dat, reports)
    print(f"wrote {args.out} and {manifest}")
    return 0


def _write_dat(path, reports):
    """Gnuplot-friendly error-vs-h columns, one block per (operator, cp)."""
    groups: dict[tuple, list] = {}
    for r in reports:
        groups.setdefault((r.pde, r.operator, r.cp_choice), []).append(r)
    with open(path, "w") as fh:
        for key in sorted(groups):
            fh.write(f"# {key[0]} {key[1]} {key[2]}\n")
            for r in sorted(groups[key], key=lambda r: -r.h):
                fh.write(f"{r.h!r} {r.linf_error!r}\n")
            fh.write("\n\n")


def _cmd_verify(args) -> int:
    rng = np.random.default_rng(0)
    n = args.samples
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    on_curve = curve_point(theta)
    offsets = rng.normal(size=(n, 3))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    off_curve = on_curve + 0.03 * offsets

    cpf = solver.make_cp_function(
        _CP_ALIASES[args.cp], ode_rtol=args.ode_rtol, ode_atol=args.ode_atol
    )
    surface = cpf.surface

    def u3(pts):
        return pts[:, 2]

    def grad_u3(pts):
        proj = tangent_projector(surface, pts)
        return proj[:, :, 2]

    def g_const(pts):
        return np.broadcast_to(np.array([0.3, -0.2, 0.7]), pts.shape)

    def div_zero(pts):
        return np.zeros(len(pts))

    results = [
        verify.check_jacobian_is_projector(cpf, on_curve),
        verify.check_gradient_principle(cpf, u3, grad_u3, on_curve),
        verify.check_divergence_principle(cpf, g_const, div_zero, on_curve),
        verify.check_orthogonality(cpf, off_curve),
        verify.check_idempotence(cpf, off_curve),
    ]
    verify.report_to_json(args.out, results)
    worst = max(results, key=lambda r: r.max_defect / r.budget)
    ok = all(r.passed for r in results)
    print(
        f"{len(results)} checks, "
        f"worst: {worst.check} defect={worst.max_defect:.3e} "
        f"budget={worst.budget:.0e} -> {'PASS' if ok else 'FAIL'}"
    )
    print(f"wrote {args.out}")
    return 0 if ok else 1


def _cmd_band(args) -> int:
    surface = cylinder_paraboloid_curve(args.tol)
    grid = build_band(
        surface,
        h=args.h_grid,
        dims=args.dims,
        band_tol=args.tol,
    )
    extra = {}
    if args.with_cp:
        cache = cache_cp(grid, solver.make_cp_function(_CP_ALIASES[args.with_cp]))
        from .interp import CpExtension, InterpScheme

        ext = CpExtension(grid, cache.points, InterpScheme("tricubic"))
        extra["interp_safe"] = ext.rows_within(grid.evolvable_mask)
    band_to_csv(args.out, grid, extra)
    print(json.dumps(grid.report()))
    print(f"wrote {args.out} ({grid.band_size} nodes)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cpcalc",
        description=(
            "Closest point method experiments on the cylinder/paraboloid "
            f"curve (arc length {total_arc_length():.6f})"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="reproduce error tables")
    p_run.add_argument("--pde", choices=("advection", "heat"), required=True)
    p_run.add_argument(
        "--operator", choices=("lap1", "lap2", "lap3"), default=None
    )
    p_run.add_argument("--cp", default="all", help="cp list or 'all'")
    p_run.add_argument("--h", required=True, help="comma list of mesh sizes")
    p_run.add_argument("--t-end", type=float, default=None)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--dat", default=None, help="optional gnuplot output")
    _add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_ver = sub.add_parser("verify", help="closest point property checks")
    p_ver.add_argument("--cp", default="cyl_first")
    p_ver.add_argument("--samples", type=int, default=100)
    p_ver.add_argument("--out", default="verify.json")
    _add_common(p_ver)
    p_ver.set_defaults(func=_cmd_verify)

    p_band = sub.add_parser("band", help="dump a banded grid")
    p_band.add_argument("--dims", type=int, default=None)
    p_band.add_argument("--h-grid", type=float, default=None)
    p_band.add_argument("--tol", type=float, default=0.125)
    p_band.add_argument("--with-cp", default=None, help="also mark interp-safe nodes")
    p_band.add_argument("--out", required=True)
    _add_common(p_band)
    p_band.set_defaults(func=_cmd_band)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
