"""The explicit closest point method time loop.

Each step evolves the band field with a spatial operator and restores the
closest-point-extension structure by interpolating the evolved field at the
cached closest points.  Because every closest point lies on the curve, the
values that influence future steps live on a thin set of nodes around the
curve; the solver computes exactly that closure each run and restricts the
per-step work to it (the values produced are identical to evolving the
whole band, node for node).  One full-band extension at the end supplies
the values on the reporting set for the error measurement.

Errors are measured in the maximum norm over the interpolation-safe nodes
against the parametrized reference solution evaluated at the angle of each
node's closest point.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import reference
from .band import BandedGrid, GridField, build_band, DEFAULT_BOX
from .cpfn import (
    CpCache,
    ClosestPointFunction,
    OdeSolveConfig,
    cache_cp,
    euclidean_cp_function,
    levelset_composed_cp,
)
from .errors import NaNDetected, StencilStarvation
from .geometry import cylinder_paraboloid_curve, theta_of_point
from .interp import CpExtension, InterpScheme
from .operators import make_operator

__all__ = [
    "ExperimentConfig",
    "ErrorReport",
    "initialize",
    "CpmStepper",
    "run",
    "reports_to_csv",
    "run_manifest",
]

CP_CHOICES = ("cyl_first", "par_first", "euclid", "custom")

# The evolve/extend iteration reads nodes up to ~12 mesh cells from the curve
# in band-distance units (interpolation stencil around an on-curve point plus
# two difference rings, worst case over stencil alignment).  The solver grid
# is deepened to this many cells when the requested band is thinner, so every
# reported node sees exactly the textbook scheme; the error is still measured
# over the requested band only.
MIN_DEPTH_CELLS = 16.0


@dataclass
class ExperimentConfig:
    """Declarative description of one convergence-table entry."""

    pde: str  # "advection" or "heat"
    cp_choice: str = "euclid"
    operator: str | None = None  # lap1 | lap2 | lap3 (heat only)
    h: float | None = None
    dims: int | None = None
    t_end: float | None = None
    box: tuple = DEFAULT_BOX
    band_tol: float = 0.125
    interp_kind: str | None = None
    ode_rtol: float = 1e-12
    ode_atol: float = 1e-14
    custom_cp: ClosestPointFunction | None = None

    def __post_init__(self):
        if self.pde == "diffusion":
            self.pde = "heat"
        if self.pde not in ("advection", "heat"):
            raise ValueError("pde must be 'advection' or 'heat'")
        if self.cp_choice not in CP_CHOICES:
            raise ValueError(f"cp_choice must be one of {CP_CHOICES}")
        if self.pde == "advection":
            self.operator = "lf_advection"
        elif self.operator not in ("lap1", "lap2", "lap3"):
            raise ValueError("heat runs need operator lap1, lap2 or lap3")
        if self.t_end is None:
            self.t_end = 1.0 if self.pde == "advection" else 0.1
        if self.t_end <= 0.0:
            raise ValueError("t_end must be positive")
        if self.interp_kind is None:
            self.interp_kind = (
                "weno_triquadratic" if self.pde == "advection" else "tricubic"
            )

    def tau(self, h: float) -> float:
        return 0.95 * h if self.pde == "advection" else 0.2 * h * h

    def label(self) -> str:
        return f"{self.pde}/{self.operator}/{self.cp_choice}/h={self.h or self.dims}"


@dataclass
class ErrorReport:
    pde: str
    operator: str
    cp_choice: str
    h: float
    linf_error: float
    band_size: int  # nodes within the requested band (the error set)
    grid_size: int  # nodes of the (possibly deepened) computational grid
    evolve_size: int
    report_size: int
    steps: int
    seconds: float
    cp_residual_max: float

    def row(self) -> dict:
        return {
            "experiment": self.pde,
            "cp": self.cp_choice,
            "operator": self.operator,
            "h": self.h,
            "error": self.linf_error,
            "steps": self.steps,
            "seconds": round(self.seconds, 3),
            "band_size": self.band_size,
            "report_size": self.report_size,
            "cp_residual_max": self.cp_residual_max,
        }


def make_cp_function(
    choice: str,
    surface=None,
    ode_rtol: float = 1e-12,
    ode_atol: float = 1e-14,
    custom: ClosestPointFunction | None = None,
) -> ClosestPointFunction:
    if surface is None:
        surface = cylinder_paraboloid_curve()
    cfg = OdeSolveConfig(rel_tol=ode_rtol, abs_tol=ode_atol)
    if choice == "cyl_first":
        return levelset_composed_cp(surface, (0, 1), cfg)
    if choice == "par_first":
        return levelset_composed_cp(surface, (1, 0), cfg)
    if choice == "euclid":
        return euclidean_cp_function(surface.band_tol)
    if choice == "custom":
        if custom is None:
            raise ValueError("cp_choice 'custom' needs a ClosestPointFunction")
        return custom
    raise ValueError(f"unknown cp choice {choice!r}")


def initialize(u0, cache: CpCache, grid: BandedGrid) -> GridField:
    """v_0 = u0 at the cached closest point of every band node.

    The values are copied so that initial data returning a view of the
    cached points (such as a coordinate column) cannot alias the cache.
    """
    return GridField(grid, np.array(u0(cache.points), dtype=float, copy=True))


@dataclass
class _ActiveSets:
    """Mutually consistent node sets for the evolve/extend iteration."""

    fresh: np.ndarray  # nodes whose value is re-extended every step
    evolve: np.ndarray  # nodes where the operator output is computable
    needed_w: np.ndarray  # evolve nodes actually read by any extension
    needed_v: np.ndarray  # fresh nodes actually read by the operator
    report: np.ndarray  # row indices of the error-measurement set


def _active_sets(
    grid: BandedGrid,
    ext: CpExtension,
    op,
    report_mask: np.ndarray | None = None,
) -> _ActiveSets:
    fresh = np.ones(grid.band_size, dtype=bool)
    for _ in range(grid.band_size):
        evolve = op.valid_rows(fresh)
        fresh_next = ext.rows_within(evolve)
        if np.array_equal(fresh_next, fresh):
            break
        fresh = fresh_next
    if not np.any(fresh):
        raise StencilStarvation(
            "no band node can be consistently re-extended; enlarge the band"
        )
    if report_mask is None:
        report_mask = fresh
    else:
        missing = int(np.count_nonzero(report_mask & ~fresh))
        if missing:
            raise StencilStarvation(
                f"{missing} requested nodes cannot be consistently re-extended; "
                "enlarge the band or deepen the grid"
            )
    report = np.where(report_mask)[0]

    needed_w = np.zeros(grid.band_size, dtype=bool)
    needed_w[ext.stencil_nodes(report)] = True
    if not np.all(evolve[needed_w]):
        raise StencilStarvation("extension stencil reaches non-evolvable nodes")
    while True:
        needed_v = op.reads(needed_w)
        if not np.all(fresh[needed_v]):
            raise StencilStarvation("operator reads a node that is never refreshed")
        grown = needed_w.copy()
        grown[ext.stencil_nodes(np.where(needed_v)[0])] = True
        if np.array_equal(grown, needed_w):
            break
        needed_w = grown
    return _ActiveSets(fresh, evolve, needed_w, needed_v, report)


class CpmStepper:
    """Reference (full-band) semantics of one evolve + extend step.

    Evolves wherever the operator has a complete stencil of refreshed
    values, re-extends every interpolation-safe node, and leaves NaN
    elsewhere.  ``run`` uses a work-trimmed equivalent; the values agree
    node for node on the refreshed set.
    """

    def __init__(
        self,
        grid: BandedGrid,
        cache: CpCache,
        operator,
        scheme: InterpScheme,
    ):
        self.grid = grid
        self.cache = cache
        self.ext = CpExtension(grid, cache.points, scheme)
        self.op = operator
        self.sets = _active_sets(grid, self.ext, operator)
        self.evolve_rows = np.where(self.sets.evolve)[0]
        self.bound = operator.bind(self.evolve_rows)
        self.step_count = 0

    @property
    def interp_safe(self) -> np.ndarray:
        return self.sets.fresh

    def step(self, v: GridField, tau: float) -> GridField:
        w = np.full(self.grid.band_size, np.nan)
        w[self.evolve_rows] = self.bound.evolve(v.values, tau)
        self.step_count += 1
        if not np.all(np.isfinite(w[self.evolve_rows])):
            raise NaNDetected(f"non-finite evolved value at step {self.step_count}")
        out = np.full(self.grid.band_size, np.nan)
        out[self.sets.report] = self.ext.apply_rows(self.sets.report, w)
        return GridField(self.grid, out)


def _step_schedule(t_end: float, tau: float) -> list[float]:
    n = int(np.ceil(t_end / tau - 1e-9))
    taus = [tau] * (n - 1)
    taus.append(t_end - tau * (n - 1))
    return taus


def _requested_h(config: ExperimentConfig) -> float:
    lo = np.asarray(config.box[0], dtype=float)
    hi = np.asarray(config.box[1], dtype=float)
    if config.h is not None:
        return float(config.h)
    nd = np.broadcast_to(np.asarray(config.dims, dtype=np.int64), (3,))
    return float(np.min((hi - lo) / (nd - 1)))


def run(config: ExperimentConfig) -> ErrorReport:
    """Execute one experiment and measure the final-time maximum error."""
    started = time.perf_counter()
    h_req = _requested_h(config)
    grid_tol = max(config.band_tol, MIN_DEPTH_CELLS * h_req)
    surface = cylinder_paraboloid_curve(grid_tol)
    grid = build_band(
        surface,
        box=config.box,
        h=config.h,
        dims=config.dims,
        band_tol=grid_tol,
    )
    core_mask = surface.band_distance(grid.points) <= config.band_tol
    if not np.any(core_mask):
        raise StencilStarvation("requested band contains no grid node")
    cpf = make_cp_function(
        config.cp_choice,
        surface,
        config.ode_rtol,
        config.ode_atol,
        config.custom_cp,
    )
    cache = cache_cp(grid, cpf)
    op = make_operator(config.operator, grid, surface, cache.points)
    scheme = InterpScheme(config.interp_kind)
    ext = CpExtension(grid, cache.points, scheme)
    sets = _active_sets(grid, ext, op, report_mask=core_mask)

    bound = op.bind(np.where(sets.needed_w)[0])
    applier = ext.make_applier(np.where(sets.needed_v)[0])
    needed_w_rows = np.where(sets.needed_w)[0]
    needed_v_rows = np.where(sets.needed_v)[0]

    if config.pde == "advection":
        u0 = lambda pts: pts[:, 2]
        ref = reference.advection_exact
    else:
        u0 = lambda pts: np.exp(4.0 * pts[:, 2]) / 50.0
        ref = reference.heat_exact

    h_eff = float(np.min(grid.h))
    taus = _step_schedule(config.t_end, config.tau(h_eff))
    v = initialize(u0, cache, grid).values
    w = np.full(grid.band_size, np.nan)
    for n, tau_n in enumerate(taus):
        w[needed_w_rows] = bound.evolve(v, tau_n)
        if not np.all(np.isfinite(w[needed_w_rows])):
            raise NaNDetected(f"non-finite evolved value at step {n + 1}")
        v[needed_v_rows] = applier.apply(w)

    v_report = ext.apply_rows(sets.report, w)
    theta = theta_of_point(cache.points[sets.report])
    exact = ref(config.t_end, theta)
    linf = float(np.max(np.abs(v_report - exact)))
    return ErrorReport(
        pde=config.pde,
        operator=config.operator,
        cp_choice=config.cp_choice,
        h=h_eff,
        linf_error=linf,
        band_size=int(np.count_nonzero(core_mask)),
        grid_size=grid.band_size,
        evolve_size=int(np.count_nonzero(sets.evolve)),
        report_size=len(sets.report),
        steps=len(taus),
        seconds=time.perf_counter() - started,
        cp_residual_max=float(cache.residuals[sets.report].max()),
    )


_CSV_HEADER = "# cpcalc error table v1\n"
_CSV_COLUMNS = (
    "experiment,cp,operator,h,error,order_vs_previous,steps,seconds,"
    "band_size,report_size,cp_residual_max"
)


def reports_to_csv(path, reports: list[ErrorReport]) -> None:
    """Write table rows with the observed order between consecutive h."""
    ordered = sorted(
        reports, key=lambda r: (r.pde, r.operator, r.cp_choice, -r.h)
    )
    with open(path, "w") as fh:
        fh.write(_CSV_HEADER)
        fh.write(_CSV_COLUMNS + "\n")
        prev = None
        for r in ordered:
            key = (r.pde, r.operator, r.cp_choice)
            order = ""
            if prev is not None and prev[0] == key:
                e_prev, h_prev = prev[1], prev[2]
                if r.linf_error > 0 and e_prev > 0 and r.h != h_prev:
                    order = (
                        f"{np.log(e_prev / r.linf_error) / np.log(h_prev / r.h):.3f}"
                    )
            prev = (key, r.linf_error, r.h)
            fh.write(
                f"{r.pde},{r.cp_choice},{r.operator},{r.h!r},{r.linf_error!r},"
                f"{order},{r.steps},{r.seconds:.3f},{r.band_size},"
                f"{r.report_size},{r.cp_residual_max:.3e}\n"
            )


def run_manifest(path, configs, reports) -> None:
    """Machine-readable record of a sweep (configs plus results)."""
    payload = {
        "version": 1,
        "runs": [
            {
                "config": {
                    "pde": c.pde,
                    "cp_choice": c.cp_choice,
                    "operator": c.operator,
                    "h": c.h,
                    "dims": c.dims,
                    "t_end": c.t_end,
                    "band_tol": c.band_tol,
                    "interp_kind": c.interp_kind,
                },
                "report": r.row(),
            }
            for c, r in zip(configs, reports)
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
