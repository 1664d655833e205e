"""Closest point functions: retractions whose Jacobian on the surface is the
tangent projector.

Three constructions are provided:

* ``levelset_cp_codim1`` retracts onto the zero set of a single level-set
  function by integrating the gradient-flow trajectory, reparametrized by
  the level label so the endpoint is hit exactly (no event detection);
* ``intrinsic_cp_step`` retracts within a codimension-one surface onto its
  intersection with a second zero set, using the projected gradient;
* ``euclidean_cp_curve`` projects onto the cylinder/paraboloid test curve in
  Euclidean distance by Newton iteration on the parametrization.

``compose_cp`` chains the first two into a retraction onto a codimension-2
intersection.  Closed forms for the sphere/plane circle are included.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import geometry
from .errors import (
    DegenerateGradient,
    DegenerateTangentialGradient,
    NoConvergence,
    OffSurfaceStart,
    OnAxis,
)
from .geometry import LevelSetFn, LevelSetSurface, _as_points
from .ode import OdeSolveConfig, integrate_ensemble

__all__ = [
    "ClosestPointFunction",
    "OdeSolveConfig",
    "levelset_cp_codim1",
    "intrinsic_cp_step",
    "compose_cp",
    "codim1_cp_function",
    "intrinsic_cp_function",
    "levelset_composed_cp",
    "circle_cp",
    "circle_cp_hat",
    "circle_cp_function",
    "euclidean_cp_curve",
    "euclidean_cp_function",
    "CpCache",
    "cache_cp",
    "save_cp_table",
    "load_cp_table",
    "cp_table_to_csv",
]

_GRAD_FLOOR = 1e-12
_ONSURFACE_TOL = 1e-8
_DRIFT_TOL = 1e-9


@dataclass
class ClosestPointFunction:
    """A map from a band around ``surface`` onto ``surface``.

    ``mapper`` accepts and returns (n, 3) arrays.  ``validity`` is a
    predicate marking the points where the construction is defined;
    by default that is the band of the surface.
    """

    surface: LevelSetSurface
    kind: str  # closed_form | levelset_ode | euclidean_newton | composed
    mapper: Callable[[np.ndarray], np.ndarray]
    validity: Callable[[np.ndarray], np.ndarray] | None = None
    # (x, y=cp(x)) -> tangent of the preimage manifold at y; used by the
    # orthogonality check.  For flow constructions this is the trajectory
    # velocity at its endpoint.
    preimage_direction: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    label: str = ""

    def __call__(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        out = self.mapper(pts)
        return out[0] if single else out

    def is_valid(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        ok = (
            self.surface.in_band(pts)
            if self.validity is None
            else np.asarray(self.validity(pts), dtype=bool)
        )
        return ok[0] if single else ok

    def residual(self, x) -> np.ndarray:
        """Band distance of the image points (should be ~solver tolerance)."""
        return self.surface.band_distance(self(x))


# ---------------------------------------------------------------------------
# Level-set gradient-flow constructions
# ---------------------------------------------------------------------------


def _codim1_rhs(phi: LevelSetFn):
    def rhs(y):
        g = phi.gradient(y)
        gg = np.sum(g * g, axis=-1, keepdims=True)
        if np.any(gg < _GRAD_FLOOR**2):
            bad = int(np.argmin(gg))
            raise DegenerateGradient(
                f"|grad {phi.name}| < {_GRAD_FLOOR:g} at {y[bad]}"
            )
        return -g / gg

    return rhs


def _intrinsic_rhs(phi2: LevelSetFn, surface1: LevelSetFn):
    def rhs(y):
        g1 = surface1.gradient(y)
        n1 = g1 / np.linalg.norm(g1, axis=-1, keepdims=True)
        g2 = phi2.gradient(y)
        v = g2 - n1 * np.sum(n1 * g2, axis=-1, keepdims=True)
        vv = np.sum(v * v, axis=-1, keepdims=True)
        if np.any(vv < _GRAD_FLOOR**2):
            bad = int(np.argmin(vv))
            raise DegenerateTangentialGradient(
                f"projected gradient of {phi2.name} vanishes on "
                f"{surface1.name} at {y[bad]}"
            )
        return -v / vv

    return rhs


def levelset_cp_codim1(
    phi: LevelSetFn, x, cfg: OdeSolveConfig | None = None
) -> np.ndarray:
    """Retract ``x`` onto the zero set of ``phi`` along the gradient flow.

    The trajectory is integrated in the level label: the state moves from
    level ``phi(x)`` to level 0 over a parameter interval of exactly
    ``phi(x)``, so the endpoint lies on the zero set up to solver tolerance.
    Points already on the zero set are returned unchanged.
    """
    pts, single = _as_points(x)
    spans = np.asarray(phi.value(pts), dtype=float).reshape(len(pts))
    out = integrate_ensemble(_codim1_rhs(phi), pts, spans, cfg)
    return out[0] if single else out


def intrinsic_cp_step(
    phi2: LevelSetFn,
    surface1: LevelSetFn,
    z,
    cfg: OdeSolveConfig | None = None,
    start_tol: float = _ONSURFACE_TOL,
) -> np.ndarray:
    """Retract within the zero set of ``surface1`` onto the joint zero set.

    The velocity is the projected gradient of ``phi2``, tangential to the
    level sets of ``surface1``, so the trajectory stays on the start surface
    while the ``phi2`` level is driven to zero.
    """
    pts, single = _as_points(z)
    start_resid = np.abs(np.asarray(surface1.value(pts), dtype=float))
    if np.any(start_resid > start_tol):
        bad = int(np.argmax(start_resid))
        raise OffSurfaceStart(
            f"start point {pts[bad]} has |{surface1.name}| = "
            f"{start_resid[bad]:.3e} > {start_tol:.1e}"
        )
    spans = np.asarray(phi2.value(pts), dtype=float).reshape(len(pts))
    out = integrate_ensemble(_intrinsic_rhs(phi2, surface1), pts, spans, cfg)
    return out[0] if single else out


def codim1_cp_function(
    surface: LevelSetSurface, index: int = 0, cfg: OdeSolveConfig | None = None
) -> ClosestPointFunction:
    """Closest point function onto the single level set ``phis[index]``."""
    phi = surface.phis[index]
    single = LevelSetSurface((phi,), surface.band_tol, phi.name)

    def mapper(pts):
        return levelset_cp_codim1(phi, pts, cfg)

    def direction(pts, images):
        return _codim1_rhs(phi)(images)

    return ClosestPointFunction(
        surface=single,
        kind="levelset_ode",
        mapper=mapper,
        preimage_direction=direction,
        label=f"flow({phi.name})",
    )


def intrinsic_cp_function(
    surface: LevelSetSurface,
    base: int,
    target: int,
    cfg: OdeSolveConfig | None = None,
) -> ClosestPointFunction:
    """Intrinsic retraction from the ``base`` level set onto the intersection."""
    phi_b, phi_t = surface.phis[base], surface.phis[target]

    def mapper(pts):
        return intrinsic_cp_step(phi_t, phi_b, pts, cfg)

    def direction(pts, images):
        return _intrinsic_rhs(phi_t, phi_b)(images)

    return ClosestPointFunction(
        surface=surface,
        kind="levelset_ode",
        mapper=mapper,
        preimage_direction=direction,
        label=f"flow({phi_t.name} within {phi_b.name})",
    )


def compose_cp(
    first: ClosestPointFunction,
    second_intrinsic: ClosestPointFunction,
    cfg: OdeSolveConfig | None = None,
) -> ClosestPointFunction:
    """Chain a codimension-1 retraction with an intrinsic one.

    Floating point drift can push the intermediate point slightly off the
    first surface; when the drift exceeds ``1e-9`` one corrective
    codimension-1 solve is inserted before the intrinsic stage.
    """
    base_phi = first.surface.phis[0]

    def mapper(pts):
        z = first.mapper(pts)
        drift = np.abs(base_phi.value(z))
        bad = drift > _DRIFT_TOL
        if np.any(bad):
            z = np.array(z)
            z[bad] = levelset_cp_codim1(base_phi, z[bad], cfg)
        return second_intrinsic.mapper(z)

    return ClosestPointFunction(
        surface=second_intrinsic.surface,
        kind="composed",
        mapper=mapper,
        validity=first.validity,
        preimage_direction=second_intrinsic.preimage_direction,
        label=f"{second_intrinsic.label} o {first.label}",
    )


def levelset_composed_cp(
    surface: LevelSetSurface,
    order: Sequence[int] = (0, 1),
    cfg: OdeSolveConfig | None = None,
) -> ClosestPointFunction:
    """The two-stage retraction onto a codimension-2 intersection.

    ``order=(0, 1)`` retracts onto the zero set of ``phis[0]`` first and then
    intrinsically onto the curve; ``order=(1, 0)`` swaps the roles.
    """
    if surface.codim != 2:
        raise ValueError("composition needs a codimension-2 surface")
    a, b = order
    first = codim1_cp_function(surface, a, cfg)
    second = intrinsic_cp_function(surface, base=a, target=b, cfg=cfg)
    cpf = compose_cp(first, second, cfg)
    cpf.label = f"levelset[{surface.phis[a].name} first]"
    return cpf


# ---------------------------------------------------------------------------
# Closed forms for the sphere/plane circle
# ---------------------------------------------------------------------------

_AXIS_EPS2 = 1e-20


def _circle_closed_form(pts: np.ndarray) -> np.ndarray:
    r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
    if np.any(r2 < _AXIS_EPS2):
        raise OnAxis(f"point {pts[int(np.argmin(r2))]} lies on the x3-axis")
    scale = 0.5 * np.sqrt(3.0) / np.sqrt(r2)
    out = np.empty_like(pts)
    out[:, 0] = scale * pts[:, 0]
    out[:, 1] = scale * pts[:, 1]
    out[:, 2] = 0.5
    return out


def circle_cp(x) -> np.ndarray:
    """Closed-form retraction onto the sphere/plane circle (sphere first).

    Both stages have explicit solutions whose composition is
    ``(sqrt(3)/2) (x1, x2) / sqrt(x1^2 + x2^2)`` at height ``1/2``.
    """
    pts, single = _as_points(x)
    out = _circle_closed_form(pts)
    return out[0] if single else out


def circle_cp_hat(x) -> np.ndarray:
    """Plane-first route onto the circle; identical to ``circle_cp``."""
    return circle_cp(x)


def _circle_preimage_direction(pts: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Endpoint velocity of the in-sphere stage: the projected plane gradient
    # -P1 grad(phi2)/|...|^2 evaluated on the circle, which for the unit
    # sphere is (-x1 x3, -x2 x3, 1 - x3^2) up to scale.
    v = np.empty_like(y)
    v[:, 0] = -y[:, 0] * y[:, 2]
    v[:, 1] = -y[:, 1] * y[:, 2]
    v[:, 2] = 1.0 - y[:, 2] ** 2
    return -v


def circle_cp_function(band_tol: float = 0.5) -> ClosestPointFunction:
    """``circle_cp`` wrapped with the off-axis validity predicate."""
    surface = geometry.sphere_plane_circle(band_tol)

    def valid(pts):
        return pts[:, 0] ** 2 + pts[:, 1] ** 2 > _AXIS_EPS2

    return ClosestPointFunction(
        surface=surface,
        kind="closed_form",
        mapper=_circle_closed_form,
        validity=valid,
        preimage_direction=_circle_preimage_direction,
        label="circle closed form",
    )


# ---------------------------------------------------------------------------
# Euclidean closest point of the cylinder/paraboloid curve
# ---------------------------------------------------------------------------

_N_SEEDS = 64
_N_CANDIDATES = 3
_NEWTON_STEPS = 50
_GPRIME_TOL = 1e-12


def _distance_sq_derivs(pts: np.ndarray, theta: np.ndarray):
    """g' and g'' of g(theta) = |x - gamma(theta)|^2, elementwise."""
    gam = geometry.curve_point(theta)
    vel = geometry.curve_velocity(theta)
    acc = geometry.curve_acceleration(theta)
    diff = pts - gam
    gp = -2.0 * np.sum(diff * vel, axis=-1)
    gpp = 2.0 * np.sum(vel * vel, axis=-1) - 2.0 * np.sum(diff * acc, axis=-1)
    return gp, gpp


def _newton_minimize(pts: np.ndarray, seeds: np.ndarray, half_width: float):
    """Safeguarded Newton on g' within brackets around each seed.

    Falls back to bisection whenever the Newton step leaves the bracket or
    the local curvature is not positive.  Returns (theta, converged).
    """
    lo = seeds - half_width
    hi = seeds + half_width
    gp_lo, _ = _distance_sq_derivs(pts, lo)
    gp_hi, _ = _distance_sq_derivs(pts, hi)
    bracketed = (gp_lo < 0.0) & (gp_hi > 0.0)
    theta = seeds.copy()
    converged = np.zeros(seeds.shape, dtype=bool)
    for _ in range(_NEWTON_STEPS):
        gp, gpp = _distance_sq_derivs(pts, theta)
        converged |= np.abs(gp) < _GPRIME_TOL
        active = bracketed & ~converged
        if not np.any(active):
            break
        # shrink the bracket with the current sign of g'
        neg = active & (gp < 0.0)
        pos = active & (gp > 0.0)
        lo = np.where(neg, theta, lo)
        hi = np.where(pos, theta, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(gpp > 0.0, gp / gpp, np.inf)
        cand = theta - step
        inside = (cand > lo) & (cand < hi)
        theta = np.where(active & inside, cand, theta)
        bisect = active & ~inside
        theta = np.where(bisect, 0.5 * (lo + hi), theta)
    return theta, converged & bracketed


def euclidean_cp_curve(x, seeds: int = _N_SEEDS) -> np.ndarray:
    """Euclidean closest point on the cylinder/paraboloid curve.

    The squared distance along the curve is multimodal, so the minimizer is
    seeded from equispaced samples; the best few seeds are polished with a
    safeguarded Newton iteration and the global minimum is returned.
    """
    pts, single = _as_points(x)
    n = len(pts)
    theta_s = np.linspace(0.0, 2.0 * np.pi, seeds, endpoint=False)
    gam_s = geometry.curve_point(theta_s)  # (seeds, 3)
    out = np.empty_like(pts)
    chunk = 65536
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        p = pts[sl]
        d2 = np.sum((p[:, None, :] - gam_s[None, :, :]) ** 2, axis=-1)
        order = np.argsort(d2, axis=1)[:, :_N_CANDIDATES]
        seeds_k = theta_s[order]  # (m, k)
        p_rep = np.repeat(p[:, None, :], _N_CANDIDATES, axis=1)
        half = 2.0 * np.pi / seeds
        theta_k, ok = _newton_minimize(p_rep, seeds_k, half)
        # retry unconverged candidates once with a doubled bracket
        if not np.all(ok):
            retry = ~ok
            theta_r, ok_r = _newton_minimize(
                p_rep[retry][:, None, :].reshape(-1, 1, 3),
                seeds_k[retry].reshape(-1, 1),
                2.0 * half,
            )
            theta_k[retry] = theta_r.ravel()
            ok[retry] = ok_r.ravel()
        g_k = np.sum((p_rep - geometry.curve_point(theta_k)) ** 2, axis=-1)
        g_k[~ok] = np.inf
        if np.any(np.all(~ok, axis=1)):
            bad = int(np.argmax(np.all(~ok, axis=1)))
            raise NoConvergence(
                f"Newton projection failed from every seed for point {p[bad]}"
            )
        best = np.argmin(g_k, axis=1)
        theta_best = theta_k[np.arange(len(p)), best]
        out[sl] = geometry.curve_point(theta_best)
    return out[0] if single else out


def euclidean_cp_function(band_tol: float = 0.125) -> ClosestPointFunction:
    surface = geometry.cylinder_paraboloid_curve(band_tol)

    def direction(pts, images):
        return pts - images

    return ClosestPointFunction(
        surface=surface,
        kind="euclidean_newton",
        mapper=lambda pts: euclidean_cp_curve(pts),
        preimage_direction=direction,
        label="euclidean",
    )


# ---------------------------------------------------------------------------
# Per-grid caching and serialization
# ---------------------------------------------------------------------------


@dataclass
class CpCache:
    """Closest points of every band node, evaluated once and reused."""

    grid: "object"
    kind: str
    label: str
    points: np.ndarray  # (band_size, 3)
    residuals: np.ndarray  # (band_size,) band distance of the images

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if len(self.residuals) else 0.0


def cache_cp(grid, cpf: ClosestPointFunction) -> CpCache:
    """Evaluate ``cpf`` at every band node of ``grid``.

    Raises the underlying per-point error annotated with the band offset if
    any evaluation fails; callers rely on the cache covering the whole band.
    """
    pts = grid.points
    if len(pts) == 0:
        return CpCache(grid, cpf.kind, cpf.label, pts.copy(), np.zeros(0))
    valid = cpf.is_valid(pts)
    if not np.all(valid):
        bad = int(np.argmin(valid))
        raise ValueError(
            f"band offset {bad} at {pts[bad]} is outside the validity region "
            f"of {cpf.label or cpf.kind}"
        )
    try:
        images = cpf(pts)
    except Exception as exc:
        raise type(exc)(f"{exc} (while caching {cpf.label or cpf.kind})") from exc
    resid = cpf.surface.band_distance(images)
    return CpCache(grid, cpf.kind, cpf.label, images, resid)


_MAGIC = b"CPTBL1\n"


def save_cp_table(path, cache: CpCache) -> None:
    """Write a cache as a small self-describing binary file.

    Layout: magic line, a JSON header line (grid spec, kind, label, count),
    then ``3 * band_size`` little-endian float64 closest point coordinates.
    """
    grid = cache.grid
    header = {
        "kind": cache.kind,
        "label": cache.label,
        "count": int(len(cache.points)),
        "box_lo": [float(v) for v in grid.box_lo],
        "box_hi": [float(v) for v in grid.box_hi],
        "dims": [int(v) for v in grid.dims],
        "band_tol": float(grid.band_tol),
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(cache.points.astype("<f8").tobytes())


def load_cp_table(path) -> tuple[dict, np.ndarray]:
    """Read back a table written by :func:`save_cp_table`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a closest point table")
        header = json.loads(fh.readline().decode())
        body = fh.read()
    count = header["count"]
    expected = count * 3 * 8
    if len(body) != expected:
        raise ValueError(f"{path}: body has {len(body)} bytes, expected {expected}")
    pts = np.frombuffer(body, dtype="<f8").reshape(count, 3).copy()
    return header, pts


def cp_table_to_csv(path, cache: CpCache) -> None:
    """Human-readable dump: band index triple, closest point, residual."""
    grid = cache.grid
    with open(path, "w") as fh:
        fh.write("i,j,k,cp_x,cp_y,cp_z,residual\n")
        for ijk, p, r in zip(grid.band_ijk, cache.points, cache.residuals):
            fh.write(
                f"{ijk[0]},{ijk[1]},{ijk[2]},"
                f"{p[0]!r},{p[1]!r},{p[2]!r},{r!r}\n"
            )
