"""Analytic level-set descriptions of embedded surfaces and curves.

A surface ``S`` of codimension ``m`` in R^3 is described as the common zero
set of ``m`` scalar functions ``phi_j`` with nonvanishing, linearly
independent gradients on a band around ``S``.  This module provides the
generic machinery (normals, tangent projectors, tangent field of a curve)
plus the two concrete geometries used throughout the test suite:

* a circle of radius sqrt(3)/2, the intersection of the unit sphere with
  the plane ``x3 = 1/2``;
* a closed space curve, the intersection of the cylinder
  ``x2^2 + x3^2 = 1`` with the parabolic sheet ``x3 = x1^2``.

All operations are pure functions of immutable inputs and accept either a
single point of shape ``(3,)`` or a batch of shape ``(n, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateGradient, OffSurface, RankDeficient

__all__ = [
    "LevelSetFn",
    "LevelSetSurface",
    "normal_matrix",
    "tangent_projector",
    "tangent_field",
    "sphere_level_set",
    "plane_level_set",
    "cylinder_level_set",
    "paraboloid_level_set",
    "sphere_plane_circle",
    "cylinder_paraboloid_curve",
    "curve_point",
    "curve_velocity",
    "curve_acceleration",
    "curve_speed",
    "theta_of_point",
]

_GRAD_EPS = 1e-14
_COND_LIMIT = 1e12


def _as_points(x) -> tuple[np.ndarray, bool]:
    """Return ``(points, was_single)`` with points of shape (n, 3)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected (3,) or (n, 3) points, got shape {arr.shape}")
    return arr, False


@dataclass(frozen=True)
class LevelSetFn:
    """One scalar level-set function with (optionally analytic) derivatives.

    ``func`` maps (n, 3) points to (n,) values.  ``grad`` maps (n, 3) points
    to (n, 3) gradients; when omitted, a central finite-difference fallback
    with step ``fd_step`` is used.  ``hess`` is optional and only consulted
    by tests.
    """

    func: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "phi"
    fd_step: float = 1e-5

    def value(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        v = np.asarray(self.func(pts), dtype=float).reshape(len(pts))
        return v[0] if single else v

    def gradient(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        if self.grad is not None:
            g = np.asarray(self.grad(pts), dtype=float).reshape(len(pts), 3)
        else:
            g = np.empty((len(pts), 3))
            h = self.fd_step
            for axis in range(3):
                e = np.zeros(3)
                e[axis] = h
                g[:, axis] = (
                    np.asarray(self.func(pts + e)) - np.asarray(self.func(pts - e))
                ) / (2.0 * h)
        return g[0] if single else g


@dataclass(frozen=True)
class LevelSetSurface:
    """A surface given as the proper intersection of level sets.

    ``band_tol`` is the half width of the band in units of the combined
    residual ``sqrt(sum_j phi_j^2)``, which stands in for Euclidean distance
    throughout.
    """

    phis: tuple[LevelSetFn, ...]
    band_tol: float = 0.125
    name: str = "surface"

    def __post_init__(self):
        if not 1 <= len(self.phis) <= 2:
            raise ValueError("only codimension 1 and 2 are supported")
        if self.band_tol <= 0.0:
            raise ValueError("band_tol must be positive")

    @property
    def codim(self) -> int:
        return len(self.phis)

    @property
    def dim(self) -> int:
        return 3 - self.codim

    def residuals(self, x) -> np.ndarray:
        """Stacked values ``phi_j(x)`` with shape (..., m)."""
        pts, single = _as_points(x)
        vals = np.stack([p.value(pts) for p in self.phis], axis=-1)
        return vals[0] if single else vals

    def band_distance(self, x) -> np.ndarray:
        """The residual norm ``sqrt(sum_j phi_j^2)`` used for banding."""
        pts, single = _as_points(x)
        d = np.sqrt(np.sum(self.residuals(pts) ** 2, axis=-1))
        return d[0] if single else d

    def in_band(self, x) -> np.ndarray:
        return self.band_distance(x) <= self.band_tol

    def gradients(self, x) -> np.ndarray:
        """Stacked gradients with shape (..., m, 3)."""
        pts, single = _as_points(x)
        g = np.stack([p.gradient(pts) for p in self.phis], axis=-2)
        return g[0] if single else g

    def rescaled(self, f, f_name="f") -> "LevelSetSurface":
        """The same geometry with every phi_j replaced by f(phi_j).

        ``f`` must be smooth and strictly increasing with derivative
        ``fprime``; the zero sets (and hence the surface) are unchanged.
        """
        f_fn, fprime = f
        new = []
        for p in self.phis:
            grad = None
            if p.grad is not None:
                grad = _rescaled_grad(p, f_fn, fprime)
            new.append(
                LevelSetFn(
                    func=_rescaled_func(p, f_fn),
                    grad=grad,
                    name=f"{f_name}({p.name})",
                )
            )
        return LevelSetSurface(tuple(new), self.band_tol, f"{f_name}({self.name})")


def _rescaled_func(p, f_fn):
    return lambda x: f_fn(p.value(x))


def _rescaled_grad(p, f_fn, fprime):
    return lambda x: fprime(p.value(x))[..., None] * p.gradient(x)


def normal_matrix(surface: LevelSetSurface, x) -> np.ndarray:
    """Unit normals of the individual level sets, stacked as columns.

    Returns shape (..., 3, m) where column ``j`` is parallel to the gradient
    of ``phi_j`` at ``x``.
    """
    pts, single = _as_points(x)
    g = surface.gradients(pts)  # (n, m, 3)
    norms = np.linalg.norm(g, axis=-1)
    if np.any(norms < _GRAD_EPS):
        idx = np.argwhere(norms < _GRAD_EPS)[0]
        raise DegenerateGradient(
            f"gradient of {surface.phis[idx[1]].name} vanishes at "
            f"{pts[idx[0]]}"
        )
    cols = g / norms[..., None]
    out = np.swapaxes(cols, -1, -2)  # (n, 3, m)
    return out[0] if single else out


def tangent_projector(surface: LevelSetSurface, x) -> np.ndarray:
    """Orthogonal projector onto the tangent space, ``I - N N^+``."""
    pts, single = _as_points(x)
    nmat = normal_matrix(surface, pts)  # (n, 3, m)
    if surface.codim == 1:
        n = nmat[..., 0]
        proj = np.eye(3) - n[..., :, None] * n[..., None, :]
    else:
        gram = np.einsum("nij,nik->njk", nmat, nmat)  # (n, 2, 2)
        det = gram[:, 0, 0] * gram[:, 1, 1] - gram[:, 0, 1] * gram[:, 1, 0]
        trace = gram[:, 0, 0] + gram[:, 1, 1]
        # 2x2 condition estimate via eigenvalue bounds of the Gram matrix
        disc = np.sqrt(np.maximum(trace**2 - 4.0 * det, 0.0))
        lam_max = 0.5 * (trace + disc)
        lam_min = 0.5 * (trace - disc)
        bad = lam_min <= lam_max / _COND_LIMIT
        if np.any(bad):
            raise RankDeficient(
                f"normal directions numerically dependent at {pts[np.argmax(bad)]}"
            )
        inv = np.empty_like(gram)
        inv[:, 0, 0] = gram[:, 1, 1]
        inv[:, 1, 1] = gram[:, 0, 0]
        inv[:, 0, 1] = -gram[:, 0, 1]
        inv[:, 1, 0] = -gram[:, 1, 0]
        inv /= det[:, None, None]
        pseudo = np.einsum("njk,nik->nji", inv, nmat)  # N^+ = (N^T N)^-1 N^T
        proj = np.eye(3) - np.einsum("nij,njk->nik", nmat, pseudo)
    return proj[0] if single else proj


def tangent_field(surface: LevelSetSurface, x) -> np.ndarray:
    """Unit tangent of a codimension-2 curve, oriented along
    ``-grad(phi_1) x grad(phi_2)``."""
    if surface.codim != 2:
        raise ValueError("tangent_field needs a codimension-2 surface")
    pts, single = _as_points(x)
    g = surface.gradients(pts)
    cross = np.cross(g[..., 0, :], g[..., 1, :])
    norms = np.linalg.norm(cross, axis=-1)
    if np.any(norms < _GRAD_EPS):
        raise DegenerateGradient(
            f"level-set gradients parallel at {pts[np.argmax(norms < _GRAD_EPS)]}"
        )
    t = -cross / norms[..., None]
    return t[0] if single else t


# ---------------------------------------------------------------------------
# Concrete level sets
# ---------------------------------------------------------------------------


def sphere_level_set() -> LevelSetFn:
    """phi(x) = |x|^2 - 1, zero on the unit sphere."""
    return LevelSetFn(
        func=lambda x: np.sum(x * x, axis=-1) - 1.0,
        grad=lambda x: 2.0 * x,
        name="sphere",
    )


def plane_level_set(height: float = 0.5) -> LevelSetFn:
    """phi(x) = x3 - height, zero on a horizontal plane."""
    def grad(x):
        g = np.zeros_like(x)
        g[..., 2] = 1.0
        return g

    return LevelSetFn(
        func=lambda x: x[..., 2] - height,
        grad=grad,
        name="plane",
    )


def cylinder_level_set() -> LevelSetFn:
    """phi(x) = 1 - x2^2 - x3^2, zero on a cylinder along the x1-axis."""
    def grad(x):
        g = np.zeros_like(x)
        g[..., 1] = -2.0 * x[..., 1]
        g[..., 2] = -2.0 * x[..., 2]
        return g

    return LevelSetFn(
        func=lambda x: 1.0 - x[..., 1] ** 2 - x[..., 2] ** 2,
        grad=grad,
        name="cylinder",
    )


def paraboloid_level_set() -> LevelSetFn:
    """phi(x) = x3 - x1^2, zero on a parabolic sheet."""
    def grad(x):
        g = np.zeros_like(x)
        g[..., 0] = -2.0 * x[..., 0]
        g[..., 2] = 1.0
        return g

    return LevelSetFn(
        func=lambda x: x[..., 2] - x[..., 0] ** 2,
        grad=grad,
        name="paraboloid",
    )


def sphere_plane_circle(band_tol: float = 0.125) -> LevelSetSurface:
    """Circle of radius sqrt(3)/2 at height 1/2: unit sphere cut by a plane."""
    return LevelSetSurface(
        (sphere_level_set(), plane_level_set(0.5)), band_tol, "sphere-plane circle"
    )


def cylinder_paraboloid_curve(band_tol: float = 0.125) -> LevelSetSurface:
    """Closed space curve: unit cylinder cut by the sheet ``x3 = x1^2``."""
    return LevelSetSurface(
        (cylinder_level_set(), paraboloid_level_set()),
        band_tol,
        "cylinder-paraboloid curve",
    )


# ---------------------------------------------------------------------------
# Parametrization of the cylinder/paraboloid curve
# ---------------------------------------------------------------------------
#
# gamma(theta) = (cos t, sin t * sqrt(1 + cos^2 t), cos^2 t) satisfies both
# level-set equations identically:  x2^2 + x3^2 = sin^2(1+cos^2) + cos^4
# = sin^2 + cos^2 (sin^2 + cos^2) = 1  and  x3 = x1^2.


def curve_point(theta) -> np.ndarray:
    """Point on the cylinder/paraboloid curve at angle ``theta``."""
    t = np.asarray(theta, dtype=float)
    c, s = np.cos(t), np.sin(t)
    w = np.sqrt(1.0 + c * c)
    return np.stack([c, s * w, c * c], axis=-1)


def curve_velocity(theta) -> np.ndarray:
    """d(gamma)/d(theta)."""
    t = np.asarray(theta, dtype=float)
    c, s = np.cos(t), np.sin(t)
    w = np.sqrt(1.0 + c * c)
    wp = -s * c / w
    return np.stack([-s, c * w + s * wp, -2.0 * s * c], axis=-1)


def curve_acceleration(theta) -> np.ndarray:
    """d^2(gamma)/d(theta)^2 (used by the Newton projection)."""
    t = np.asarray(theta, dtype=float)
    c, s = np.cos(t), np.sin(t)
    w = np.sqrt(1.0 + c * c)
    wp = -s * c / w
    cos2t = c * c - s * s
    wpp = -cos2t / w - (s * c) ** 2 / w**3
    return np.stack([-c, -s * w + 2.0 * c * wp + s * wpp, -2.0 * cos2t], axis=-1)


def curve_speed(theta) -> np.ndarray:
    """|d(gamma)/d(theta)|."""
    return np.linalg.norm(curve_velocity(theta), axis=-1)


def theta_of_point(y, residual_tol: float = 1e-6) -> np.ndarray:
    """Invert the curve parametrization for points on (or very near) it.

    On the curve, ``y1 = cos(theta)`` and ``y2 = sin(theta) sqrt(1 + y1^2)``,
    so ``theta = atan2(y2 / sqrt(1 + y1^2), y1)`` normalized to [0, 2*pi).
    """
    pts, single = _as_points(y)
    resid = cylinder_paraboloid_curve().band_distance(pts)
    if np.any(resid > residual_tol):
        worst = int(np.argmax(resid))
        raise OffSurface(
            f"point {pts[worst]} has residual {resid[worst]:.3e} "
            f"> {residual_tol:.1e}"
        )
    theta = np.arctan2(pts[:, 1] / np.sqrt(1.0 + pts[:, 0] ** 2), pts[:, 0])
    theta = np.mod(theta, 2.0 * np.pi)
    return theta[0] if single else theta
