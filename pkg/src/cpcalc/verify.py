"""Numerical verification of the defining closest point properties.

Each check measures a scalar defect over a sample set:

* the finite-difference Jacobian at surface points against the tangent
  projector;
* the Cartesian gradient of a closest point extension against the known
  surface gradient;
* the Cartesian divergence of an extended vector field (tangential or not)
  against the known surface divergence;
* the angle between the preimage direction and the tangent plane at the
  image point (preimages must meet the surface orthogonally);
* idempotence of the map on off-surface points.

Derivative checks use central differences with a base step and a doubled
step; a defect that does not shrink when the step shrinks points at a
genuine violation rather than finite-difference error, so both values are
reported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cpfn import ClosestPointFunction
from .geometry import tangent_projector

__all__ = [
    "CheckResult",
    "check_jacobian_is_projector",
    "check_gradient_principle",
    "check_divergence_principle",
    "check_orthogonality",
    "check_idempotence",
    "report_to_json",
]

_FD_STEP = 1e-5

BUDGETS = {
    "jacobian_is_projector": 1e-6,
    "gradient_principle": 1e-6,
    "divergence_principle": 1e-5,
    "orthogonality": 1e-6,
    "idempotence": 1e-8,
}


@dataclass(frozen=True)
class CheckResult:
    check: str
    cp_kind: str
    max_defect: float
    coarse_defect: float  # same defect at a doubled difference step
    budget: float

    @property
    def passed(self) -> bool:
        return self.max_defect <= self.budget

    def row(self) -> dict:
        return {
            "check": self.check,
            "cp": self.cp_kind,
            "max_defect": self.max_defect,
            "coarse_defect": self.coarse_defect,
            "budget": self.budget,
            "pass": bool(self.passed),
        }


def _label(cpf: ClosestPointFunction) -> str:
    return cpf.label or cpf.kind


def _fd_jacobian(cpf, samples: np.ndarray, step: float) -> np.ndarray:
    """Central-difference Jacobian, batched into a single map evaluation."""
    n = len(samples)
    shifted = np.empty((6 * n, 3))
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = step
        shifted[2 * axis * n : (2 * axis + 1) * n] = samples + e
        shifted[(2 * axis + 1) * n : (2 * axis + 2) * n] = samples - e
    images = cpf(shifted)
    jac = np.empty((n, 3, 3))
    for axis in range(3):
        plus = images[2 * axis * n : (2 * axis + 1) * n]
        minus = images[(2 * axis + 1) * n : (2 * axis + 2) * n]
        jac[:, :, axis] = (plus - minus) / (2.0 * step)
    return jac


def check_jacobian_is_projector(
    cpf: ClosestPointFunction,
    samples: np.ndarray,
    fd_step: float = _FD_STEP,
    budget: float = BUDGETS["jacobian_is_projector"],
) -> CheckResult:
    """Frobenius distance of the FD Jacobian to the projector at on-surface
    samples."""
    proj = tangent_projector(cpf.surface, samples)

    def defect(step):
        jac = _fd_jacobian(cpf, samples, step)
        return float(np.max(np.linalg.norm(jac - proj, axis=(1, 2))))

    return CheckResult(
        "jacobian_is_projector",
        _label(cpf),
        defect(fd_step),
        defect(2.0 * fd_step),
        budget,
    )


def _fd_gradient(cpf, u, samples, step):
    n = len(samples)
    shifted = np.empty((6 * n, 3))
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = step
        shifted[2 * axis * n : (2 * axis + 1) * n] = samples + e
        shifted[(2 * axis + 1) * n : (2 * axis + 2) * n] = samples - e
    vals = np.asarray(u(cpf(shifted)), dtype=float)
    grad = np.empty((n, 3))
    for axis in range(3):
        plus = vals[2 * axis * n : (2 * axis + 1) * n]
        minus = vals[(2 * axis + 1) * n : (2 * axis + 2) * n]
        grad[:, axis] = (plus - minus) / (2.0 * step)
    return grad


def check_gradient_principle(
    cpf: ClosestPointFunction,
    u,
    surface_gradient,
    samples: np.ndarray,
    fd_step: float = _FD_STEP,
    budget: float = BUDGETS["gradient_principle"],
) -> CheckResult:
    """FD gradient of ``u o cp`` at on-surface samples against the known
    surface gradient (a callable of the sample points)."""
    exact = np.asarray(surface_gradient(samples), dtype=float)

    def defect(step):
        grad = _fd_gradient(cpf, u, samples, step)
        return float(np.max(np.linalg.norm(grad - exact, axis=1)))

    return CheckResult(
        "gradient_principle",
        _label(cpf),
        defect(fd_step),
        defect(2.0 * fd_step),
        budget,
    )


def check_divergence_principle(
    cpf: ClosestPointFunction,
    g,
    surface_divergence,
    samples: np.ndarray,
    fd_step: float = _FD_STEP,
    budget: float = BUDGETS["divergence_principle"],
) -> CheckResult:
    """FD divergence of ``g o cp`` against the known surface divergence.

    ``g`` maps surface points to ambient vectors and need not be tangential.
    """
    exact = np.asarray(surface_divergence(samples), dtype=float)

    def defect(step):
        n = len(samples)
        shifted = np.empty((6 * n, 3))
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = step
            shifted[2 * axis * n : (2 * axis + 1) * n] = samples + e
            shifted[(2 * axis + 1) * n : (2 * axis + 2) * n] = samples - e
        vecs = np.asarray(g(cpf(shifted)), dtype=float)
        div = np.zeros(n)
        for axis in range(3):
            plus = vecs[2 * axis * n : (2 * axis + 1) * n, axis]
            minus = vecs[(2 * axis + 1) * n : (2 * axis + 2) * n, axis]
            div += (plus - minus) / (2.0 * step)
        return float(np.max(np.abs(div - exact)))

    return CheckResult(
        "divergence_principle",
        _label(cpf),
        defect(fd_step),
        defect(2.0 * fd_step),
        budget,
    )


def check_orthogonality(
    cpf: ClosestPointFunction,
    samples: np.ndarray,
    budget: float = BUDGETS["orthogonality"],
) -> CheckResult:
    """Tangential component of the preimage direction at the image point.

    The samples must lie off the surface.  The defect is |P(y) t| for the
    unit preimage direction t, zero when the preimage meets the surface
    orthogonally.
    """
    if cpf.preimage_direction is None:
        raise ValueError(f"{_label(cpf)} exposes no preimage direction")
    images = cpf(samples)
    t = np.asarray(cpf.preimage_direction(samples, images), dtype=float)
    t = t / np.linalg.norm(t, axis=1, keepdims=True)
    proj = tangent_projector(cpf.surface, images)
    defect = float(np.max(np.linalg.norm(np.einsum("nij,nj->ni", proj, t), axis=1)))
    return CheckResult("orthogonality", _label(cpf), defect, defect, budget)


def check_idempotence(
    cpf: ClosestPointFunction,
    samples: np.ndarray,
    budget: float = BUDGETS["idempotence"],
) -> CheckResult:
    """max |cp(cp(x)) - cp(x)| over the samples."""
    once = cpf(samples)
    twice = cpf(once)
    defect = float(np.max(np.linalg.norm(twice - once, axis=1)))
    return CheckResult("idempotence", _label(cpf), defect, defect, budget)


def report_to_json(path, results) -> None:
    with open(path, "w") as fh:
        json.dump([r.row() for r in results], fh, indent=2)
        fh.write("\n")
