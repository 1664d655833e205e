"""Tensor-product interpolation of band fields at off-node points.

Three schemes: tri-linear, tri-cubic Lagrange, and a weighted essentially
non-oscillatory scheme built dimension-by-dimension from one-dimensional
quadratic substencils.  All schemes place the target in the middle interval
of a 2- or 4-node line per axis.

The solver repeatedly interpolates at the same cached closest points, so
:class:`CpExtension` precomputes cell indices and fractional coordinates
once per (grid, target set) and exposes cheap repeated application.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .band import BandedGrid, GridField
from .errors import StencilOutOfBand

__all__ = ["InterpScheme", "interpolate", "weno1d", "CpExtension"]

_KINDS = ("trilinear", "tricubic", "weno_triquadratic")


@dataclass(frozen=True)
class InterpScheme:
    kind: str = "tricubic"
    weno_epsilon: float = 1e-6

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}")
        if self.weno_epsilon <= 0.0:
            raise ValueError("weno_epsilon must be positive")

    @property
    def nodes_per_axis(self) -> int:
        return 2 if self.kind == "trilinear" else 4


def weno1d(values: np.ndarray, t: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Nonlinear blend of the two quadratics through 4 equispaced values.

    ``values`` holds samples at local coordinates -1, 0, 1, 2 along its
    first axis; the target sits at ``t`` in the middle interval [0, 1].
    With equal smoothness the ideal weights reproduce the cubic Lagrange
    interpolant; near a kink the weights fall back to the smoother
    substencil.
    """
    v0, v1, v2, v3 = values[0], values[1], values[2], values[3]
    s0 = 0.5 * (v2 - v0)
    d0 = v0 - 2.0 * v1 + v2
    s1 = 0.5 * (v3 - v1)
    d1 = v1 - 2.0 * v2 + v3
    # Smoothness indicators: scaled L2 norms of the first two derivatives of
    # each quadratic over the middle interval.
    is0 = s0 * s0 + s0 * d0 + (4.0 / 3.0) * d0 * d0
    is1 = s1 * s1 - s1 * d1 + (4.0 / 3.0) * d1 * d1
    q0 = v1 + t * s0 + 0.5 * t * t * d0
    tm = t - 1.0
    q1 = v2 + tm * s1 + 0.5 * tm * tm * d1
    c0 = (2.0 - t) / 3.0
    c1 = (1.0 + t) / 3.0
    a0 = c0 / (eps + is0) ** 2
    a1 = c1 / (eps + is1) ** 2
    w0 = a0 / (a0 + a1)
    return w0 * q0 + (1.0 - w0) * q1


def _cubic_weights(t: np.ndarray) -> np.ndarray:
    """Lagrange weights on local nodes -1, 0, 1, 2; shape (..., 4)."""
    tm1 = t - 1.0
    tm2 = t - 2.0
    tp1 = t + 1.0
    return np.stack(
        [
            -t * tm1 * tm2 / 6.0,
            tp1 * tm1 * tm2 / 2.0,
            -tp1 * t * tm2 / 2.0,
            tp1 * t * tm1 / 6.0,
        ],
        axis=-1,
    )


def _linear_weights(t: np.ndarray) -> np.ndarray:
    return np.stack([1.0 - t, t], axis=-1)


def _locate(grid: BandedGrid, pts: np.ndarray, nodes: int):
    """Cell index and fractional coordinate per axis.

    For 4-node stencils the cell is clipped so nodes i-1..i+2 stay inside
    the box; targets remain in (or at the boundary of) the middle interval
    for any point at least one cell away from the box faces.
    """
    rel = (pts - grid.box_lo) / grid.h
    cell = np.floor(rel).astype(np.int64)
    if nodes == 4:
        cell = np.clip(cell, 1, grid.dims - 3)
    else:
        cell = np.clip(cell, 0, grid.dims - 2)
    return cell, rel - cell


class CpExtension:
    """Repeated interpolation at a fixed set of target points.

    Built once per (grid, closest-point table, scheme); exposes stencil
    membership tests and vectorized application.  Work is chunked so whole
    (n, 64) tables are only materialized for the rows a caller asks for.
    """

    def __init__(self, grid: BandedGrid, targets: np.ndarray, scheme: InterpScheme):
        self.grid = grid
        self.scheme = scheme
        self.targets = np.asarray(targets, dtype=float)
        k = scheme.nodes_per_axis
        self.cell, self.tfrac = _locate(grid, self.targets, k)
        rng = np.arange(k) - (1 if k == 4 else 0)
        # (k^3, 3) node offsets of the stencil cube relative to the cell
        self.cube = np.stack(
            np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1
        ).reshape(-1, 3)
        self._complete: np.ndarray | None = None

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    def stencil_offsets(self, rows: np.ndarray) -> np.ndarray:
        """(len(rows), k^3) band offsets of the stencil nodes, -1 if missing."""
        ijk = self.cell[rows][:, None, :] + self.cube[None, :, :]
        return self.grid.offsets_of_ijk(ijk)

    def complete_mask(self, chunk: int = 65536) -> np.ndarray:
        """Rows whose whole stencil consists of band nodes."""
        if self._complete is None:
            out = np.empty(self.n_targets, dtype=bool)
            for start in range(0, self.n_targets, chunk):
                rows = np.arange(start, min(start + chunk, self.n_targets))
                out[rows] = np.all(self.stencil_offsets(rows) >= 0, axis=1)
            self._complete = out
        return self._complete

    def rows_within(self, node_mask: np.ndarray, chunk: int = 65536) -> np.ndarray:
        """Rows whose stencil nodes all carry ``node_mask``."""
        ok = self.complete_mask().copy()
        idx = np.where(ok)[0]
        for start in range(0, len(idx), chunk):
            rows = idx[start : start + chunk]
            st = self.stencil_offsets(rows)
            ok[rows] = np.all(node_mask[st], axis=1)
        return ok

    def stencil_nodes(self, rows: np.ndarray, chunk: int = 65536) -> np.ndarray:
        """Sorted unique band offsets read by the given rows."""
        seen = np.zeros(self.grid.band_size, dtype=bool)
        for start in range(0, len(rows), chunk):
            st = self.stencil_offsets(rows[start : start + chunk])
            seen[st[st >= 0]] = True
        return np.where(seen)[0]

    def make_applier(self, rows: np.ndarray) -> "_Applier":
        """Precompute gather tables for repeated application on ``rows``."""
        return _Applier(self, np.asarray(rows, dtype=np.int64))

    def apply_rows(
        self, rows: np.ndarray, band_values: np.ndarray, chunk: int = 65536
    ) -> np.ndarray:
        """One-shot interpolation for ``rows``; stencils must be complete."""
        out = np.empty(len(rows))
        for start in range(0, len(rows), chunk):
            sl = slice(start, min(start + chunk, len(rows)))
            out[sl] = _Applier(self, rows[sl]).apply(band_values)
        return out


class _Applier:
    def __init__(self, ext: CpExtension, rows: np.ndarray):
        self.scheme = ext.scheme
        self.rows = rows
        st = ext.stencil_offsets(rows)
        if np.any(st < 0):
            bad_row = int(np.argmax(np.any(st < 0, axis=1)))
            bad_node = ext.cell[rows[bad_row]] + ext.cube[
                int(np.argmax(st[bad_row] < 0))
            ]
            raise StencilOutOfBand(
                f"target {ext.targets[rows[bad_row]]} needs node "
                f"{tuple(int(v) for v in bad_node)} outside the band"
            )
        k = ext.scheme.nodes_per_axis
        self.gather = st.reshape(len(rows), k, k, k)
        t = ext.tfrac[rows]
        if ext.scheme.kind == "tricubic":
            self.wx = _cubic_weights(t[:, 0])
            self.wy = _cubic_weights(t[:, 1])
            self.wz = _cubic_weights(t[:, 2])
        elif ext.scheme.kind == "trilinear":
            self.wx = _linear_weights(t[:, 0])
            self.wy = _linear_weights(t[:, 1])
            self.wz = _linear_weights(t[:, 2])
        else:
            self.t = t

    def apply(self, band_values: np.ndarray) -> np.ndarray:
        vals = band_values[self.gather]
        if self.scheme.kind in ("tricubic", "trilinear"):
            return np.einsum(
                "nijk,ni,nj,nk->n", vals, self.wx, self.wy, self.wz, optimize=True
            )
        eps = self.scheme.weno_epsilon
        tx = self.t[:, 0][:, None, None]
        ty = self.t[:, 1][:, None]
        tz = self.t[:, 2]
        lines_x = np.moveaxis(vals, 1, 0)  # (4, n, 4, 4)
        r = weno1d(lines_x, tx, eps)  # (n, 4, 4)
        r = weno1d(np.moveaxis(r, 1, 0), ty, eps)  # (n, 4)
        return weno1d(np.moveaxis(r, 1, 0), tz, eps)  # (n,)


def interpolate(field: GridField, p, scheme: InterpScheme | None = None):
    """Interpolate a band field at one point or a batch of points.

    Raises :class:`StencilOutOfBand` naming the first missing node when the
    stencil around any target leaves the band.
    """
    if scheme is None:
        scheme = InterpScheme()
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    ext = CpExtension(field.grid, pts, scheme)
    out = _Applier(ext, np.arange(len(pts))).apply(field.values)
    return float(out[0]) if single else out
