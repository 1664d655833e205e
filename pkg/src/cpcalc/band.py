"""Uniform Cartesian grids restricted to a band around a surface.

Band membership uses the combined level-set residual
``sqrt(sum_j phi_j^2)`` in lieu of Euclidean distance.  Nodes are placed at
``box_lo + i * h`` with the box endpoints included: given ``dims`` the
per-axis spacing is ``extent / (dims - 1)``; given ``h`` the node counts are
``round(extent / h) + 1``.

Band nodes are stored lexicographically sorted by their linearized index,
so neighbor lookup is a vectorized binary search and fields are flat arrays
indexed by band offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import EmptyBand, NaNDetected
from .geometry import LevelSetSurface

__all__ = [
    "DEFAULT_BOX",
    "BandedGrid",
    "GridField",
    "build_band",
    "neighbor",
    "band_to_csv",
    "save_field",
    "load_field",
]

# Reference box used by all curve experiments.
DEFAULT_BOX = ((-1.25, -1.25, -0.25), (1.25, 1.25, 1.25))

# Offsets of the two-ring star read by the widest difference operator: the
# first ring plus every composition of two unit steps.
ONE_RING = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]],
    dtype=np.int64,
)
_two = {tuple(o) for o in ONE_RING}
for a in range(3):
    for b in range(3):
        for sa in (-1, 1):
            for sb in (-1, 1):
                off = [0, 0, 0]
                off[a] += sa
                off[b] += sb
                if any(off):
                    _two.add(tuple(off))
TWO_RING_STAR = np.array(sorted(_two), dtype=np.int64)


@dataclass
class BandedGrid:
    """Grid nodes within the band, with index maps and neighbor tables."""

    box_lo: np.ndarray  # (3,)
    box_hi: np.ndarray  # (3,)
    h: np.ndarray  # (3,) per-axis spacing
    dims: np.ndarray  # (3,) node counts
    band_ijk: np.ndarray  # (n, 3) int, lexicographically sorted
    band_lin: np.ndarray  # (n,) sorted linearized indices
    band_tol: float
    surface: LevelSetSurface | None = None
    _first_ring: np.ndarray | None = field(default=None, repr=False)
    _evolvable: np.ndarray | None = field(default=None, repr=False)

    @property
    def band_size(self) -> int:
        return len(self.band_lin)

    @property
    def points(self) -> np.ndarray:
        return self.box_lo + self.band_ijk * self.h

    def linearize(self, ijk: np.ndarray) -> np.ndarray:
        ny, nz = int(self.dims[1]), int(self.dims[2])
        return (ijk[..., 0] * ny + ijk[..., 1]) * nz + ijk[..., 2]

    def offsets_of_lin(self, lin: np.ndarray) -> np.ndarray:
        """Band offsets for linear indices; -1 where not a band node."""
        lin = np.asarray(lin)
        if self.band_size == 0:
            return np.full(lin.shape, -1, dtype=np.int64)
        pos = np.searchsorted(self.band_lin, lin)
        pos = np.minimum(pos, self.band_size - 1)
        hit = self.band_lin[pos] == lin
        return np.where(hit, pos, -1).astype(np.int64)

    def offsets_of_ijk(self, ijk: np.ndarray) -> np.ndarray:
        """Band offsets of integer triples; -1 outside band or box."""
        ijk = np.asarray(ijk, dtype=np.int64)
        inside = np.all((ijk >= 0) & (ijk < self.dims), axis=-1)
        lin = self.linearize(np.clip(ijk, 0, self.dims - 1))
        off = self.offsets_of_lin(lin)
        return np.where(inside, off, -1)

    def shifted_offsets(self, shifts: np.ndarray) -> np.ndarray:
        """Band offsets of every band node shifted by each row of ``shifts``.

        Returns shape ``(band_size, len(shifts))`` with -1 for missing nodes.
        """
        shifts = np.asarray(shifts, dtype=np.int64)
        out = np.empty((self.band_size, len(shifts)), dtype=np.int64)
        for col, s in enumerate(shifts):
            out[:, col] = self.offsets_of_ijk(self.band_ijk + s)
        return out

    @property
    def first_ring(self) -> np.ndarray:
        """(band_size, 6) offsets of the +-1 neighbors per axis (-1 missing).

        Column order: (-x, +x, -y, +y, -z, +z).
        """
        if self._first_ring is None:
            order = np.array(
                [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]],
                dtype=np.int64,
            )
            object.__setattr__(self, "_first_ring", self.shifted_offsets(order))
        return self._first_ring

    @property
    def evolvable_mask(self) -> np.ndarray:
        """Nodes whose full two-ring difference stencil lies in the band."""
        if self._evolvable is None:
            ok = np.all(self.shifted_offsets(TWO_RING_STAR) >= 0, axis=1)
            object.__setattr__(self, "_evolvable", ok)
        return self._evolvable

    def interp_safe_mask(self, stencil_offsets: np.ndarray) -> np.ndarray:
        """Nodes whose interpolation stencil lies in the evolvable set.

        ``stencil_offsets`` has shape (band_size, k) with band offsets of the
        k interpolation nodes around each node's cached closest point.
        """
        evo = self.evolvable_mask
        ok = np.all(stencil_offsets >= 0, axis=1)
        safe = np.zeros(self.band_size, dtype=bool)
        rows = np.where(ok)[0]
        safe[rows] = np.all(evo[stencil_offsets[rows]], axis=1)
        return safe

    def report(self) -> dict:
        return {
            "dims": [int(d) for d in self.dims],
            "h": [float(v) for v in self.h],
            "band_tol": float(self.band_tol),
            "band_size": int(self.band_size),
            "evolvable": int(np.count_nonzero(self.evolvable_mask)),
        }


def build_band(
    surface: LevelSetSurface,
    box=DEFAULT_BOX,
    h: float | Iterable[float] | None = None,
    dims: int | Iterable[int] | None = None,
    band_tol: float | None = None,
) -> BandedGrid:
    """Scan the box for nodes with ``band_distance <= band_tol``.

    Exactly one of ``h`` and ``dims`` must be given.  The scan runs in
    x-slabs so the full node set is never materialized.
    """
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    extent = hi - lo
    if (h is None) == (dims is None):
        raise ValueError("give exactly one of h and dims")
    if h is not None:
        hv = np.broadcast_to(np.asarray(h, dtype=float), (3,)).copy()
        nd = np.round(extent / hv).astype(np.int64) + 1
        hv = extent / (nd - 1)
    else:
        nd = np.broadcast_to(np.asarray(dims, dtype=np.int64), (3,)).copy()
        if np.any(nd < 2):
            raise ValueError("need at least 2 nodes per axis")
        hv = extent / (nd - 1)
    tol = surface.band_tol if band_tol is None else float(band_tol)
    if tol <= 0.0:
        raise ValueError("band_tol must be positive")

    ys = lo[1] + hv[1] * np.arange(nd[1])
    zs = lo[2] + hv[2] * np.arange(nd[2])
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    slab = np.empty((nd[1] * nd[2], 3))
    slab[:, 1] = yy.ravel()
    slab[:, 2] = zz.ravel()
    jk = np.stack(
        np.meshgrid(np.arange(nd[1]), np.arange(nd[2]), indexing="ij"), axis=-1
    ).reshape(-1, 2)
    found = []
    for i in range(nd[0]):
        slab[:, 0] = lo[0] + hv[0] * i
        hit = surface.band_distance(slab) <= tol
        if np.any(hit):
            rows = jk[hit]
            ijk = np.empty((len(rows), 3), dtype=np.int64)
            ijk[:, 0] = i
            ijk[:, 1:] = rows
            found.append(ijk)
    if not found:
        raise EmptyBand(
            f"no node of the {tuple(int(v) for v in nd)} grid satisfies "
            f"band_distance <= {tol}"
        )
    band_ijk = np.concatenate(found, axis=0)
    grid = BandedGrid(
        box_lo=lo,
        box_hi=hi,
        h=hv,
        dims=nd,
        band_ijk=band_ijk,
        band_lin=np.zeros(len(band_ijk), dtype=np.int64),
        band_tol=tol,
        surface=surface,
    )
    lin = grid.linearize(band_ijk)
    order = np.argsort(lin)
    grid.band_ijk = band_ijk[order]
    grid.band_lin = lin[order]
    return grid


def neighbor(grid: BandedGrid, band_offset: int, axis: int, step: int):
    """Band offset of the node ``step`` nodes away along ``axis``.

    Returns ``None`` when the neighbor is outside the band; ``step`` must be
    one of -2, -1, +1, +2.
    """
    if step not in (-2, -1, 1, 2):
        raise ValueError("step must be one of -2, -1, +1, +2")
    if not 0 <= band_offset < grid.band_size:
        raise IndexError("band offset out of range")
    ijk = grid.band_ijk[band_offset].copy()
    ijk[axis] += step
    off = int(grid.offsets_of_ijk(ijk[None, :])[0])
    return None if off < 0 else off


@dataclass
class GridField:
    """Values attached to band nodes (one scalar or small vector per node)."""

    grid: BandedGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.values) != self.grid.band_size:
            raise ValueError(
                f"field length {len(self.values)} != band size {self.grid.band_size}"
            )

    def check_finite(self, where: np.ndarray | None = None, context: str = ""):
        vals = self.values if where is None else self.values[where]
        if not np.all(np.isfinite(vals)):
            raise NaNDetected(context or "non-finite value in grid field")


def band_to_csv(path, grid: BandedGrid, extra_masks: dict | None = None) -> None:
    """Dump band nodes with coordinates and mask flags."""
    masks = {"evolvable": grid.evolvable_mask}
    if extra_masks:
        masks.update(extra_masks)
    names = ",".join(masks)
    pts = grid.points
    with open(path, "w") as fh:
        fh.write(f"i,j,k,x1,x2,x3,{names}\n")
        cols = np.column_stack([np.asarray(m, dtype=int) for m in masks.values()])
        for ijk, p, flags in zip(grid.band_ijk, pts, cols):
            flag_txt = ",".join(str(int(f)) for f in flags)
            fh.write(
                f"{ijk[0]},{ijk[1]},{ijk[2]},{p[0]!r},{p[1]!r},{p[2]!r},{flag_txt}\n"
            )


def save_field(path, fld: GridField) -> None:
    """Binary snapshot: band-ordered little-endian float64 values."""
    fld.values.astype("<f8").tofile(path)


def load_field(path, grid: BandedGrid) -> GridField:
    vals = np.fromfile(path, dtype="<f8")
    return GridField(grid, vals.reshape(grid.band_size, -1).squeeze())
