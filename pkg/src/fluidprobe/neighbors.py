"""Fixed-radius neighbor search on a uniform grid.

Cells are cubes with edge length equal to the query cutoff, so a query
only ever has to scan the particle's own cell and its 26 face, edge and
corner neighbors.  Query results use an inclusive cutoff (distance equal
to the cutoff counts as a neighbor), exclude the query particle itself,
and are sorted by particle index ascending, which makes downstream
gather loops bit-reproducible.
"""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _cell_coord(x, lo, cell, dim):
    # out-of-bounds positions are clamped into boundary cells
    c = int((x - lo) / cell)
    if c < 0:
        return 0
    if c >= dim:
        return dim - 1
    return c


@njit(cache=True)
def _build_cells(pos, lo, cell, dims):
    n = pos.shape[0]
    ncells = dims[0] * dims[1] * dims[2]
    ids = np.empty(n, np.int64)
    for i in range(n):
        cx = _cell_coord(pos[i, 0], lo[0], cell, dims[0])
        cy = _cell_coord(pos[i, 1], lo[1], cell, dims[1])
        cz = _cell_coord(pos[i, 2], lo[2], cell, dims[2])
        ids[i] = (cx * dims[1] + cy) * dims[2] + cz
    starts = np.zeros(ncells + 1, np.int64)
    for i in range(n):
        starts[ids[i] + 1] += 1
    for c in range(ncells):
        starts[c + 1] += starts[c]
    cursor = starts[:-1].copy()
    order = np.empty(n, np.int32)
    for i in range(n):
        c = ids[i]
        order[cursor[c]] = i
        cursor[c] += 1
    return ids, starts, order


@njit(cache=True, inline="always")
def _count_row(i, pos, lo, cell, dims, starts, order, cutoff2):
    cx = _cell_coord(pos[i, 0], lo[0], cell, dims[0])
    cy = _cell_coord(pos[i, 1], lo[1], cell, dims[1])
    cz = _cell_coord(pos[i, 2], lo[2], cell, dims[2])
    count = 0
    for ox in range(max(0, cx - 1), min(dims[0], cx + 2)):
        for oy in range(max(0, cy - 1), min(dims[1], cy + 2)):
            for oz in range(max(0, cz - 1), min(dims[2], cz + 2)):
                c = (ox * dims[1] + oy) * dims[2] + oz
                for t in range(starts[c], starts[c + 1]):
                    j = order[t]
                    if j == i:
                        continue
                    dx = pos[i, 0] - pos[j, 0]
                    dy = pos[i, 1] - pos[j, 1]
                    dz = pos[i, 2] - pos[j, 2]
                    if dx * dx + dy * dy + dz * dz <= cutoff2:
                        count += 1
    return count


@njit(cache=True, inline="always")
def _fill_row(i, pos, lo, cell, dims, starts, order, cutoff2, out, base):
    cx = _cell_coord(pos[i, 0], lo[0], cell, dims[0])
    cy = _cell_coord(pos[i, 1], lo[1], cell, dims[1])
    cz = _cell_coord(pos[i, 2], lo[2], cell, dims[2])
    k = base
    for ox in range(max(0, cx - 1), min(dims[0], cx + 2)):
        for oy in range(max(0, cy - 1), min(dims[1], cy + 2)):
            for oz in range(max(0, cz - 1), min(dims[2], cz + 2)):
                c = (ox * dims[1] + oy) * dims[2] + oz
                for t in range(starts[c], starts[c + 1]):
                    j = order[t]
                    if j == i:
                        continue
                    dx = pos[i, 0] - pos[j, 0]
                    dy = pos[i, 1] - pos[j, 1]
                    dz = pos[i, 2] - pos[j, 2]
                    if dx * dx + dy * dy + dz * dz <= cutoff2:
                        out[k] = j
                        k += 1
    return k


@njit(cache=True, parallel=True)
def _query_csr(pos, lo, cell, dims, starts, order, cutoff2, n_rows):
    row_starts = np.zeros(n_rows + 1, np.int64)
    for i in prange(n_rows):
        row_starts[i + 1] = _count_row(i, pos, lo, cell, dims, starts, order, cutoff2)
    for i in range(n_rows):
        row_starts[i + 1] += row_starts[i]
    idx = np.empty(row_starts[n_rows], np.int32)
    for i in prange(n_rows):
        _fill_row(i, pos, lo, cell, dims, starts, order, cutoff2, idx, row_starts[i])
        idx[row_starts[i]:row_starts[i + 1]].sort()
    return row_starts, idx


@njit(cache=True)
def _query_one(i, pos, lo, cell, dims, starts, order, cutoff2):
    n = _count_row(i, pos, lo, cell, dims, starts, order, cutoff2)
    out = np.empty(n, np.int32)
    _fill_row(i, pos, lo, cell, dims, starts, order, cutoff2, out, 0)
    out.sort()
    return out


class NeighborGrid:
    """Uniform grid over an axis-aligned box, cell edge = cutoff."""

    def __init__(self, positions, cutoff: float, bounds):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValueError(f"positions must have shape (n, 3), got {positions.shape}")
        if not np.all(np.isfinite(positions)):
            raise ValueError("positions contain non-finite values")
        cutoff = float(cutoff)
        if not math.isfinite(cutoff) or cutoff <= 0.0:
            raise ValueError(f"cutoff must be positive and finite, got {cutoff}")
        lo, hi = bounds
        lo = np.asarray(lo, dtype=np.float64).reshape(3)
        hi = np.asarray(hi, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds contain non-finite values")
        if np.any(hi < lo):
            raise ValueError("bounds upper corner lies below lower corner")
        self.positions = positions
        self.cutoff = cutoff
        self.lo = lo
        self.hi = hi
        self.dims = np.maximum(np.ceil((hi - lo) / cutoff).astype(np.int64), 1)
        self.cell_ids, self.cell_starts, self.order = _build_cells(
            positions, lo, cutoff, self.dims
        )
        self._csr = None

    def __len__(self):
        return self.positions.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        """Indices within the cutoff of particle i, ascending, excluding i."""
        n = len(self)
        if not 0 <= i < n:
            raise IndexError(f"particle index {i} out of range for {n} particles")
        return _query_one(
            np.int64(i), self.positions, self.lo, self.cutoff, self.dims,
            self.cell_starts, self.order, self.cutoff * self.cutoff,
        )

    def query_csr(self, n_rows=None):
        """Neighbor lists for particles 0..n_rows-1 in CSR form.

        Returns (row_starts, indices): the neighbors of row i occupy
        indices[row_starts[i]:row_starts[i+1]], sorted ascending.
        """
        if n_rows is None:
            n_rows = len(self)
        if not 0 <= n_rows <= len(self):
            raise ValueError(f"n_rows {n_rows} out of range for {len(self)} particles")
        if self._csr is None or self._csr[0].shape[0] != n_rows + 1:
            self._csr = _query_csr(
                self.positions, self.lo, self.cutoff, self.dims,
                self.cell_starts, self.order, self.cutoff * self.cutoff,
                np.int64(n_rows),
            )
        return self._csr


def build_grid(positions, cutoff: float, bounds) -> NeighborGrid:
    """Build a uniform neighbor grid over the given bounds."""
    return NeighborGrid(positions, cutoff, bounds)


def neighbors(grid: NeighborGrid, i: int) -> np.ndarray:
    """Neighbor indices of particle i, sorted ascending, excluding i."""
    return grid.neighbors(i)
