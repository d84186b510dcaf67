"""Tensor grids on boxes in R^(n+m), zero-trace nodal fields, weighted gradients.

Axes ``0 .. n-1`` carry the degenerate variable x, axes ``n .. n+m-1`` the
variable y.  A :class:`Field` stores values on interior nodes only; the
boundary trace is zero by construction.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError

__all__ = [
    "Grid",
    "Field",
    "CellGradient",
    "build_grid",
    "weighted_gradient",
    "positive_part",
    "negative_part",
    "save_field",
    "load_field",
]


@dataclass(frozen=True, eq=False)
class Grid:
    n: int
    m: int
    bounds: tuple
    counts: tuple

    @property
    def N(self):
        return self.n + self.m

    @cached_property
    def spacing(self):
        return np.array([(b - a) / (c - 1) for (a, b), c in zip(self.bounds, self.counts)])

    @cached_property
    def axes(self):
        return [np.linspace(a, b, c) for (a, b), c in zip(self.bounds, self.counts)]

    @property
    def shape(self):
        return tuple(self.counts)

    @property
    def cell_shape(self):
        return tuple(c - 1 for c in self.counts)

    @property
    def interior_shape(self):
        return tuple(c - 2 for c in self.counts)

    @property
    def n_interior(self):
        return int(np.prod(self.interior_shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def volume(self):
        return float(np.prod([b - a for a, b in self.bounds]))

    @cached_property
    def interior_index(self):
        """Flat full-grid index of every interior node, in C order."""
        idx = np.indices(self.interior_shape).reshape(self.N, -1) + 1
        return np.ravel_multi_index(tuple(idx), self.shape)

    @cached_property
    def full_to_interior(self):
        """Map full flat index -> interior position, -1 on the boundary."""
        out = np.full(int(np.prod(self.shape)), -1, dtype=np.int64)
        out[self.interior_index] = np.arange(self.n_interior)
        return out

    def embed(self, values):
        """Full nodal array (flat) with zero boundary values."""
        full = np.zeros(int(np.prod(self.shape)))
        full[self.interior_index] = values
        return full

    def interior_coords(self):
        pts = np.stack(np.meshgrid(*[a[1:-1] for a in self.axes], indexing="ij"), axis=-1)
        return pts.reshape(-1, self.N)

    def node_coords(self):
        pts = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)
        return pts.reshape(-1, self.N)

    def cell_centers(self):
        mids = [(a[:-1] + a[1:]) / 2 for a in self.axes]
        return np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1).reshape(-1, self.N)

    def trapezoid_weights(self):
        """Nodal trapezoid weights over all nodes (boundary nodes halved per axis)."""
        factors = []
        for h, c in zip(self.spacing, self.counts):
            f = np.full(c, h)
            f[[0, -1]] = h / 2
            factors.append(f)
        out = factors[0]
        for f in factors[1:]:
            out = np.multiply.outer(out, f)
        return out.reshape(-1)

    @cached_property
    def corner_edges(self):
        """Edge endpoints seen from each cell corner.

        Returns ``(lo, hi)`` integer arrays of shape ``(2**N, N, n_cells)``:
        for corner bit pattern ``c`` and axis ``k``, the edge along ``k``
        that touches that corner runs from node ``lo`` to node ``hi``.
        """
        N = self.N
        cells = np.indices(self.cell_shape).reshape(N, -1)
        strides = np.array([int(np.prod(self.shape[k + 1:])) for k in range(N)])
        base = np.ravel_multi_index(tuple(cells), self.shape)
        corners = list(itertools.product((0, 1), repeat=N))
        lo = np.empty((len(corners), N, base.size), dtype=np.int64)
        for ci, bits in enumerate(corners):
            for k in range(N):
                off = sum(bits[j] * strides[j] for j in range(N) if j != k)
                lo[ci, k] = base + off
        hi = lo + strides[None, :, None]
        return lo, hi

    def __repr__(self):
        return f"Grid(n={self.n}, m={self.m}, bounds={self.bounds}, counts={self.counts})"


def build_grid(n, m, bounds, counts):
    """Validate a box description and return a :class:`Grid`."""
    if n < 1 or m < 1:
        raise ConfigError("n and m must both be >= 1")
    bounds = tuple((float(a), float(b)) for a, b in bounds)
    counts = tuple(int(c) for c in counts)
    if len(bounds) != n + m or len(counts) != n + m:
        raise ConfigError(f"need {n + m} bounds and counts, got {len(bounds)} and {len(counts)}")
    for (a, b), c in zip(bounds, counts):
        if not b > a:
            raise ConfigError(f"degenerate interval [{a}, {b}]")
        if c < 3:
            raise ConfigError(f"node count {c} < 3")
    return Grid(n, m, bounds, counts)


@dataclass(eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_interior,):
            raise ValueError("field needs one value per interior node")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def full(self):
        return self.grid.embed(self.values).reshape(self.grid.shape)

    def __mul__(self, t):
        return Field(self.grid, self.values * t)

    __rmul__ = __mul__

    def __add__(self, other):
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        return Field(self.grid, self.values - other.values)

    def __neg__(self):
        return Field(self.grid, -self.values)


@dataclass
class CellGradient:
    gx: np.ndarray  # (n_cells, n)
    gy: np.ndarray  # (n_cells, m)
    omega: np.ndarray  # (n_cells,)
    p: float

    def modulus(self):
        return np.sqrt(self.omega ** (2.0 / self.p) * np.sum(self.gx ** 2, axis=1)
                       + np.sum(self.gy ** 2, axis=1))


def cell_omega(grid, omega):
    """omega at cell-centre x coordinates (singular centres moved by half a cell)."""
    xc = grid.cell_centers()[:, :grid.n]
    return omega.evaluate_perturbed(xc, grid.spacing[0] / 2)


def weighted_gradient(u, omega, p):
    """Cell-centre gradient: mean of the parallel edge differences per axis."""
    grid = u.grid
    U = u.full()
    N = grid.N
    g = np.empty((int(np.prod(grid.cell_shape)), N))
    for k in range(N):
        d = np.diff(U, axis=k) / grid.spacing[k]
        # average over the other axes' two endpoints
        for j in range(N):
            if j != k:
                sl_lo = [slice(None)] * N
                sl_hi = [slice(None)] * N
                sl_lo[j] = slice(0, -1)
                sl_hi[j] = slice(1, None)
                d = (d[tuple(sl_lo)] + d[tuple(sl_hi)]) / 2
        g[:, k] = d.reshape(-1)
    return CellGradient(g[:, :grid.n], g[:, grid.n:], cell_omega(grid, omega), p)


def positive_part(u):
    return Field(u.grid, np.maximum(u.values, 0.0))


def negative_part(u):
    return Field(u.grid, np.maximum(-u.values, 0.0))


def save_field(path, u):
    """Write one CSV row per node (coordinates, value) at 17 significant digits."""
    grid = u.grid
    names = [f"x{i + 1}" for i in range(grid.n)] + [f"y{j + 1}" for j in range(grid.m)]
    coords = grid.node_coords()
    vals = u.full().reshape(-1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["u"])
        for row, val in zip(coords, vals):
            w.writerow([f"{x:.17g}" for x in row] + [f"{val:.17g}"])


def load_field(path, grid):
    """Read a field written by :func:`save_field` on the same grid."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (int(np.prod(grid.shape)), grid.N + 1):
        raise ValueError(f"{path}: shape {data.shape} does not match {grid}")
    if not np.allclose(data[:, :-1], grid.node_coords(), rtol=0, atol=1e-12):
        raise ValueError(f"{path}: node coordinates do not match the grid")
    vals = data[:, -1]
    if np.any(np.delete(vals, grid.interior_index) != 0):
        raise ValueError(f"{path}: nonzero boundary values")
    return Field(grid, vals[grid.interior_index])
