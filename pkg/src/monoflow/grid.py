"""Uniform cell-centred grids, densities and vector fields.

A grid covers the box ``[lower, upper]`` in one or two dimensions with
``cells[a]`` cells along axis ``a``.  Values live at cell centres

    x_j = lower + (j + 1/2) h,    h = (upper - lower) / cells,

and integrals use the midpoint rule ``sum(f) * prod(h)``.  Densities are
stored as point values, so the mass carried by a cell is ``rho * vol``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigurationError

MASS_TOL = 1e-10


@dataclass(frozen=True)
class GridSpec:
    """Description of a uniform box grid.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    lower, upper : tuple of float
        Box corners, one entry per axis.
    cells : tuple of int
        Number of cells per axis.
    """

    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"grid dimension must be 1 or 2, got {self.dim}")
        object.__setattr__(self, "lower", tuple(float(v) for v in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(v) for v in np.atleast_1d(self.upper)))
        object.__setattr__(self, "cells", tuple(int(v) for v in np.atleast_1d(self.cells)))
        for name in ("lower", "upper", "cells"):
            if len(getattr(self, name)) != self.dim:
                raise ConfigurationError(f"grid {name} must have {self.dim} entries")
        for lo, hi in zip(self.lower, self.upper):
            if not hi > lo:
                raise ConfigurationError("grid upper bound must exceed lower bound")
        if any(c < 1 for c in self.cells):
            raise ConfigurationError("grid needs at least one cell per axis")

    def to_dict(self) -> dict:
        return {"dim": self.dim, "lower": list(self.lower),
                "upper": list(self.upper), "cells": list(self.cells)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        lower = np.atleast_1d(d["lower"])
        return cls(int(d.get("dim", len(lower))), tuple(lower),
                   tuple(np.atleast_1d(d["upper"])), tuple(np.atleast_1d(d["cells"])))


class Grid:
    """Geometry derived from a :class:`GridSpec`.

    Attributes
    ----------
    spec : GridSpec
    h : ndarray
        Cell widths per axis.
    axes : list of ndarray
        Cell centre coordinates per axis.
    points : ndarray, shape (ncells, dim)
        All cell centres in C order.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.dim = spec.dim
        self.shape = spec.cells
        lo = np.asarray(spec.lower)
        hi = np.asarray(spec.upper)
        n = np.asarray(spec.cells)
        self.h = (hi - lo) / n
        self.vol = float(np.prod(self.h))
        self.axes = [lo[a] + (np.arange(n[a]) + 0.5) * self.h[a] for a in range(self.dim)]
        self.mesh = np.meshgrid(*self.axes, indexing="ij")
        self.points = np.stack([m.ravel() for m in self.mesh], axis=1)
        self.size = int(np.prod(n))

    def __repr__(self):
        return f"Grid({self.spec.lower}, {self.spec.upper}, {self.spec.cells})"

    def __eq__(self, other):
        return isinstance(other, Grid) and other.spec == self.spec

    def __hash__(self):
        return hash(self.spec)

    def evaluate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Evaluate ``fn`` on all cell centres; ``fn`` maps (K, dim) -> (K,)."""
        return np.asarray(fn(self.points), dtype=float).reshape(self.shape)

    def boundary_mask(self) -> np.ndarray:
        """Boolean mask of the outermost layer of cells."""
        mask = np.zeros(self.shape, dtype=bool)
        for a in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[a] = 0
            mask[tuple(idx)] = True
            idx[a] = -1
            mask[tuple(idx)] = True
        return mask


def build_grid(spec: GridSpec) -> Grid:
    """Construct the cell-centred geometry of ``spec``."""
    return Grid(spec)


def _check_shape(values: np.ndarray, grid: Grid):
    if values.shape != tuple(grid.shape):
        raise ConfigurationError(
            f"field shape {values.shape} does not match grid cells {tuple(grid.shape)}")


def integrate(values: np.ndarray, grid: Grid) -> float:
    """Midpoint-rule integral of cell values over the box."""
    values = np.asarray(values, dtype=float)
    _check_shape(values, grid)
    return float(values.sum() * grid.vol)


def gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Finite-difference gradient of a cell field.

    Central differences in the interior and second-order one-sided
    differences in the boundary cells, so quadratics are differentiated
    exactly everywhere.

    Returns
    -------
    ndarray, shape (dim, *cells)
    """
    values = np.asarray(values, dtype=float)
    _check_shape(values, grid)
    if any(c < 3 for c in grid.shape):
        raise ConfigurationError("gradient needs at least three cells along every axis")
    g = np.gradient(values, *grid.h, edge_order=2)
    if grid.dim == 1:
        g = [g]
    return np.stack(g, axis=0)


@dataclass
class DensityField:
    """Probability density sampled at cell centres.

    Parameters
    ----------
    grid : Grid
    values : ndarray
        Nonnegative point values with ``integrate(values) == 1``.
    """

    grid: Grid
    values: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _check_shape(self.values, self.grid)
        if self.check:
            if np.any(~np.isfinite(self.values)):
                raise ConfigurationError("density contains non-finite values")
            if self.values.min() < 0:
                raise ConfigurationError("density has negative values")
            mass = self.mass()
            if abs(mass - 1.0) > MASS_TOL:
                raise ConfigurationError(f"density mass is {mass!r}, expected 1")

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.vol)

    def cell_masses(self) -> np.ndarray:
        return self.values * self.grid.vol

    def mean(self) -> np.ndarray:
        w = self.cell_masses().ravel()
        return w @ self.grid.points

    def copy(self) -> "DensityField":
        return DensityField(self.grid, self.values.copy(), check=False)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "DensityField":
        """Sample a nonnegative function and normalise it to unit mass."""
        vals = np.clip(grid.evaluate(fn), 0.0, None)
        total = vals.sum() * grid.vol
        if not total > 0:
            raise ConfigurationError("density function has zero mass on the grid")
        return cls(grid, vals / total)

    @classmethod
    def from_log(cls, grid: Grid, logfn: Callable[[np.ndarray], np.ndarray]) -> "DensityField":
        """Normalised density proportional to ``exp(logfn)``, stable for large exponents."""
        lv = grid.evaluate(logfn)
        lv = lv - lv.max()
        vals = np.exp(lv)
        return cls(grid, vals / (vals.sum() * grid.vol))


def gaussian_density(grid: Grid, mean: Sequence[float], cov) -> DensityField:
    """Discrete Gaussian: ``exp(-(x-m)^T cov^{-1} (x-m) / 2)`` normalised on the grid."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov * np.eye(grid.dim)
    elif cov.ndim == 1:
        cov = np.diag(cov)
    prec = np.linalg.inv(cov)

    def logf(x):
        z = x - mean
        return -0.5 * np.einsum("ki,ij,kj->k", z, prec, z)

    return DensityField.from_log(grid, logf)


@dataclass
class VectorField:
    """Vector field at cell centres, ``components`` has shape (dim, *cells)."""

    grid: Grid
    components: np.ndarray

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float)
        if self.components.shape != (self.grid.dim, *self.grid.shape):
            raise ConfigurationError("vector field shape does not match grid")

    def norm_sq(self) -> np.ndarray:
        return np.sum(self.components ** 2, axis=0)

    def at(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at ``points`` (K, dim).

        Points outside the hull of cell centres are clamped to it, which
        extends the outermost cell values constantly.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return interpolate(self.grid, self.components, points)


def interpolate(grid: Grid, stack: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Interpolate each leading slice of ``stack`` at ``points``.

    Returns an array of shape (K, stack.shape[0]).
    """
    lo = np.array([ax[0] for ax in grid.axes])
    hi = np.array([ax[-1] for ax in grid.axes])
    pts = np.clip(points, lo, hi)
    out = np.empty((pts.shape[0], stack.shape[0]))
    if any(n == 1 for n in grid.shape):
        # degenerate axes: fall back to nearest cell
        idx = tuple(np.clip(np.rint((pts[:, a] - lo[a]) / grid.h[a]).astype(int), 0, grid.shape[a] - 1)
                    for a in range(grid.dim))
        for c in range(stack.shape[0]):
            out[:, c] = stack[c][idx]
        return out
    for c in range(stack.shape[0]):
        rgi = RegularGridInterpolator(grid.axes, stack[c], method="linear")
        out[:, c] = rgi(pts)
    return out


# ---------------------------------------------------------------------------
# snapshot I/O

def write_csv(path, density: DensityField | np.ndarray, grid: Grid | None = None):
    """Write a field as CSV rows ``x[,y],value``."""
    if isinstance(density, DensityField):
        grid, values = density.grid, density.values
    else:
        values = np.asarray(density)
    cols = ["x", "y"][: grid.dim] + ["value"]
    data = np.column_stack([grid.points, values.ravel()])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def read_csv(path, spec: GridSpec) -> DensityField:
    grid = build_grid(spec)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return DensityField(grid, data[:, -1].reshape(grid.shape), check=False)


def write_raw(path, density: DensityField, extra: dict | None = None):
    """Write little-endian float64 values plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    density.values.astype("<f8").tofile(path)
    meta = {"grid": density.grid.spec.to_dict(), "dtype": "<f8", "order": "C"}
    if extra:
        meta.update(extra)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_raw(path) -> DensityField:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    grid = build_grid(GridSpec.from_dict(meta["grid"]))
    vals = np.fromfile(path, dtype=meta.get("dtype", "<f8")).reshape(grid.shape)
    return DensityField(grid, vals.astype(float), check=False)
