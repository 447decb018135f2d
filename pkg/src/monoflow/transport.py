"""Discrete optimal transport for the joint Wasserstein metric.

Grid densities are embedded as weighted point clouds (cell centres, or
mass-weighted centroids of cell blocks after coarsening) and coupled by
an exact linear program with squared Euclidean cost.  Point-mass
species contribute the plain Euclidean distance between their
locations, and the joint distance adds the squared species distances.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._simplex import network_simplex
from .errors import CapacityError, ConfigurationError
from .grid import DensityField

log = logging.getLogger(__name__)

MAX_SUPPORT = 4096
DEFAULT_COARSEN = 1024
MARGINAL_TOL = 1e-9


@dataclass
class DiscreteMeasure:
    """Weighted point cloud ``sum_k w_k delta_{x_k}``.

    Parameters
    ----------
    points : ndarray, shape (K, d)
    weights : ndarray, shape (K,)
        Positive weights summing to one within 1e-10.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.points.shape[0] != self.weights.shape[0]:
            raise ConfigurationError("points and weights disagree in length")
        if self.weights.size == 0:
            raise ConfigurationError("empty measure")
        if np.any(self.weights <= 0):
            raise ConfigurationError("measure weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ConfigurationError(f"measure weights sum to {self.weights.sum()!r}")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.weights.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def second_moment(self) -> float:
        return float(self.weights @ np.sum(self.points ** 2, axis=1))

    @classmethod
    def dirac(cls, point) -> "DiscreteMeasure":
        return cls(np.atleast_2d(np.asarray(point, dtype=float)), np.ones(1))

    @classmethod
    def from_density(cls, density: DensityField) -> "DiscreteMeasure":
        """Identity embedding: cell centres carrying cell masses (empty cells dropped)."""
        w = density.cell_masses().ravel()
        keep = w > 0
        w = w[keep]
        return cls(density.grid.points[keep], w / w.sum())


@dataclass
class TransportPlan:
    """Coupling between two discrete measures.

    ``mass`` is dense (len(source), len(target)).  Product plans are kept
    in factored form and materialised only on request.
    """

    source: DiscreteMeasure
    target: DiscreteMeasure
    mass: np.ndarray | None = None
    optimal: bool = False
    cost: float = math.nan
    product: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mass is None:
            if not self.product:
                raise ConfigurationError("plan needs a mass matrix")
            return
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (len(self.source), len(self.target)):
            raise ConfigurationError("plan shape does not match its marginals")
        if self.mass.min() < 0:
            raise ConfigurationError("plan has negative entries")
        if (np.abs(self.mass.sum(axis=1) - self.source.weights).max() > MARGINAL_TOL
                or np.abs(self.mass.sum(axis=0) - self.target.weights).max() > MARGINAL_TOL):
            raise ConfigurationError("plan marginals do not match")

    def dense(self) -> np.ndarray:
        if self.mass is None:
            return np.outer(self.source.weights, self.target.weights)
        return self.mass

    def sq_cost(self) -> float:
        """Integral of ``|x - y|^2`` against the plan."""
        x, y = self.source.points, self.target.points
        if self.mass is None:
            a, b = self.source.weights, self.target.weights
            mx, my = a @ x, b @ y
            return float(a @ np.sum(x ** 2, 1) + b @ np.sum(y ** 2, 1) - 2 * mx @ my)
        return float(np.sum(self.mass * sq_dist_matrix(x, y)))

    def support(self):
        """Index pairs and masses of the nonzero entries."""
        G = self.dense()
        r, c = np.nonzero(G)
        return r, c, G[r, c]

    def to_csv(self, path):
        """Export nonzero entries as ``source,target,mass`` rows."""
        r, c, w = self.support()
        with open(Path(path), "w") as fh:
            fh.write("source,target,mass\n")
            for i, j, v in zip(r, c, w):
                fh.write(f"{i},{j},{v:.17g}\n")


def sq_dist_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x[:, None, :] - y[None, :, :]
    return np.einsum("klj,klj->kl", d, d)


def w2_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, *, rel_tol: float = 1e-12,
             max_iter: int | None = None) -> tuple[float, TransportPlan]:
    """Exact 2-Wasserstein distance between two discrete measures.

    Parameters
    ----------
    mu, nu : DiscreteMeasure
        Measures in the same dimension with at most 4096 atoms each.
    rel_tol : float
        Pricing tolerance relative to the largest cost entry.

    Returns
    -------
    w2 : float
        The distance (not squared).
    plan : TransportPlan
        Optimal coupling flagged ``optimal=True``.

    Raises
    ------
    CapacityError
        If either support exceeds the solver limit; coarsen first.
    """
    if mu.dim != nu.dim:
        raise ConfigurationError("measures live in different dimensions")
    for name, meas in (("source", mu), ("target", nu)):
        if len(meas) > MAX_SUPPORT:
            raise CapacityError(
                f"{name} has {len(meas)} atoms (limit {MAX_SUPPORT}); coarsen the measure first")
    C = sq_dist_matrix(mu.points, nu.points)
    a = mu.weights / mu.weights.sum()
    b = nu.weights / nu.weights.sum()
    if max_iter is None:
        max_iter = 50 * (C.size + len(a) + len(b)) + 1000
    rows, cols, mass, status, iters = network_simplex(a, b, C, rel_tol, max_iter)
    if status != 0:
        raise RuntimeError(f"network simplex hit its iteration limit ({iters})")
    G = np.zeros(C.shape)
    G[rows, cols] = mass
    # scale back to the stored weights (differ from a, b by rounding only)
    G *= mu.weights.sum()
    cost = float(np.sum(G * C))
    plan = TransportPlan(mu, nu, G, optimal=True, cost=cost, meta={"pivots": int(iters)})
    return math.sqrt(max(cost, 0.0)), plan


def product_plan(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    """Independent coupling ``mu x nu`` (kept in factored form)."""
    return TransportPlan(mu, nu, None, optimal=False, product=True)


def _block_shape(shape: Sequence[int], max_support: int) -> tuple[int, ...]:
    if len(shape) == 1:
        return (max(1, math.ceil(shape[0] / max_support)),)
    nx, ny = shape
    best = None
    for bx in range(1, nx + 1):
        for by in range(1, ny + 1):
            count = math.ceil(nx / bx) * math.ceil(ny / by)
            if count <= max_support:
                key = (bx * by, abs(bx - by), bx)
                if best is None or key < best[0]:
                    best = (key, (bx, by))
                break
    return best[1]


def coarsen(density: DensityField, max_support: int = DEFAULT_COARSEN) -> DiscreteMeasure:
    """Embed a density as a point cloud with at most ``max_support`` atoms.

    Cells are grouped into rectangular blocks, each replaced by a single
    atom at its mass-weighted centroid carrying the block mass.  Blocks
    are chosen with the smallest area that meets the budget, preferring
    square ones.  Empty blocks are dropped.
    """
    if max_support < 1:
        raise ConfigurationError("max_support must be positive")
    grid = density.grid
    if grid.size <= max_support:
        return DiscreteMeasure.from_density(density)
    blocks = _block_shape(grid.shape, max_support)
    masses = density.cell_masses()
    pts_all = []
    w_all = []
    if grid.dim == 1:
        (b,) = blocks
        n = grid.shape[0]
        for s in range(0, n, b):
            w = masses[s:s + b]
            tot = w.sum()
            if tot > 0:
                pts_all.append([w @ grid.axes[0][s:s + b] / tot])
                w_all.append(tot)
    else:
        bx, by = blocks
        nx, ny = grid.shape
        X, Y = grid.mesh
        for sx in range(0, nx, bx):
            for sy in range(0, ny, by):
                w = masses[sx:sx + bx, sy:sy + by]
                tot = w.sum()
                if tot > 0:
                    pts_all.append([np.sum(w * X[sx:sx + bx, sy:sy + by]) / tot,
                                    np.sum(w * Y[sx:sx + bx, sy:sy + by]) / tot])
                    w_all.append(tot)
    w_all = np.asarray(w_all)
    return DiscreteMeasure(np.asarray(pts_all), w_all / w_all.sum())


def as_measure(obj, max_support: int = DEFAULT_COARSEN) -> DiscreteMeasure:
    """Convert a density, a point or a measure to a :class:`DiscreteMeasure`."""
    if isinstance(obj, DiscreteMeasure):
        return obj
    if isinstance(obj, DensityField):
        return coarsen(obj, max_support)
    return DiscreteMeasure.dirac(obj)


def joint_w2(a, b, max_support: int = DEFAULT_COARSEN) -> float:
    """Joint distance ``sqrt(sum_i W2(a_i, b_i)^2)`` between two system states.

    ``a`` and ``b`` are :class:`~monoflow.dynamics.SystemState` objects or
    sequences whose entries are densities, discrete measures or points.
    Two points contribute their Euclidean distance directly.
    """
    sa = getattr(a, "species", a)
    sb = getattr(b, "species", b)
    if len(sa) != len(sb):
        raise ConfigurationError("states have different numbers of species")
    total = 0.0
    for x, y in zip(sa, sb):
        if isinstance(x, (DensityField, DiscreteMeasure)) or isinstance(y, (DensityField, DiscreteMeasure)):
            mx, my = as_measure(x, max_support), as_measure(y, max_support)
            if mx.dim != my.dim:
                raise ConfigurationError("species dimensions differ")
            w, _ = w2_exact(mx, my)
            total += w * w
        else:
            x = np.atleast_1d(np.asarray(x, dtype=float))
            y = np.atleast_1d(np.asarray(y, dtype=float))
            if x.shape != y.shape:
                raise ConfigurationError("species dimensions differ")
            total += float(np.sum((x - y) ** 2))
    return math.sqrt(total)


def displacement_interpolant(plan: TransportPlan, s: float) -> DiscreteMeasure:
    """Push the plan forward by ``(x, y) -> (1 - s) x + s y``."""
    if not 0.0 <= s <= 1.0:
        raise ConfigurationError(f"interpolation parameter {s} outside [0, 1]")
    r, c, w = plan.support()
    pts = (1.0 - s) * plan.source.points[r] + s * plan.target.points[c]
    return DiscreteMeasure(pts, w / w.sum())
