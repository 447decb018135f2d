"""Energy functionals, first variations and velocities of coupled flows.

Each species ``i`` carries an energy ``F_i``, written as a sum of
terms.  A term acts on a primary species ``s`` (the owner unless
``on`` says otherwise) and, for pair terms, a partner ``j``.  Terms
that do not involve species ``i`` do not move it but still count in
the value of ``F_i``; this is how zero-sum games are expressed.

Grid species move with ``v_i = -grad(dF_i/drho_i)``.  Point-mass
species move with ``v_i = -d F_i / d h_i``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigurationError
from .grid import DensityField, Grid, VectorField, gradient, interpolate
from .kernels import (PairKernel, ScalarFunction, TranslationKernel, fd_gradient, fd_hessian)
from .state import SystemState
from .transport import DiscreteMeasure

LOG_FLOOR = 1e-300
DENSE_LIMIT = 4096 * 4096

Weight = Union[float, Callable[[SystemState], float]]


# ---------------------------------------------------------------------------
# evaluation context

class Context:
    """Per-state helper giving supports, means and cached weights."""

    def __init__(self, spec: "EnergySpec", state: SystemState):
        self.spec = spec
        self.state = state
        self._means = {}
        self._supports = {}

    def kind(self, s: int) -> str:
        x = self.state.species[s]
        if isinstance(x, DensityField):
            return "grid"
        if isinstance(x, DiscreteMeasure):
            return "measure"
        return "dirac"

    def grid(self, s: int) -> Grid:
        return self.state.species[s].grid

    def support(self, s: int, positive: bool = False):
        key = (s, positive)
        if key not in self._supports:
            x = self.state.species[s]
            if isinstance(x, DensityField):
                X, w = x.grid.points, x.cell_masses().ravel()
                if positive:
                    keep = w > 0
                    X, w = X[keep], w[keep]
            elif isinstance(x, DiscreteMeasure):
                X, w = x.points, x.weights
            else:
                X, w = x[None, :], np.ones(1)
            self._supports[key] = (X, w)
        return self._supports[key]

    def mean(self, s: int) -> np.ndarray:
        if s not in self._means:
            X, w = self.support(s)
            self._means[s] = w @ X
        return self._means[s]

    def weight(self, w: Weight) -> float:
        return float(w(self.state)) if callable(w) else float(w)


def _rows(kernel: PairKernel, X, Y, method="value"):
    """Matrix ``K[k, l] = kernel.method(X[k], Y[l])`` (trailing dims kept)."""
    K, L = X.shape[0], Y.shape[0]
    fn = getattr(kernel, method)
    out = fn(np.repeat(X, L, axis=0), np.tile(Y, (K, 1)))
    return out.reshape((K, L) + out.shape[1:])


def _integrate_pair(kernel: PairKernel, X, Y, w, method="value", chunk=None):
    """``sum_l w_l kernel.method(X_k, Y_l)`` for each k, chunked over k."""
    K, L = X.shape[0], Y.shape[0]
    if chunk is None:
        chunk = max(1, 2 ** 22 // max(L, 1))
    outs = []
    for s in range(0, K, chunk):
        M = _rows(kernel, X[s:s + chunk], Y, method)
        outs.append(np.tensordot(w, M, axes=([0], [1])) if M.ndim > 2 else M @ w)
    return np.concatenate(outs, axis=0)


def _integrate_pair_y(kernel: PairKernel, X, w, Y, method="value"):
    """``sum_k w_k kernel.method(X_k, Y_l)`` for each l."""
    K, L = X.shape[0], Y.shape[0]
    chunk = max(1, 2 ** 22 // max(K, 1))
    outs = []
    for s in range(0, L, chunk):
        M = _rows(kernel, X, Y[s:s + chunk], method)
        outs.append(np.tensordot(w, M, axes=([0], [0])))
    return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# terms

@dataclass
class EnergyTerm:
    """Base class; ``on`` is the primary species (owner when None)."""

    def primary(self, owner: int) -> int:
        on = getattr(self, "on", None)
        return owner if on is None else on

    def partners(self, owner: int) -> tuple[int, ...]:
        return (self.primary(owner),)

    def value(self, ctx: Context, owner: int) -> float:
        raise NotImplementedError

    def variation(self, ctx: Context, owner: int, i: int):
        return None

    def dirac_grad(self, ctx: Context, owner: int, i: int):
        return None

    def hess_local(self, ctx: Context, owner: int, X):
        return None

    def hess_cross(self, ctx: Context, owner: int, j: int, X, Y):
        return None

    def describe(self) -> dict:
        return {"type": type(self).__name__}


@dataclass
class Potential(EnergyTerm):
    """``coef * int V drho_s``."""

    V: ScalarFunction
    on: int | None = None
    coef: float = 1.0

    def value(self, ctx, owner):
        s = self.primary(owner)
        X, w = ctx.support(s)
        return self.coef * float(w @ self.V.value(X))

    def variation(self, ctx, owner, i):
        if i != self.primary(owner):
            return None
        g = ctx.grid(i)
        key = ("potential", g.spec)
        cache = self.__dict__.setdefault("_cache", {})
        if key not in cache:
            cache[key] = self.V.value(g.points).reshape(g.shape)
        return self.coef * cache[key]

    def analytic_gradient(self, ctx, owner, i):
        """Exact gradient of the variation at cell centres, shape (dim, *cells)."""
        if i != self.primary(owner):
            return None
        g = ctx.grid(i)
        G = self.V.grad(g.points)
        return self.coef * np.moveaxis(G, 1, 0).reshape((g.dim,) + tuple(g.shape))

    def dirac_grad(self, ctx, owner, i):
        if i != self.primary(owner):
            return None
        h = ctx.state.species[i]
        return self.coef * self.V.grad(h[None, :])[0]

    def hess_local(self, ctx, owner, X):
        if owner != self.primary(owner):
            return None
        return self.coef * self.V.hess(X)

    def describe(self):
        return {"type": "potential", "V": repr(self.V), "on": self.on, "coef": self.coef}


@dataclass
class CrossInteraction(EnergyTerm):
    """``coef * weight * int int W(x_s, y_j) drho_s drho_j`` with ``j != s``."""

    j: int
    W: PairKernel
    weight: Weight = 1.0
    on: int | None = None
    coef: float = 1.0

    def partners(self, owner):
        return (self.primary(owner), self.j)

    def _c(self, ctx):
        return self.coef * ctx.weight(self.weight)

    def _dense(self, ctx, s, j):
        gs, gj = ctx.grid(s), ctx.grid(j)
        if gs.size * gj.size > DENSE_LIMIT:
            return None
        cache = self.__dict__.setdefault("_cache", {})
        key = ("cross", gs.spec, gj.spec)
        if key not in cache:
            cache[key] = _rows(self.W, gs.points, gj.points)
        return cache[key]

    def value(self, ctx, owner):
        s = self.primary(owner)
        Xs, ws = ctx.support(s)
        Xj, wj = ctx.support(self.j)
        if ctx.kind(s) == "grid" and ctx.kind(self.j) == "grid":
            M = self._dense(ctx, s, self.j)
            if M is not None:
                return self._c(ctx) * float(ws @ M @ wj)
        Xs, ws = ctx.support(s, positive=True)
        Xj, wj = ctx.support(self.j, positive=True)
        return self._c(ctx) * float(ws @ _integrate_pair(self.W, Xs, Xj, wj))

    def variation(self, ctx, owner, i):
        s = self.primary(owner)
        if i not in (s, self.j):
            return None
        g = ctx.grid(i)
        if i == s:
            if ctx.kind(self.j) == "grid":
                M = self._dense(ctx, s, self.j)
                if M is not None:
                    return self._c(ctx) * (M @ ctx.support(self.j)[1]).reshape(g.shape)
            Xj, wj = ctx.support(self.j, positive=True)
            out = _integrate_pair(self.W, g.points, Xj, wj)
        else:
            if ctx.kind(s) == "grid":
                M = self._dense(ctx, s, self.j)
                if M is not None:
                    return self._c(ctx) * (ctx.support(s)[1] @ M).reshape(g.shape)
            Xs, ws = ctx.support(s, positive=True)
            out = _integrate_pair_y(self.W, Xs, ws, g.points)
        return self._c(ctx) * out.reshape(g.shape)

    def dirac_grad(self, ctx, owner, i):
        s = self.primary(owner)
        h = ctx.state.species[i][None, :]
        if i == s:
            Xj, wj = ctx.support(self.j, positive=True)
            return self._c(ctx) * _integrate_pair(self.W, h, Xj, wj, "grad_x")[0]
        if i == self.j:
            Xs, ws = ctx.support(s, positive=True)
            return self._c(ctx) * _integrate_pair_y(self.W, Xs, ws, h, "grad_y")[0]
        return None

    def hess_local(self, ctx, owner, X):
        s = self.primary(owner)
        if owner == s:
            Xj, wj = ctx.support(self.j, positive=True)
            return self._c(ctx) * _integrate_pair(self.W, X, Xj, wj, "hess_xx")
        if owner == self.j:
            Xs, ws = ctx.support(s, positive=True)
            return self._c(ctx) * _integrate_pair_y(self.W, Xs, ws, X, "hess_yy")
        return None

    def hess_cross(self, ctx, owner, j, X, Y):
        s = self.primary(owner)
        if owner == s and j == self.j:
            return self._c(ctx) * _rows(self.W, X, Y, "hess_xy")
        if owner == self.j and j == s:
            return self._c(ctx) * np.swapaxes(_rows(self.W, Y, X, "hess_xy"), 0, 1).swapaxes(2, 3)
        return None

    def describe(self):
        return {"type": "cross_interaction", "j": self.j, "W": repr(self.W), "on": self.on,
                "coef": self.coef, "weight": self.weight if not callable(self.weight) else repr(self.weight)}


@dataclass
class SelfInteraction(EnergyTerm):
    """``coef * int int W(x - y) drho_s(x) drho_s(y)`` for an even ``W``."""

    W: ScalarFunction
    on: int | None = None
    coef: float = 1.0

    def __post_init__(self):
        if isinstance(self.W, TranslationKernel):
            self.W = self.W.fn
        if not getattr(self.W, "even", False):
            raise ConfigurationError("self-interaction kernel must be even")

    def _conv(self, ctx, s):
        """``sum_l W(x_k - x_l) m_l`` on the grid of species s."""
        g = ctx.grid(s)
        m = ctx.support(s)[1]
        cache = self.__dict__.setdefault("_cache", {})
        key = ("self", g.spec)
        if g.size * g.size <= DENSE_LIMIT:
            if key not in cache:
                idx = np.indices(g.shape).reshape(g.dim, -1)
                sl = tuple(idx[a][:, None] - idx[a][None, :] + g.shape[a] - 1 for a in range(g.dim))
                cache[key] = self._table(g)[sl]
            return (cache[key] @ m).reshape(g.shape)
        from scipy.signal import convolve
        if key not in cache:
            cache[key] = self._table(g)
        return convolve(m.reshape(g.shape), cache[key], mode="same", method="direct")

    def _table(self, g):
        offs = [np.arange(-(n - 1), n) * h for n, h in zip(g.shape, g.h)]
        mesh = np.meshgrid(*offs, indexing="ij")
        pts = np.stack([q.ravel() for q in mesh], axis=1)
        return self.W.value(pts).reshape(mesh[0].shape)

    def value(self, ctx, owner):
        s = self.primary(owner)
        if ctx.kind(s) == "grid":
            m = ctx.support(s)[1]
            return self.coef * float(m @ self._conv(ctx, s).ravel())
        X, w = ctx.support(s, positive=True)
        return self.coef * float(w @ _integrate_pair(TranslationKernel(self.W), X, X, w))

    def variation(self, ctx, owner, i):
        if i != self.primary(owner):
            return None
        return 2.0 * self.coef * self._conv(ctx, i)

    def dirac_grad(self, ctx, owner, i):
        if i != self.primary(owner):
            return None
        return np.zeros_like(ctx.state.species[i])

    def hess_local(self, ctx, owner, X):
        if owner != self.primary(owner):
            return None
        Xs, ws = ctx.support(owner, positive=True)
        return 2.0 * self.coef * _integrate_pair(TranslationKernel(self.W), X, Xs, ws, "hess_xx")

    def hess_cross(self, ctx, owner, j, X, Y):
        if owner != self.primary(owner) or j != owner:
            return None
        return 2.0 * self.coef * _rows(TranslationKernel(self.W), X, Y, "hess_xy")

    def describe(self):
        return {"type": "self_interaction", "W": repr(self.W), "on": self.on, "coef": self.coef}


@dataclass
class Diffusion(EnergyTerm):
    """``coef * alpha * int U_m(rho)`` with ``U_1 = r log r`` and ``U_m = r^m/(m-1)``."""

    m: float = 1.0
    alpha: float = 1.0
    on: int | None = None
    coef: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise ConfigurationError("diffusion exponent must be >= 1")
        if not self.alpha > 0:
            raise ConfigurationError("diffusion strength must be positive")

    def density_value(self, rho):
        if self.m == 1:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(rho > 0, rho * np.log(np.where(rho > 0, rho, 1.0)), 0.0)
        return rho ** self.m / (self.m - 1)

    def derivative(self, rho):
        if self.m == 1:
            return np.log(np.maximum(rho, LOG_FLOOR)) + 1.0
        return self.m * rho ** (self.m - 1) / (self.m - 1)

    def pressure_slope(self, rho):
        """``U_m''(rho) * rho``, the effective diffusivity per unit ``alpha``."""
        if self.m == 1:
            return np.ones_like(rho)
        return self.m * rho ** (self.m - 1)

    def value(self, ctx, owner):
        s = self.primary(owner)
        if ctx.kind(s) != "grid":
            raise ConfigurationError("diffusion needs a grid species")
        rho = ctx.state.species[s]
        return self.coef * self.alpha * float(self.density_value(rho.values).sum() * rho.grid.vol)

    def variation(self, ctx, owner, i):
        if i != self.primary(owner):
            return None
        return self.coef * self.alpha * self.derivative(ctx.state.species[i].values)

    def hess_local(self, ctx, owner, X):
        if owner == self.primary(owner):
            raise ConfigurationError("second-order form is undefined for diffusion terms")
        return None

    def describe(self):
        return {"type": "diffusion", "m": self.m, "alpha": self.alpha, "on": self.on, "coef": self.coef}


@dataclass
class BilinearCoupling(EnergyTerm):
    """``coef * sign * int int x_s^T A x_j drho_s drho_j``."""

    j: int
    A: np.ndarray
    sign: float = 1.0
    on: int | None = None
    coef: float = 1.0

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.sign not in (1, -1, 1.0, -1.0):
            raise ConfigurationError("bilinear sign must be +1 or -1")

    def partners(self, owner):
        return (self.primary(owner), self.j)

    def _c(self):
        return self.coef * self.sign

    def value(self, ctx, owner):
        s = self.primary(owner)
        return self._c() * float(ctx.mean(s) @ self.A @ ctx.mean(self.j))

    def variation(self, ctx, owner, i):
        s = self.primary(owner)
        g = ctx.grid(i)
        if i == s:
            vec = self.A @ ctx.mean(self.j)
        elif i == self.j:
            vec = self.A.T @ ctx.mean(s)
        else:
            return None
        return self._c() * (g.points @ vec).reshape(g.shape)

    def dirac_grad(self, ctx, owner, i):
        s = self.primary(owner)
        if i == s:
            return self._c() * (self.A @ ctx.mean(self.j))
        if i == self.j:
            return self._c() * (self.A.T @ ctx.mean(s))
        return None

    def hess_local(self, ctx, owner, X):
        return None

    def hess_cross(self, ctx, owner, j, X, Y):
        s = self.primary(owner)
        if owner == s and j == self.j:
            B = self.A
        elif owner == self.j and j == s:
            B = self.A.T
        else:
            return None
        return self._c() * np.broadcast_to(B, (X.shape[0], Y.shape[0]) + B.shape)

    def describe(self):
        return {"type": "bilinear", "j": self.j, "A": self.A.tolist(), "sign": self.sign,
                "on": self.on, "coef": self.coef}


@dataclass
class KL(EnergyTerm):
    """``coef * alpha * int rho log(rho / ref)``; ``ref`` is renormalised on the grid.

    ``reference`` is a :class:`DensityField` or a callable returning the
    (unnormalised) log-density at points (K, d).
    """

    reference: object
    alpha: float = 1.0
    on: int | None = None
    coef: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError("KL strength must be positive")

    def log_reference(self, g: Grid) -> np.ndarray:
        cache = self.__dict__.setdefault("_cache", {})
        if g.spec not in cache:
            if isinstance(self.reference, DensityField):
                if self.reference.grid.spec != g.spec:
                    raise ConfigurationError("KL reference lives on another grid")
                with np.errstate(divide="ignore"):
                    lr = np.log(self.reference.values)
            else:
                lr = g.evaluate(self.reference)
            top = lr.max()
            lr = lr - (top + math.log(np.exp(lr - top).sum() * g.vol))
            cache[g.spec] = np.maximum(lr, math.log(LOG_FLOOR))
        return cache[g.spec]

    def value(self, ctx, owner):
        s = self.primary(owner)
        rho = ctx.state.species[s]
        lr = self.log_reference(rho.grid)
        v = rho.values
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.where(v > 0, v * (np.log(np.where(v > 0, v, 1.0)) - lr), 0.0)
        return self.coef * self.alpha * float(dens.sum() * rho.grid.vol)

    def variation(self, ctx, owner, i):
        if i != self.primary(owner):
            return None
        rho = ctx.state.species[i]
        return self.coef * self.alpha * (np.log(np.maximum(rho.values, LOG_FLOOR))
                                         - self.log_reference(rho.grid) + 1.0)

    def hess_local(self, ctx, owner, X):
        if owner == self.primary(owner):
            raise ConfigurationError("second-order form is undefined for KL terms")
        return None

    def describe(self):
        return {"type": "kl", "alpha": self.alpha, "on": self.on, "coef": self.coef}


@dataclass
class FiniteDimCost(EnergyTerm):
    """Lifted cost ``coef * weight * int f(x_B) d(prod_{b in B} rho_b)``.

    ``f`` maps concatenated coordinates (P, sum d_b) to (P,); ``grad``
    (optional) returns (P, sum d_b).  ``block`` lists the species in
    the order their coordinates are concatenated.
    """

    f: Callable
    block: Sequence[int]
    grad: Callable | None = None
    weight: Weight = 1.0
    coef: float = 1.0

    def partners(self, owner):
        return tuple(self.block)

    def _grad(self, Z):
        if self.grad is not None:
            return np.asarray(self.grad(Z), dtype=float)
        return fd_gradient(self.f, Z)

    def _offsets(self, ctx):
        dims = [ctx.state.dim(b) for b in self.block]
        return np.concatenate([[0], np.cumsum(dims)]), dims

    def _expect(self, ctx, fixed: dict, fn, points_shape):
        """Average ``fn`` over the product of species not in ``fixed``.

        ``fixed`` maps a block position to an array of points (K, d); the
        result has leading dimension K (only one fixed block may vary).
        """
        off, dims = self._offsets(ctx)
        free = [p for p in range(len(self.block)) if p not in fixed]
        sups = [ctx.support(self.block[p], positive=True) for p in free]
        K = points_shape
        combos = list(itertools.product(*[range(len(s[1])) for s in sups])) if free else [()]
        T = len(combos)
        Z = np.empty((K * T, off[-1]))
        wts = np.ones(T)
        for p, pts in fixed.items():
            Z[:, off[p]:off[p + 1]] = np.repeat(pts, T, axis=0) if pts.shape[0] == K else np.tile(pts, (K * T, 1))
        for q, (p, (X, w)) in enumerate(zip(free, sups)):
            idx = np.array([c[q] for c in combos], dtype=int)
            Z[:, off[p]:off[p + 1]] = np.tile(X[idx], (K, 1))
            wts = wts * w[idx]
        vals = fn(Z)
        vals = vals.reshape((K, T) + vals.shape[1:])
        return np.tensordot(wts, vals, axes=([0], [1]))

    def value(self, ctx, owner):
        c = self.coef * ctx.weight(self.weight)
        return c * float(self._expect(ctx, {}, self.f, 1)[0])

    def variation(self, ctx, owner, i):
        if i not in self.block:
            return None
        p = list(self.block).index(i)
        g = ctx.grid(i)
        c = self.coef * ctx.weight(self.weight)
        return c * self._expect(ctx, {p: g.points}, self.f, g.size).reshape(g.shape)

    def dirac_grad(self, ctx, owner, i):
        if i not in self.block:
            return None
        p = list(self.block).index(i)
        off, _ = self._offsets(ctx)
        c = self.coef * ctx.weight(self.weight)
        G = self._expect(ctx, {p: ctx.state.species[i][None, :]}, self._grad, 1)
        return c * G[0, off[p]:off[p + 1]]

    def _hess_full(self, Z):
        return fd_hessian(self._grad, Z)

    def hess_local(self, ctx, owner, X):
        if owner not in self.block:
            return None
        p = list(self.block).index(owner)
        off, _ = self._offsets(ctx)
        c = self.coef * ctx.weight(self.weight)
        H = self._expect(ctx, {p: X}, self._hess_full, X.shape[0])
        return c * H[:, off[p]:off[p + 1], off[p]:off[p + 1]]

    def hess_cross(self, ctx, owner, j, X, Y):
        if owner not in self.block or j not in self.block or j == owner:
            return None
        p, q = list(self.block).index(owner), list(self.block).index(j)
        off, _ = self._offsets(ctx)
        c = self.coef * ctx.weight(self.weight)
        K, L = X.shape[0], Y.shape[0]
        out = np.empty((K, L, off[p + 1] - off[p], off[q + 1] - off[q]))
        for l in range(L):
            H = self._expect(ctx, {p: X, q: Y[l:l + 1]}, self._hess_full, K)
            out[:, l] = H[:, off[p]:off[p + 1], off[q]:off[q + 1]]
        return c * out

    def describe(self):
        return {"type": "finite_dim_cost", "block": list(self.block), "coef": self.coef}


# ---------------------------------------------------------------------------
# allocation weights

def softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = np.asarray(scores, dtype=float)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class AllocationModel:
    """Softmax allocation of populations over providers.

    ``a_ij = exp(eta U_ij) / sum_m exp(eta U_im)`` with
    ``U_ij = int u_ij(x, h_j) drho_i(x)``.

    Parameters
    ----------
    populations, providers : list of int
        Species indices of the grid populations and point-mass providers.
    utilities : nested list of PairKernel
        ``utilities[a][b]`` is ``u(x, h)`` for population ``a`` and provider ``b``.
    eta : float
        Inverse temperature.
    """

    def __init__(self, populations, providers, utilities, eta: float):
        self.populations = list(populations)
        self.providers = list(providers)
        self.utilities = utilities
        self.eta = float(eta)
        if len(utilities) != len(self.populations) or any(len(r) != len(self.providers) for r in utilities):
            raise ConfigurationError("utility table must be populations x providers")

    def expected(self, state: SystemState) -> np.ndarray:
        U = np.empty((len(self.populations), len(self.providers)))
        for a, i in enumerate(self.populations):
            rho = state.species[i]
            if isinstance(rho, DensityField):
                X, w = rho.grid.points, rho.cell_masses().ravel()
            else:
                X, w = np.atleast_2d(rho), np.ones(1)
            for b, j in enumerate(self.providers):
                h = np.broadcast_to(state.species[j], X.shape[:1] + state.species[j].shape)
                U[a, b] = w @ self.utilities[a][b].value(X, h)
        return U

    def weights(self, state: SystemState) -> np.ndarray:
        key = ("allocation", id(self))
        if key not in state.cache:
            state.cache[key] = softmax_rows(self.eta * self.expected(state))
        return state.cache[key]


@dataclass(frozen=True)
class AllocationWeight:
    """Callable weight ``a_ij`` read from an :class:`AllocationModel` (frozen in derivatives)."""

    model: AllocationModel
    population: int
    provider: int

    def __call__(self, state):
        a = self.model.populations.index(self.population)
        b = self.model.providers.index(self.provider)
        return self.model.weights(state)[a, b]

    def __repr__(self):
        return f"a[{self.population},{self.provider}]"


def allocation_weights(state: SystemState, utilities, eta: float,
                       populations=None, providers=None) -> np.ndarray:
    """Allocation matrix (populations x providers) for the current state.

    Populations default to the grid species and providers to the
    point-mass species, both in index order.
    """
    if populations is None:
        populations = [i for i in range(state.n) if state.is_grid(i)]
    if providers is None:
        providers = [i for i in range(state.n) if not state.is_grid(i)]
    return AllocationModel(populations, providers, utilities, eta).weights(state)


# ---------------------------------------------------------------------------
# the system

@dataclass
class EnergySpec:
    """Energies of an ``n``-species system.

    Parameters
    ----------
    terms : list of list of EnergyTerm
        ``terms[i]`` sums to ``F_i``.
    dirac_species : set of int
        Species evolved as point masses; they may not carry diffusion or
        KL terms.
    names : list of str, optional
    """

    terms: list
    dirac_species: frozenset = frozenset()
    names: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dirac_species = frozenset(self.dirac_species)
        n = self.n
        if self.names is None:
            self.names = [f"species{i + 1}" for i in range(n)]
        for i, ts in enumerate(self.terms):
            for t in ts:
                on = t.primary(i)
                if not 0 <= on < n:
                    raise ConfigurationError(f"term {t.describe()} acts on unknown species {on}")
                j = getattr(t, "j", None)
                if j is not None:
                    if not 0 <= j < n:
                        raise ConfigurationError(f"term partner {j} out of range")
                    if j == on:
                        raise ConfigurationError("pair terms need distinct species (use SelfInteraction)")
                if isinstance(t, (Diffusion, KL)) and on in self.dirac_species:
                    raise ConfigurationError("point-mass species cannot carry diffusion or KL terms")
                if isinstance(t, FiniteDimCost) and any(not 0 <= b < n for b in t.block):
                    raise ConfigurationError("finite-dimensional cost block out of range")
        for d in self.dirac_species:
            if not 0 <= d < n:
                raise ConfigurationError(f"dirac species {d} out of range")

    @property
    def n(self) -> int:
        return len(self.terms)

    def has_diffusion(self) -> bool:
        return any(isinstance(t, (Diffusion, KL)) for ts in self.terms for t in ts)

    def diffusion_terms(self, i: int):
        return [t for t in self.terms[i] if isinstance(t, (Diffusion, KL)) and t.primary(i) == i]

    def check_state(self, state: SystemState):
        if state.n != self.n:
            raise ConfigurationError(f"state has {state.n} species, energy expects {self.n}")
        for i in range(self.n):
            is_dirac = not isinstance(state.species[i], (DensityField, DiscreteMeasure))
            if (i in self.dirac_species) != is_dirac:
                raise ConfigurationError(f"species {i} kind does not match the energy specification")

    def describe(self) -> list:
        return [[t.describe() for t in ts] for ts in self.terms]


def _ctx(spec, state, ctx):
    return ctx if ctx is not None else Context(spec, state)


def first_variation(spec: EnergySpec, state: SystemState, i: int, ctx: Context | None = None) -> np.ndarray:
    """``dF_i / drho_i`` at the cell centres of species ``i``'s grid."""
    ctx = _ctx(spec, state, ctx)
    if not isinstance(state.species[i], DensityField):
        raise ConfigurationError("first_variation is defined for grid species; use dirac_gradient")
    g = state.species[i].grid
    out = np.zeros(g.shape)
    for t in spec.terms[i]:
        v = t.variation(ctx, i, i)
        if v is not None:
            out += v
    return out


def dirac_gradient(spec: EnergySpec, state: SystemState, i: int, ctx: Context | None = None) -> np.ndarray:
    """``dF_i / dh_i`` for a point-mass species located at ``h_i``."""
    ctx = _ctx(spec, state, ctx)
    h = state.species[i]
    out = np.zeros_like(h)
    for t in spec.terms[i]:
        g = t.dirac_grad(ctx, i, i)
        if g is not None:
            out += g
    return out


def assemble_velocity(spec: EnergySpec, state: SystemState, ctx: Context | None = None) -> list:
    """Velocities of all species.

    Grid species get a :class:`VectorField` ``-grad(first_variation)``;
    point-mass species get the array ``-dF_i/dh_i``.
    """
    ctx = _ctx(spec, state, ctx)
    out = []
    for i in range(spec.n):
        if isinstance(state.species[i], DensityField):
            g = state.species[i].grid
            out.append(VectorField(g, -gradient(first_variation(spec, state, i, ctx), g)))
        else:
            out.append(-dirac_gradient(spec, state, i, ctx))
    return out


def energy_value(spec: EnergySpec, state: SystemState, i: int | None = None,
                 ctx: Context | None = None):
    """Value of ``F_i`` (or all values as an array when ``i`` is None)."""
    ctx = _ctx(spec, state, ctx)
    if i is None:
        return np.array([energy_value(spec, state, k, ctx) for k in range(spec.n)])
    return float(sum(t.value(ctx, i) for t in spec.terms[i]))


def velocity_oracle(spec: EnergySpec, state: SystemState, velocities=None):
    """Per-species callables ``points -> velocities`` for pairing integrals.

    Grid velocities are interpolated multilinearly with constant
    extension outside the hull of cell centres.
    """
    if velocities is None:
        velocities = assemble_velocity(spec, state)
    fns = []
    for v in velocities:
        if isinstance(v, VectorField):
            fns.append(lambda P, v=v: v.at(P))
        else:
            fns.append(lambda P, v=v: np.broadcast_to(v, (np.atleast_2d(P).shape[0], v.shape[0])))
    return fns
