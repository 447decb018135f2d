"""Numerical certification of lambda-monotonicity.

A velocity map ``rho -> v[rho]`` of an n-species system is
lambda-monotone when, for every pair of states and an optimal plan
``gamma_i`` between each pair of species,

    -sum_i int <x - y, v_i[rho0](x) - v_i[rho1](y)> dgamma_i  >=  lam * sum_i W2(rho0_i, rho1_i)^2.

The left side is the dissipation pairing; sampling pairs and taking the
smallest ratio gives an empirical upper estimate of the best ``lam``.
Analytic lower bounds come from Hessians of kernels and from the
coupling matrix of strongly convex, Lipschitz-coupled kernels.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .energy import (Context, Diffusion, EnergySpec, KL, CrossInteraction, velocity_oracle)
from .errors import ConfigurationError
from .grid import DensityField, Grid, VectorField, gaussian_density
from .kernels import Morse, Power, PowerLaw, Quadratic, QuadraticCross, ScalarFunction, make_potential
from .state import SystemState
from .transport import (DEFAULT_COARSEN, DiscreteMeasure, TransportPlan, as_measure, coarsen,
                        w2_exact)

CAVEAT_DIFFUSION = ("diffusion or KL terms present: densities are not closed under point masses, "
                    "so each pair checks a single optimal plan only")


# ---------------------------------------------------------------------------
# pairing

def _evaluate(f, X):
    if isinstance(f, VectorField):
        return f.at(X)
    if callable(f):
        return np.asarray(f(X), dtype=float).reshape(X.shape)
    v = np.asarray(f, dtype=float)
    if v.ndim == 1:
        return np.broadcast_to(v, X.shape)
    if v.shape != X.shape:
        raise ConfigurationError("velocity array does not match plan support")
    return v


def dissipation_pairing(v0: Sequence, v1: Sequence, plans: Sequence[TransportPlan]):
    """Pairing ``-sum_i int <x - y, v0_i(x) - v1_i(y)> dgamma_i`` and ``sum_i int |x - y|^2 dgamma_i``.

    Parameters
    ----------
    v0, v1 : sequence
        Per species: a :class:`VectorField` (interpolated at plan atoms,
        constant beyond the outer cell centres), a callable
        ``points -> velocities``, a constant vector (point mass) or an
        array aligned with the plan atoms.
    plans : sequence of TransportPlan

    Returns
    -------
    pairing, sqdist : float

    Raises
    ------
    ConfigurationError
        If the plans have zero transport cost (identical states).
    """
    if not (len(v0) == len(v1) == len(plans)):
        raise ConfigurationError("velocity and plan lists differ in length")
    pairing = 0.0
    sqdist = 0.0
    for f0, f1, plan in zip(v0, v1, plans):
        X, Y = plan.source.points, plan.target.points
        a, b = plan.source.weights, plan.target.weights
        V0, V1 = _evaluate(f0, X), _evaluate(f1, Y)
        own = a @ np.sum(X * V0, axis=1) + b @ np.sum(Y * V1, axis=1)
        if plan.mass is None:
            mixed = (a @ X) @ (b @ V1) + (b @ Y) @ (a @ V0)
        else:
            G = plan.mass
            mixed = np.sum((G @ V1) * X) + np.sum((G.T @ V0) * Y)
        pairing -= own - mixed
        sqdist += plan.sq_cost()
    if not sqdist > 0:
        raise ConfigurationError("pairing needs distinct states (zero transport cost)")
    return float(pairing), float(sqdist)


def optimal_plans(state0, state1, max_support: int = DEFAULT_COARSEN) -> list[TransportPlan]:
    """Per-species optimal plans; grid species are coarsened to ``max_support`` atoms."""
    plans = []
    for x, y in zip(state0.species, state1.species):
        mx, my = as_measure(x, max_support), as_measure(y, max_support)
        plans.append(w2_exact(mx, my)[1])
    return plans


# ---------------------------------------------------------------------------
# samplers

@dataclass
class SpeciesLayout:
    """Where a species lives: on ``grid`` or, when ``grid`` is None, as a point in R^dim."""

    grid: Grid | None = None
    dim: int = 1

    @property
    def is_grid(self):
        return self.grid is not None


def layouts_from_state(state: SystemState) -> list[SpeciesLayout]:
    return [SpeciesLayout(s.grid, s.grid.dim) if isinstance(s, DensityField) else SpeciesLayout(None, s.shape[0])
            for s in state.species]


class PairSampler:
    """Base class; ``__call__(rng)`` returns ``(state0, state1, description)``."""

    kind = "base"

    def __init__(self, layouts: Sequence[SpeciesLayout], point_scale: float = 1.0):
        self.layouts = list(layouts)
        self.point_scale = float(point_scale)

    def _point(self, rng, lay):
        return rng.normal(scale=self.point_scale, size=lay.dim)

    def _density(self, rng, lay):
        raise NotImplementedError

    def sample_state(self, rng):
        species, desc = [], []
        for lay in self.layouts:
            if lay.is_grid:
                rho, d = self._density(rng, lay)
                species.append(rho)
                desc.append(d)
            else:
                p = self._point(rng, lay)
                species.append(p)
                desc.append("dirac@" + ",".join(f"{v:.4g}" for v in p))
        return SystemState(0.0, species), "; ".join(desc)

    def __call__(self, rng):
        s0, d0 = self.sample_state(rng)
        s1, d1 = self.sample_state(rng)
        return s0, s1, f"[{d0}] vs [{d1}]"


class DiracPairSampler(PairSampler):
    """Every species is a point mass with standard normal coordinates (times ``point_scale``)."""

    kind = "dirac"

    def __init__(self, dims: Sequence[int], point_scale: float = 1.0):
        super().__init__([SpeciesLayout(None, d) for d in dims], point_scale)


class GaussianPairSampler(PairSampler):
    """Discrete Gaussians with random means and covariances well inside the box.

    Means are uniform in the central ``mean_fraction`` of the box and
    standard deviations are uniform in ``std_fraction`` times the box
    width, with a random rotation in 2-d.
    """

    kind = "gaussian"

    def __init__(self, layouts, mean_fraction: float = 0.4, std_fraction=(0.05, 0.12),
                 point_scale: float = 1.0):
        super().__init__(layouts, point_scale)
        self.mean_fraction = float(mean_fraction)
        self.std_fraction = tuple(std_fraction)

    def _gaussian_params(self, rng, g):
        lo, hi = np.asarray(g.spec.lower), np.asarray(g.spec.upper)
        c, w = 0.5 * (lo + hi), hi - lo
        mean = c + (rng.random(g.dim) - 0.5) * self.mean_fraction * w
        std = rng.uniform(*self.std_fraction, size=g.dim) * w
        if g.dim == 2:
            th = rng.uniform(0, np.pi)
            R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            cov = R @ np.diag(std ** 2) @ R.T
        else:
            cov = np.diag(std ** 2)
        return mean, cov

    def _density(self, rng, lay):
        mean, cov = self._gaussian_params(rng, lay.grid)
        rho = gaussian_density(lay.grid, mean, cov)
        return rho, "gauss(m=" + ",".join(f"{v:.4g}" for v in mean) + ")"


class MixturePairSampler(GaussianPairSampler):
    """Two-component Gaussian mixtures with random weights."""

    kind = "mixture"

    def _density(self, rng, lay):
        g = lay.grid
        w = rng.uniform(0.2, 0.8)
        m1, c1 = self._gaussian_params(rng, g)
        m2, c2 = self._gaussian_params(rng, g)
        vals = w * gaussian_density(g, m1, c1).values + (1 - w) * gaussian_density(g, m2, c2).values
        rho = DensityField(g, vals / (vals.sum() * g.vol))
        return rho, f"mix(w={w:.3g})"


SAMPLERS = {"dirac": DiracPairSampler, "gaussian": GaussianPairSampler, "mixture": MixturePairSampler}


# ---------------------------------------------------------------------------
# lambda estimation

@dataclass
class MonotonicityReport:
    """Outcome of :func:`estimate_lambda`."""

    lambda_hat: float
    num_pairs: int
    worst_pair: dict
    per_pair: list
    caveat: str | None = None
    num_skipped: int = 0
    claimed_lambda: float | None = None
    violation: bool | None = None

    def to_dict(self) -> dict:
        return {
            "lambda_hat": self.lambda_hat,
            "num_pairs": self.num_pairs,
            "num_skipped": self.num_skipped,
            "caveat": self.caveat,
            "claimed_lambda": self.claimed_lambda,
            "violation": self.violation,
            "worst_pair": self.worst_pair,
            "pairs": self.per_pair,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _identical(s0: SystemState, s1: SystemState) -> bool:
    for x, y in zip(s0.species, s1.species):
        if isinstance(x, DensityField):
            if not (isinstance(y, DensityField) and x.grid == y.grid and np.array_equal(x.values, y.values)):
                return False
        elif not np.array_equal(np.asarray(x), np.asarray(y)):
            return False
    return True


def estimate_lambda(system, sampler: Callable, K: int, seed: int = 0, *,
                    claimed_lambda: float | None = None, max_support: int = DEFAULT_COARSEN,
                    tol: float = 1e-9) -> MonotonicityReport:
    """Smallest observed pairing ratio over ``K`` sampled state pairs.

    Parameters
    ----------
    system : EnergySpec or callable
        An energy (velocities via :func:`assemble_velocity`) or a map
        ``state -> per-species velocity oracles``.
    sampler : callable
        ``rng -> (state0, state1, description)``.
    K : int
        Number of pairs.
    seed : int
        Pair ``k`` uses the generator seeded with ``(seed, k)``.
    claimed_lambda : float, optional
        If given, ``violation`` flags ``lambda_hat < claimed_lambda - tol``.

    Returns
    -------
    MonotonicityReport
    """
    if K < 1:
        raise ConfigurationError("need at least one pair")
    is_spec = isinstance(system, EnergySpec)
    caveat = CAVEAT_DIFFUSION if is_spec and system.has_diffusion() else None
    per_pair = []
    skipped = 0
    for k in range(K):
        rng = np.random.default_rng([seed, k])
        s0, s1, desc = sampler(rng)
        if _identical(s0, s1):
            skipped += 1
            continue
        if is_spec:
            o0, o1 = velocity_oracle(system, s0), velocity_oracle(system, s1)
        else:
            o0, o1 = system(s0), system(s1)
        plans = optimal_plans(s0, s1, max_support)
        try:
            pairing, sq = dissipation_pairing(o0, o1, plans)
        except ConfigurationError:
            skipped += 1
            continue
        per_pair.append({"index": k, "seed": [seed, k], "ratio": pairing / sq, "pairing": pairing,
                         "sqdist": sq, "description": desc})
    if not per_pair:
        raise ConfigurationError("every sampled pair was degenerate")
    worst = min(per_pair, key=lambda r: r["ratio"])
    lam = worst["ratio"]
    violation = None if claimed_lambda is None else bool(lam < claimed_lambda - tol)
    return MonotonicityReport(lam, len(per_pair), {"seed": worst["seed"], "description": worst["description"],
                                                   "ratio": lam}, per_pair, caveat, skipped,
                              claimed_lambda, violation)


# ---------------------------------------------------------------------------
# analytic bounds

@dataclass
class LambdaMatrix:
    """Coupling matrix with ``c_i`` on the diagonal and ``-alpha_ij`` off it.

    ``c_i`` is the strong convexity of ``sum_j W_ij`` in ``x_i`` and
    ``alpha_ij`` the Lipschitz constant of ``grad_{x_i} W_ij`` in ``x_j``.
    """

    c: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim == 0:
            a = a * (np.ones((n, n)) - np.eye(n))
        if a.shape != (n, n):
            raise ConfigurationError("alpha must be n x n")
        if np.any(a < 0):
            raise ConfigurationError("Lipschitz constants must be nonnegative")
        self.alpha = a

    def matrix(self) -> np.ndarray:
        L = -self.alpha.copy()
        np.fill_diagonal(L, self.c)
        return L

    @classmethod
    def from_spec(cls, spec: EnergySpec) -> "LambdaMatrix":
        """Read ``c`` and ``alpha`` from quadratic cross kernels with constant weights."""
        n = spec.n
        c = np.zeros(n)
        alpha = np.zeros((n, n))
        for i, terms in enumerate(spec.terms):
            for t in terms:
                if not (isinstance(t, CrossInteraction) and isinstance(t.W, QuadraticCross)
                        and t.primary(i) == i and not callable(t.weight)):
                    raise ConfigurationError("lambda matrix needs quadratic_cross kernels owned by their species")
                s = t.coef * float(t.weight)
                c[i] += s * t.W.c
                alpha[i, t.j] += abs(s) * t.W.lipschitz()
        return cls(c, alpha)


def lambda_matrix_bound(L) -> float:
    """Smallest eigenvalue of the symmetric part of the coupling matrix."""
    M = L.matrix() if isinstance(L, LambdaMatrix) else np.asarray(L, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


def _grid_inf(fn, r_max, samples):
    r = np.linspace(0.0, r_max, samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = fn(r)
    vals = np.where(np.isnan(vals), np.inf, vals)
    k = int(np.argmin(vals))
    best = float(vals[k])
    lo, hi = r[max(k - 1, 0)], r[min(k + 1, samples - 1)]
    if hi > lo:
        res = minimize_scalar(lambda x: float(fn(np.array([x]))[0]), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        if res.success and res.fun < best:
            best = float(res.fun)
    return best


def kernel_hessian_bound(kernel, radius_max: float = 10.0, samples: int = 100_001, dim: int = 2,
                         **params) -> float:
    """Lower bound on the Hessian of a named radial kernel.

    ``quadratic`` and ``power`` use closed forms, ``power_law`` the
    smallest of its tangential and radial Hessian eigenvalues, and
    ``morse`` (squared-distance form) the split bound
    ``2 inf phi'(r^2) + 4 min(inf r^2 phi''(r^2), 0)``.  Infima are
    taken on a radius grid over ``[0, radius_max]`` and refined locally
    around the best grid point.
    """
    if isinstance(kernel, str):
        kernel = make_potential(kernel, **params)
    if isinstance(kernel, Quadratic):
        return kernel.k
    if isinstance(kernel, Power):
        k = kernel.k
        if k == 2:
            return 1.0
        if k > 2:
            return 0.0
        return min(0.0, _grid_inf(lambda r: np.minimum(kernel.f(r), (k - 1) * kernel.f(r)), radius_max, samples))
    if isinstance(kernel, PowerLaw):
        def lowest(r):
            tang, rad = kernel.radial_eigenvalues(r)
            return rad if dim == 1 else np.minimum(tang, rad)
        return _grid_inf(lowest, radius_max, samples)
    if isinstance(kernel, Morse):
        if kernel.norm != "l2sq":
            raise ConfigurationError("Hessian bound needs the smooth (squared-distance) Morse kernel")
        m1 = 2.0 * min(0.0, _grid_inf(lambda r: kernel._dphi(r * r), radius_max, samples))
        m2 = 4.0 * min(0.0, _grid_inf(lambda r: r * r * kernel._ddphi(r * r), radius_max, samples))
        return m1 + m2
    raise ConfigurationError(f"no Hessian bound for {kernel!r}")


# ---------------------------------------------------------------------------
# second-order form

@dataclass
class SecondOrderForm:
    """``lhs = local + cross`` and the weighted norm ``int |w|^2 drho``."""

    lhs: float
    norm: float
    local: float
    cross: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.norm


def second_order_form(spec: EnergySpec, state: SystemState, w: Sequence) -> SecondOrderForm:
    """Quadratic form of the second variations against a field ``w``.

    ``local = sum_i int <w_i, hess_x(dF_i/drho_i) w_i> drho_i`` and
    ``cross = sum_ij int int <w_i(x), d_x d_y (d^2 F_i / drho_i drho_j)(x, y) w_j(y)> drho_i drho_j``.
    ``w[i]`` is a callable on points or an array aligned with the
    positive-mass support of species ``i``.  Diffusion and KL terms are
    rejected because their second variation is not a kernel.
    """
    for i, terms in enumerate(spec.terms):
        for t in terms:
            if isinstance(t, (Diffusion, KL)) and t.primary(i) == i:
                raise ConfigurationError("second-order form is undefined for diffusion and KL terms")
    ctx = Context(spec, state)
    sups = [ctx.support(i, positive=True) for i in range(spec.n)]
    W = []
    for i, f in enumerate(w):
        X = sups[i][0]
        W.append(_evaluate(f, X) if not (isinstance(f, np.ndarray) and f.ndim == 2) else f)
    norm = sum(float(sups[i][1] @ np.sum(W[i] ** 2, axis=1)) for i in range(spec.n))
    local = 0.0
    cross = 0.0
    for i, terms in enumerate(spec.terms):
        Xi, wi = sups[i]
        for t in terms:
            H = t.hess_local(ctx, i, Xi)
            if H is not None:
                local += float(wi @ np.einsum("ka,kab,kb->k", W[i], H, W[i]))
            for j in range(spec.n):
                Xj, wj = sups[j]
                H2 = t.hess_cross(ctx, i, j, Xi, Xj)
                if H2 is not None:
                    inner = np.einsum("ka,klab,lb->kl", W[i], H2, W[j])
                    cross += float(wi @ inner @ wj)
    return SecondOrderForm(local + cross, norm, local, cross)


# ---------------------------------------------------------------------------
# lifting

def _supports(state):
    out = []
    for s in state.species:
        if isinstance(s, DensityField):
            w = s.cell_masses().ravel()
            keep = w > 0
            out.append((s.grid.points[keep], w[keep]))
        elif isinstance(s, DiscreteMeasure):
            out.append((s.points, s.weights))
        else:
            out.append((np.atleast_2d(s), np.ones(1)))
    return out


def lift_finite_dimensional(u: Callable, dims: Sequence[int]) -> Callable:
    """Lift a finite-dimensional vector field to the space of measures.

    For ``u = (u_1, ..., u_n)`` on ``R^{d_1 + ... + d_n}`` the lifted
    velocity of species ``i`` is
    ``v_i[rho](x_i) = -int u_i(x_i, x_{-i}) d(prod_{j != i} rho_j)``.
    When ``u`` is lambda-monotone so is the lift.

    Returns
    -------
    callable
        ``state -> list of per-species oracles points -> velocities``.
    """
    dims = list(dims)
    off = np.concatenate([[0], np.cumsum(dims)])

    def oracle(state):
        sups = _supports(state)

        def make(i):
            others = [j for j in range(len(dims)) if j != i]

            def v(X):
                X = np.atleast_2d(X)
                K = X.shape[0]
                combos = list(itertools.product(*[range(len(sups[j][1])) for j in others]))
                T = len(combos)
                Z = np.empty((K * T, off[-1]))
                wts = np.ones(T)
                Z[:, off[i]:off[i + 1]] = np.repeat(X, T, axis=0)
                for q, j in enumerate(others):
                    idx = np.array([c[q] for c in combos], dtype=int)
                    Z[:, off[j]:off[j + 1]] = np.tile(sups[j][0][idx], (K, 1))
                    wts = wts * sups[j][1][idx]
                U = np.asarray(u(Z), dtype=float)[:, off[i]:off[i + 1]]
                return -np.tensordot(wts, U.reshape(K, T, -1), axes=([0], [1]))

            return v

        return [make(i) for i in range(len(dims))]

    return oracle
