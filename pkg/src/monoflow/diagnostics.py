"""Lyapunov functionals, moment bounds, Nash residuals and rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .energy import (Context, EnergySpec, Potential, assemble_velocity, dirac_gradient,
                     first_variation)
from .errors import ConfigurationError
from .grid import DensityField, VectorField, gaussian_density, gradient
from .state import SystemState
from .transport import DiscreteMeasure, joint_w2


def lyapunov_D(spec: EnergySpec, state: SystemState, velocities=None) -> float:
    """``D = 1/2 sum_i int |v_i|^2 drho_i``; a point mass contributes ``|v_i|^2 / 2``."""
    if velocities is None:
        velocities = assemble_velocity(spec, state)
    total = 0.0
    for rho, v in zip(state.species, velocities):
        if isinstance(v, VectorField):
            total += float(np.sum(v.norm_sq() * rho.values) * rho.grid.vol)
        else:
            total += float(np.sum(np.asarray(v) ** 2))
    return 0.5 * total


def second_moment(state) -> float:
    """``M = 1/2 sum_i int |x|^2 drho_i``, i.e. half the squared joint distance to the origin."""
    species = getattr(state, "species", state)
    total = 0.0
    for s in species:
        if isinstance(s, DensityField):
            total += float(s.cell_masses().ravel() @ np.sum(s.grid.points ** 2, axis=1))
        elif isinstance(s, DiscreteMeasure):
            total += s.second_moment()
        else:
            total += float(np.sum(np.asarray(s) ** 2))
    return 0.5 * total


def boundary_mass(state: SystemState) -> float:
    """Largest mass held by the outermost cell layer of any grid species."""
    out = 0.0
    for s in state.species:
        if isinstance(s, DensityField):
            out = max(out, float(s.cell_masses()[s.grid.boundary_mask()].sum()))
    return out


def _residual_gradient(spec, state, i, ctx):
    """Gradient of ``dF_i/drho_i``, exact for potentials and finite-difference otherwise."""
    g = state.species[i].grid
    xi = np.zeros(g.shape)
    exact = np.zeros((g.dim,) + tuple(g.shape))
    for t in spec.terms[i]:
        if isinstance(t, Potential) and t.primary(i) == i:
            exact += t.analytic_gradient(ctx, i, i)
            continue
        v = t.variation(ctx, i, i)
        if v is not None:
            xi += v
    return exact + gradient(xi, g)


def nash_residuals(spec: EnergySpec, state: SystemState, mass_floor: float = 1e-8) -> np.ndarray:
    """Per-species Euler-Lagrange residuals.

    For a grid species this is ``sqrt(int |grad dF_i/drho_i|^2 drho_i)``
    restricted to cells with ``rho_i >= mass_floor * max rho_i``.
    Potential terms use their exact gradient, so the residual measures
    the distance to the continuum optimality condition.  A point mass
    contributes ``|dF_i/dh_i|``.
    """
    ctx = Context(spec, state)
    out = np.empty(spec.n)
    for i, rho in enumerate(state.species):
        if isinstance(rho, DensityField):
            G = _residual_gradient(spec, state, i, ctx)
            keep = rho.values >= mass_floor * rho.values.max()
            w = np.where(keep, rho.values, 0.0) * rho.grid.vol
            out[i] = math.sqrt(float(np.sum(np.sum(G ** 2, axis=0) * w)))
        else:
            out[i] = float(np.linalg.norm(dirac_gradient(spec, state, i, ctx)))
    return out


def nash_residual(spec: EnergySpec, state: SystemState, mass_floor: float = 1e-8) -> float:
    """Largest per-species residual from :func:`nash_residuals`."""
    return float(nash_residuals(spec, state, mass_floor).max())


@dataclass
class RateFit:
    """Exponential fit ``y ~ exp(intercept - rate * t)``."""

    rate: float
    intercept: float
    r_squared: float
    window: tuple
    npoints: int = 0

    def to_dict(self):
        return {"rate": self.rate, "intercept": self.intercept, "r_squared": self.r_squared,
                "window": list(self.window), "npoints": self.npoints}


def _local_maxima(y):
    idx = [k for k in range(1, len(y) - 1) if y[k] >= y[k - 1] and y[k] >= y[k + 1] and y[k] > 0]
    return np.asarray(idx, dtype=int)


def fit_rate(t, y, window=None, envelope: bool = False) -> RateFit:
    """Least-squares fit of ``log|y|`` against ``t``.

    Parameters
    ----------
    t, y : array_like
        Samples; nonpositive ``|y|`` values are discarded.
    window : (float, float), optional
        Restrict to ``window[0] <= t <= window[1]``.
    envelope : bool
        Fit only the local maxima of ``|y|``, for oscillatory decay.
    """
    t = np.asarray(t, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if window is None:
        window = (float(t.min()), float(t.max()))
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    t, y = t[sel], y[sel]
    if envelope:
        idx = _local_maxima(y)
        t, y = t[idx], y[idx]
    keep = y > 0
    t, y = t[keep], y[keep]
    if t.size < 2:
        raise ConfigurationError("rate fit needs at least two positive samples")
    ly = np.log(y)
    slope, intercept = np.polyfit(t, ly, 1)
    resid = ly - (slope * t + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(-slope), float(intercept), r2, tuple(window), int(t.size))


# ---------------------------------------------------------------------------
# second-moment bounds

def dirac_moment_bound(spec: EnergySpec, lam: float, M0: float, dims) -> float:
    """Uniform bound on ``M(rho(t))`` for a lambda-monotone (lambda > 0) system.

    With ``c = 2 |v[delta_0](0)|`` the distance ``W = sqrt(2 M)`` obeys
    ``dW^2/dt <= -2 lam W^2 + c W``, so ``M(t) <= max(M0, c^2 / (8 lam^2))``.
    Requires an energy whose velocity is defined at all-Dirac states.
    """
    if not lam > 0:
        raise ConfigurationError("moment bound needs lambda > 0")
    state = SystemState(0.0, [np.zeros(d) for d in dims])
    ctx = Context(spec, state)
    v = np.concatenate([dirac_gradient(spec, state, i, ctx) for i in range(spec.n)])
    c = 2.0 * float(np.linalg.norm(v))
    return max(M0, c * c / (8.0 * lam * lam))


def mollified_moment_bound(spec: EnergySpec, state0: SystemState, lam: float, tau: float,
                           velocity_fn=None):
    """Bound ``sqrt(2 M(t)) <= c1 + c0 exp(-lam t)`` built from a Gaussian mollifier.

    ``rho^tau`` places a centred Gaussian of variance ``tau`` on every
    grid species (point masses at the origin).  With
    ``c_tau = (int |v[rho^tau]|^2 drho^tau)^{1/2}``,
    ``c0 = max(0, W(rho(0), rho^tau) - c_tau / lam)`` and
    ``c1 = c_tau / lam + W(rho^tau, delta_0)``.

    Returns
    -------
    callable
        ``t -> bound`` on ``sqrt(2 M(t))``.
    dict
        The constants.
    """
    if not lam > 0:
        raise ConfigurationError("moment bound needs lambda > 0")
    moll = []
    for s in state0.species:
        if isinstance(s, DensityField):
            moll.append(gaussian_density(s.grid, np.zeros(s.grid.dim), tau))
        else:
            moll.append(np.zeros_like(s))
    mstate = SystemState(0.0, moll)
    v = assemble_velocity(spec, mstate) if velocity_fn is None else velocity_fn(mstate)
    c_tau = math.sqrt(2.0 * lyapunov_D(spec, mstate, v))
    w0 = joint_w2(state0, mstate)
    to_origin = math.sqrt(2.0 * second_moment(mstate))
    c0 = max(0.0, w0 - c_tau / lam)
    c1 = c_tau / lam + to_origin
    consts = {"c_tau": c_tau, "c0": c0, "c1": c1, "w_moll_origin": to_origin}
    return (lambda t: c1 + c0 * np.exp(-lam * np.asarray(t))), consts
