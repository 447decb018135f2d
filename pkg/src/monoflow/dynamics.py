"""Explicit finite-volume time stepping of coupled gradient flows.

Grid species are advanced with a conservative upwind scheme,

    rho_k <- rho_k - dt/h (F_{k+1/2} - F_{k-1/2}),
    F_{k+1/2} = u+ rho_k^E + u- rho_{k+1}^W,

applied along every axis from the same state, with zero flux through
the box boundary.  The interface velocity is the compact difference
``u_{k+1/2} = -(xi_{k+1} - xi_k)/h`` of the first variation ``xi``,
which for affine ``xi`` equals the average of the cell-centred
velocities.  ``order=1`` uses cell values for ``rho^E, rho^W``;
``order=2`` uses a minmod-limited linear reconstruction.  Point-mass
species take explicit Euler steps with the velocity of the same state.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .diagnostics import boundary_mass, lyapunov_D, second_moment
from .energy import Context, EnergySpec, assemble_velocity, dirac_gradient, energy_value, first_variation
from .errors import BoundaryMassError, CFLViolationError, ConfigurationError, SimulationError
from .grid import DensityField, VectorField, write_csv, write_raw
from .state import SystemState
from .transport import joint_w2

log = logging.getLogger(__name__)

__all__ = ["SystemState", "Trajectory", "cfl_dt", "fv_step", "simulate", "interface_velocities"]

NEG_GUARD = -1e-13
CFL_EPS = 1e-12
#: cells lighter than this fraction of the peak do not restrict the advective step
CFL_MASS_FRACTION = 1e-12


def interface_velocities(xi: np.ndarray, grid) -> list[np.ndarray]:
    """Compact differences ``-(xi_{k+1} - xi_k)/h`` along every axis."""
    return [-np.diff(xi, axis=a) / grid.h[a] for a in range(grid.dim)]


def _max_speed(u_axis, rho, a, floor):
    """Largest |u| over interfaces whose upwind cell carries relevant mass."""
    n = rho.shape[a]
    lo = np.take(rho, np.arange(n - 1), axis=a)
    hi = np.take(rho, np.arange(1, n), axis=a)
    upwind = np.where(u_axis > 0, lo, hi)
    sel = upwind > floor
    return float(np.abs(u_axis[sel]).max()) if np.any(sel) else 0.0


def cfl_dt(state: SystemState, velocities, safety: float = 0.4, dt_max: float = math.inf,
           spec: EnergySpec | None = None) -> float:
    """Stable step size.

    ``dt = safety * min_a h_a / (2 max|v_a| + 1e-12)`` over grid species,
    where the maximum ignores cells lighter than ``1e-12`` of the peak
    density.  ``velocities`` holds, per species, a :class:`VectorField`,
    a list of interface-velocity arrays, or a point-mass velocity
    (ignored).  With ``spec`` given, diffusion-bearing species are also
    limited by ``safety * h^2 / (2 d alpha max(U''(rho) rho) + eps)``.
    Returns ``dt_max`` when every velocity vanishes.
    """
    dt = float(dt_max)
    for i, (rho, v) in enumerate(zip(state.species, velocities)):
        if not isinstance(rho, DensityField):
            continue
        g = rho.grid
        floor = CFL_MASS_FRACTION * rho.values.max()
        for a in range(g.dim):
            if isinstance(v, VectorField):
                comp = v.components[a]
                vmax = float(np.abs(comp[rho.values > floor]).max()) if np.any(rho.values > floor) else 0.0
            else:
                vmax = _max_speed(v[a], rho.values, a, floor)
            if vmax > 0:
                dt = min(dt, safety * g.h[a] / (2.0 * vmax + CFL_EPS))
        if spec is not None:
            for t in spec.diffusion_terms(i):
                slope = t.pressure_slope(rho.values).max() if hasattr(t, "pressure_slope") else 1.0
                rate = 2 * g.dim * abs(t.coef) * t.alpha * slope
                dt = min(dt, safety * float(np.min(g.h)) ** 2 / (rate + CFL_EPS))
    return dt


def _minmod3(a, b, c):
    s = np.sign(a)
    same = (np.sign(b) == s) & (np.sign(c) == s)
    return np.where(same, s * np.minimum(np.minimum(np.abs(a), np.abs(b)), np.abs(c)), 0.0)


def _faces(rho, a, order):
    """East/west reconstructions of ``rho`` along axis ``a``."""
    if order == 1:
        return rho, rho
    d = np.diff(rho, axis=a)
    n = rho.shape[a]
    slope = np.zeros_like(rho)
    inner = [slice(None)] * rho.ndim
    inner[a] = slice(1, n - 1)
    left = np.take(d, np.arange(0, n - 2), axis=a)
    right = np.take(d, np.arange(1, n - 1), axis=a)
    slope[tuple(inner)] = _minmod3(2 * left, 0.5 * (left + right), 2 * right)
    return rho + 0.5 * slope, rho - 0.5 * slope


def _fluxes(rho, u, order):
    fluxes = []
    for a, ua in enumerate(u):
        east, west = _faces(rho, a, order)
        n = rho.shape[a]
        e = np.take(east, np.arange(n - 1), axis=a)
        w = np.take(west, np.arange(1, n), axis=a)
        fluxes.append(np.maximum(ua, 0.0) * e + np.minimum(ua, 0.0) * w)
    return fluxes


def _divergence(fluxes, h, shape):
    div = np.zeros(shape)
    for a, F in enumerate(fluxes):
        pad = [(0, 0)] * len(shape)
        pad[a] = (1, 1)
        Fp = np.pad(F, pad)
        div += np.diff(Fp, axis=a) / h[a]
    return div


def _limit_outflow(rho, fluxes, h, dt):
    """Scale fluxes leaving a cell so that it cannot be emptied below zero."""
    out = np.zeros_like(rho)
    for a, F in enumerate(fluxes):
        pad = [(0, 0)] * rho.ndim
        pad[a] = (1, 1)
        Fp = np.pad(F, pad)
        n = rho.shape[a]
        right = np.take(Fp, np.arange(1, n + 1), axis=a)
        left = np.take(Fp, np.arange(0, n), axis=a)
        out += (np.maximum(right, 0.0) + np.maximum(-left, 0.0)) / h[a]
    out *= dt
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(out > rho, rho / np.where(out > 0, out, 1.0), 1.0)
    if np.all(theta == 1.0):
        return fluxes, 0
    limited = []
    for a, F in enumerate(fluxes):
        n = rho.shape[a]
        th_lo = np.take(theta, np.arange(n - 1), axis=a)
        th_hi = np.take(theta, np.arange(1, n), axis=a)
        limited.append(np.where(F > 0, F * th_lo, F * th_hi))
    return limited, int(np.sum(theta < 1.0))


def _step_arrays(spec, state, ctx, order):
    """Interface velocities for grid species and velocities for point masses."""
    vel = []
    for i, rho in enumerate(state.species):
        if isinstance(rho, DensityField):
            xi = first_variation(spec, state, i, ctx)
            vel.append(interface_velocities(xi, rho.grid))
        else:
            vel.append(-dirac_gradient(spec, state, i, ctx))
    return vel


def fv_step(spec: EnergySpec, state: SystemState, dt: float, order: int = 1,
            velocities=None, ctx: Context | None = None) -> SystemState:
    """Advance every species by one explicit step of size ``dt``.

    Raises
    ------
    CFLViolationError
        If a density value drops below ``-1e-13`` (the step was too large).
    """
    if order not in (1, 2):
        raise ConfigurationError("order must be 1 or 2")
    if ctx is None:
        ctx = Context(spec, state)
    if velocities is None:
        velocities = _step_arrays(spec, state, ctx, order)
    new = []
    for rho, v in zip(state.species, velocities):
        if isinstance(rho, DensityField):
            g = rho.grid
            fluxes = _fluxes(rho.values, v, order)
            fluxes, _ = _limit_outflow(rho.values, fluxes, g.h, dt)
            vals = rho.values - dt * _divergence(fluxes, g.h, rho.values.shape)
            if vals.min() < NEG_GUARD:
                raise CFLViolationError(f"negative density {vals.min():.3e}", state.t)
            new.append(DensityField(g, np.maximum(vals, 0.0), check=False))
        else:
            new.append(rho + dt * np.asarray(v))
    return SystemState(state.t + dt, new)


@dataclass
class Trajectory:
    """Recorded time series and snapshots of a run."""

    times: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        return np.asarray(self.series[name], dtype=float)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)

    @property
    def final(self) -> SystemState:
        return self.snapshots[-1]

    def columns(self) -> list[str]:
        return ["t"] + list(self.series)

    def to_csv(self, path):
        cols = self.columns()
        data = np.column_stack([self.t] + [self.column(c) for c in self.series])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")

    def write_snapshots(self, outdir, names=None, raw: bool = True):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        for k, st in enumerate(self.snapshots):
            for i, s in enumerate(st.species):
                name = names[i] if names else f"species{i + 1}"
                stem = outdir / f"snap_{name}_{k:04d}"
                if isinstance(s, DensityField):
                    write_csv(stem.with_suffix(".csv"), s)
                    if raw:
                        write_raw(stem.with_suffix(".bin"), s, {"t": st.t})
                else:
                    np.savetxt(stem.with_suffix(".csv"), s[None, :], delimiter=",",
                               header=",".join(f"h{a}" for a in range(s.shape[0])), comments="",
                               fmt="%.17g")


def _record(traj, spec, state, ctx, reference, observers, max_support):
    vel = assemble_velocity(spec, state, ctx)
    F = energy_value(spec, state, None, ctx)
    traj.times.append(state.t)
    for i, f in enumerate(F):
        traj.series.setdefault(f"F_{i + 1}", []).append(float(f))
    traj.series.setdefault("D", []).append(lyapunov_D(spec, state, vel))
    traj.series.setdefault("M", []).append(second_moment(state))
    traj.series.setdefault("boundary_mass", []).append(boundary_mass(state))
    if reference is not None:
        traj.series.setdefault("w2_ref", []).append(joint_w2(state, reference, max_support))
    for name, fn in (observers or {}).items():
        traj.series.setdefault(name, []).append(float(fn(state)))
    traj.snapshots.append(state)


def simulate(spec: EnergySpec, initial: SystemState, T: float, *, cfl_safety: float = 0.4,
             dt_max: float | None = None, record_every: int | None = None,
             record_dt: float | None = None, order: int = 1, reference: SystemState | None = None,
             observers: dict[str, Callable] | None = None, boundary_warn: float = 1e-6,
             boundary_error: float = 1e-3, max_support: int = 1024,
             max_steps: int = 50_000_000) -> Trajectory:
    """Integrate the coupled flow from ``initial`` up to time ``T``.

    Parameters
    ----------
    spec : EnergySpec
    initial : SystemState
    T : float
        Final time; the last step is shortened to land on it exactly.
    cfl_safety : float
        Safety factor passed to :func:`cfl_dt`.
    dt_max : float, optional
        Upper bound on the step (default ``T / 100``).
    record_every : int, optional
        Record every this many steps.
    record_dt : float, optional
        Record at exact multiples of this time (steps are shortened to
        hit them).  Takes precedence over ``record_every``.
    order : {1, 2}
        Reconstruction order of the upwind fluxes.
    reference : SystemState, optional
        If given, the joint distance to it is recorded as ``w2_ref``.
    observers : dict, optional
        Extra scalar series ``name -> fn(state)``.

    Returns
    -------
    Trajectory
        Series ``F_i, D, M, boundary_mass`` (and ``w2_ref``, observers)
        plus snapshots at every record; ``meta`` holds mass drift, the
        smallest density seen, step counts and warnings.
    """
    spec.check_state(initial)
    if T < initial.t:
        raise ConfigurationError("final time precedes the initial time")
    if dt_max is None:
        dt_max = max(T - initial.t, 1e-12) / 100.0
    if record_dt is None and record_every is None:
        record_dt = max(T - initial.t, 1e-12) / 50.0
    traj = Trajectory()
    masses0 = [s.mass() if isinstance(s, DensityField) else None for s in initial.species]
    state = initial
    ctx = Context(spec, state)
    _record(traj, spec, state, ctx, reference, observers, max_support)
    warned = False
    mass_drift = 0.0
    min_density = min((float(s.values.min()) for s in state.grid_species), default=0.0)
    max_bmass = traj.series["boundary_mass"][-1]
    steps = 0
    limited_steps = 0
    k_rec = 1
    t0 = initial.t
    clock = time.perf_counter()
    while state.t < T - 1e-14 * max(1.0, abs(T)):
        if steps >= max_steps:
            raise SimulationError("step budget exhausted", state.t)
        vel = _step_arrays(spec, state, ctx, order)
        dt = cfl_dt(state, vel, cfl_safety, dt_max, spec)
        target = T
        if record_dt is not None:
            target = min(T, t0 + k_rec * record_dt)
        hit = dt >= target - state.t - 1e-14 * max(1.0, abs(target))
        if hit:
            dt = target - state.t
        if not dt > 0:
            raise SimulationError("time step collapsed to zero", state.t)
        state = fv_step(spec, state, dt, order, vel, ctx)
        if hit:
            state.t = target
        steps += 1
        ctx = Context(spec, state)
        for s, m0 in zip(state.species, masses0):
            if m0 is not None:
                mass_drift = max(mass_drift, abs(s.mass() - m0))
                min_density = min(min_density, float(s.values.min()))
                if not np.all(np.isfinite(s.values)):
                    raise SimulationError("non-finite density", state.t)
        bm = boundary_mass(state)
        max_bmass = max(max_bmass, bm)
        if bm > boundary_error:
            raise BoundaryMassError(f"boundary mass {bm:.3e} exceeds {boundary_error:g}; enlarge the box",
                                    state.t)
        if bm > boundary_warn and not warned:
            log.warning("boundary mass %.3e exceeds %.1e at t=%.4g", bm, boundary_warn, state.t)
            warned = True
        do_record = False
        if record_dt is not None:
            if hit:
                do_record = True
                k_rec += 1
        elif steps % record_every == 0 or state.t >= T - 1e-14 * max(1.0, abs(T)):
            do_record = True
        if do_record:
            _record(traj, spec, state, ctx, reference, observers, max_support)
    if traj.times[-1] != state.t:
        _record(traj, spec, state, ctx, reference, observers, max_support)
    traj.meta.update({
        "steps": steps,
        "mass_drift": mass_drift,
        "min_density": min_density,
        "max_boundary_mass": max_bmass,
        "boundary_warning": warned,
        "runtime_s": time.perf_counter() - clock,
        "order": order,
        "cfl_safety": cfl_safety,
    })
    return traj
