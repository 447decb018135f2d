from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from monoflow.diagnostics import fit_rate
from monoflow.dynamics import cfl_dt, fv_step, simulate
from monoflow.energy import BilinearCoupling, Diffusion, EnergySpec, Potential
from monoflow.errors import BoundaryMassError, ConfigurationError
from monoflow.grid import DensityField, GridSpec, VectorField, build_grid, gaussian_density
from monoflow.kernels import Quadratic, Quartic
from monoflow.state import SystemState
from monoflow.transport import joint_w2


def _line(n=128, lo=-4.0, hi=4.0):
    return build_grid(GridSpec(1, (lo,), (hi,), (n,)))


def test_cfl_examples():
    g = build_grid(GridSpec(1, (0,), (2,), (4,)))
    rho = DensityField(g, np.full(4, 0.5))
    st0 = SystemState(0, [rho])
    zero = VectorField(g, np.zeros((1, 4)))
    assert cfl_dt(st0, [zero], 0.5, dt_max=1e-2) == 1e-2
    five = VectorField(g, np.full((1, 4), 5.0))
    assert abs(cfl_dt(st0, [five], 0.5) - 0.025) < 1e-14
    g2 = build_grid(GridSpec(1, (0,), (2,), (8,)))
    st2 = SystemState(0, [DensityField(g2, np.full(8, 0.5))])
    assert abs(cfl_dt(st2, [VectorField(g2, np.full((1, 8), 5.0))], 0.5) - 0.0125) < 1e-14


def test_zero_velocity_leaves_state_bitwise():
    g = _line(64)
    rho = gaussian_density(g, [0.3], 0.5)
    st1 = fv_step(EnergySpec([[]]), SystemState(0, [rho]), 0.01)
    assert np.array_equal(st1.species[0].values, rho.values)
    st2 = fv_step(EnergySpec([[Potential(Quadratic(1.0))]]), SystemState(0, [rho]), 0.01,
                  velocities=[[np.zeros(63)]])
    assert np.array_equal(st2.species[0].values, rho.values)


@pytest.mark.parametrize("u", [0.7, -1.3])
def test_constant_velocity_moves_centre_of_mass(u):
    g = _line(200, -5, 5)
    rho = gaussian_density(g, [0.0], 0.2)
    spec = EnergySpec([[]])
    state = SystemState(0, [rho])
    dt = 0.4 * g.h[0] / abs(u)
    for _ in range(20):
        new = fv_step(spec, state, dt, velocities=[[np.full(199, u)]])
        assert abs(new.species[0].mean()[0] - state.species[0].mean()[0] - u * dt) < 1e-10
        state = new


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([1, 2]))
def test_step_preserves_mass_and_positivity(seed, order):
    r = np.random.default_rng(seed)
    g = build_grid(GridSpec(2, (-2, -2), (2, 2), (16, 16)))
    vals = r.random(g.shape) * (r.random(g.shape) > 0.3)
    vals[0, 0] += 1e-3
    rho = DensityField(g, vals / (vals.sum() * g.vol))
    spec = EnergySpec([[Potential(Quadratic(r.uniform(0.5, 3), center=r.normal(size=2))),
                        Potential(Quartic(r.uniform(0, 1)))]])
    state = SystemState(0, [rho])
    from monoflow.energy import Context
    from monoflow.dynamics import _step_arrays
    vel = _step_arrays(spec, state, Context(spec, state), order)
    dt = cfl_dt(state, vel, 0.4, 1.0, spec)
    new = fv_step(spec, state, dt, order, vel)
    assert new.species[0].values.min() >= 0
    assert abs(new.species[0].mass() - 1) < 1e-12


def test_dirac_relaxation_matches_exponential():
    lam = 1.5
    spec = EnergySpec([[Potential(Quadratic(lam))]], dirac_species={0})
    h0 = np.array([1.0, -2.0])
    traj = simulate(spec, SystemState(0, [h0]), 2.0, dt_max=1e-4, record_dt=0.5)
    np.testing.assert_allclose(traj.final.species[0], h0 * np.exp(-2 * lam), rtol=5e-4)
    D = traj.column("D")
    np.testing.assert_allclose(D, 0.5 * lam ** 2 * (h0 @ h0) * np.exp(-2 * lam * traj.t), rtol=1e-3)


def test_zero_sum_dirac_pair_matches_matrix_exponential():
    lam, a = 1.0, 2.0
    spec = EnergySpec([[Potential(Quadratic(lam)), BilinearCoupling(1, [[a]])],
                       [Potential(Quadratic(lam)), BilinearCoupling(0, [[a]], sign=-1)]], dirac_species={0, 1})
    z0 = np.array([0.4, -0.3])
    traj = simulate(spec, SystemState(0, [z0[:1], z0[1:]]), 1.0, dt_max=1e-5, record_dt=0.5)
    exact = expm(np.array([[-lam, -a], [a, -lam]]) * 1.0) @ z0
    got = np.concatenate(traj.final.species)
    np.testing.assert_allclose(got, exact, atol=1e-4)


def test_mass_conserved_over_a_run():
    g = build_grid(GridSpec(2, (-3, -3), (3, 3), (32, 32)))
    spec = EnergySpec([[Potential(Quadratic(1.0)), Diffusion(2.0, 0.5)]])
    traj = simulate(spec, SystemState(0, [gaussian_density(g, [0.8, -0.5], 0.3)]), 1.0, order=2)
    assert traj.meta["mass_drift"] <= 1e-12
    assert traj.meta["min_density"] >= 0
    assert traj.meta["steps"] > 10


def test_gibbs_relaxation_distance_decreases():
    g = _line(96)
    V = Quadratic(1.0)
    gibbs = SystemState(0, [DensityField.from_log(g, lambda X: -V.value(X))])
    spec = EnergySpec([[Potential(V), Diffusion(1.0, 1.0)]])
    traj = simulate(spec, SystemState(0, [gaussian_density(g, [1.2], 0.1)]), 3.0, record_dt=0.5,
                    reference=gibbs, order=2)
    w = traj.column("w2_ref")
    assert np.all(np.diff(w) < 0)
    assert w[-1] < 0.1 * w[0]


def _contraction_rate(n, order, means_a, means_b):
    lam = 1.0
    g = _line(n)
    spec = EnergySpec([[Potential(Quadratic(lam))], [Potential(Quadratic(lam))]])
    a = SystemState(0, [gaussian_density(g, [means_a[0]], 0.1), gaussian_density(g, [means_a[1]], 0.2)])
    b = SystemState(0, [gaussian_density(g, [means_b[0]], 0.15), gaussian_density(g, [means_b[1]], 0.05)])
    ta = simulate(spec, a, 3.0, record_dt=0.25, dt_max=0.01, order=order)
    tb = simulate(spec, b, 3.0, record_dt=0.25, dt_max=0.01, order=order)
    w = [joint_w2(x, y) for x, y in zip(ta.snapshots, tb.snapshots)]
    return fit_rate(ta.t, w, (0.5, 3.0)).rate, ta


def test_quadratic_contraction_rate():
    # both runs approach the minimiser from the same side, so the O(h)
    # upwind offset of a collapsed blob cancels in their distance
    rate, traj = _contraction_rate(128, 2, (1.5, -1.2), (0.6, -0.4))
    assert 0.9 <= rate <= 1.1
    assert np.all(np.diff(traj.column("D")) <= 1e-10)


@pytest.mark.slow
def test_contraction_rate_converges_under_refinement():
    # from opposite sides the two runs settle about one cell apart; the
    # bias shrinks with h
    coarse, _ = _contraction_rate(128, 2, (1.0, -0.8), (-0.5, 0.6))
    fine, _ = _contraction_rate(512, 2, (1.0, -0.8), (-0.5, 0.6))
    assert coarse < fine
    assert abs(fine - 1.0) < 0.02


def test_boundary_mass_error():
    g = _line(64, -2, 2)
    spec = EnergySpec([[Potential(Quadratic(4.0, center=[10.0]))]])
    with pytest.raises(BoundaryMassError):
        simulate(spec, SystemState(0, [gaussian_density(g, [0.0], 0.1)]), 5.0)


def test_simulate_rejects_bad_input():
    g = _line(16)
    spec = EnergySpec([[Potential(Quadratic())]])
    rho = gaussian_density(g, [0.0], 0.5)
    with pytest.raises(ConfigurationError):
        simulate(spec, SystemState(0, [np.zeros(1)]), 1.0)
    with pytest.raises(ConfigurationError):
        simulate(spec, SystemState(2.0, [rho]), 1.0)
    with pytest.raises(ConfigurationError):
        fv_step(spec, SystemState(0, [rho]), 0.1, order=3)


def test_trajectory_outputs(tmp_path):
    g = _line(32)
    spec = EnergySpec([[Potential(Quadratic())]])
    traj = simulate(spec, SystemState(0, [gaussian_density(g, [0.5], 0.3)]), 0.5, record_dt=0.25)
    np.testing.assert_allclose(traj.t, [0, 0.25, 0.5])
    traj.to_csv(tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header.split(",")[:3] == ["t", "F_1", "D"]
    traj.write_snapshots(tmp_path / "snap")
    assert len(list((tmp_path / "snap").glob("*.csv"))) == 3
