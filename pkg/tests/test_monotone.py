from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from monoflow.config import load_config
from monoflow.energy import (BilinearCoupling, CrossInteraction, Diffusion, EnergySpec, Potential,
                             SelfInteraction, velocity_oracle)
from monoflow.errors import ConfigurationError
from monoflow.grid import GridSpec, VectorField, build_grid, gaussian_density, gradient
from monoflow.kernels import Morse, Power, PowerLaw, Quadratic, QuadraticCross, Quartic, TranslationKernel
from monoflow.monotone import (DiracPairSampler, GaussianPairSampler, LambdaMatrix, MixturePairSampler,
                               SpeciesLayout, dissipation_pairing, estimate_lambda, kernel_hessian_bound,
                               lambda_matrix_bound, lift_finite_dimensional, optimal_plans, second_order_form)
from monoflow.state import SystemState
from monoflow.transport import DiscreteMeasure, product_plan, w2_exact

from oracles import random_measure


def _plan(seed, d=2):
    r = np.random.default_rng(seed)
    mu = DiscreteMeasure(*random_measure(r, 5, d))
    nu = DiscreteMeasure(*random_measure(r, 4, d))
    return w2_exact(mu, nu)[1]


# ---------------------------------------------------------------------------
# pairing

@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3))
def test_pairing_of_linear_field(seed, lam):
    plan = _plan(seed)
    p, sq = dissipation_pairing([lambda X: -lam * X], [lambda X: -lam * X], [plan])
    assert abs(p - lam * sq) < 1e-9 * (1 + abs(lam) * sq)


@given(st.integers(0, 2 ** 31 - 1))
def test_pairing_swap_invariance(seed):
    plan = _plan(seed)
    r = np.random.default_rng(seed + 1)
    M0, M1 = r.normal(size=(2, 2)), r.normal(size=(2, 2))
    f0, f1 = (lambda X: np.sin(X) @ M0), (lambda X: X ** 2 @ M1)
    p, sq = dissipation_pairing([f0], [f1], [plan])
    from monoflow.transport import TransportPlan
    swapped = TransportPlan(plan.target, plan.source, plan.mass.T)
    q, sq2 = dissipation_pairing([f1], [f0], [swapped])
    assert abs(p - q) < 1e-10 and abs(sq - sq2) < 1e-10


@given(st.integers(0, 2 ** 31 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_pairing_constant_shift_invariance(seed, c0, c1):
    plan = _plan(seed)
    f0, f1 = (lambda X: -X ** 3), (lambda X: np.cos(X))
    c = np.array([c0, c1])
    p, _ = dissipation_pairing([f0], [f1], [plan])
    q, _ = dissipation_pairing([lambda X: f0(X) + c], [lambda X: f1(X) + c], [plan])
    assert abs(p - q) < 1e-9 * (1 + abs(p))


def test_pairing_with_factored_product_plan_matches_dense():
    plan = _plan(7)
    pp = product_plan(plan.source, plan.target)
    from monoflow.transport import TransportPlan
    dense = TransportPlan(pp.source, pp.target, pp.dense())
    f0, f1 = (lambda X: np.tanh(X)), (lambda X: -X ** 2)
    a = dissipation_pairing([f0], [f1], [pp])
    b = dissipation_pairing([f0], [f1], [dense])
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_pairing_rejects_identical_states():
    m = DiscreteMeasure.dirac([1.0, 2.0])
    with pytest.raises(ConfigurationError):
        dissipation_pairing([np.zeros(2)], [np.zeros(2)], [w2_exact(m, m)[1]])


def _entropy_velocity(rho):
    return VectorField(rho.grid, gradient(-np.log(rho.values), rho.grid))


def test_entropy_pairing_depends_on_the_plan_1d():
    g = build_grid(GridSpec(1, (-5,), (5,), (256,)))
    r0, r1 = gaussian_density(g, [-0.8], 0.3), gaussian_density(g, [0.7], 0.6)
    v0, v1 = _entropy_velocity(r0), _entropy_velocity(r1)
    m0, m1 = DiscreteMeasure.from_density(r0), DiscreteMeasure.from_density(r1)
    prod, _ = dissipation_pairing([v0], [v1], [product_plan(m0, m1)])
    opt, _ = dissipation_pairing([v0], [v1], [w2_exact(m0, m1)[1]])
    assert abs(prod + 2.0) < 2e-2
    assert opt >= -1e-2


# ---------------------------------------------------------------------------
# lambda estimation

def _bilinear_diracs(lam, A1, A2):
    A1, A2 = np.atleast_2d(A1), np.atleast_2d(A2)
    return EnergySpec([[Potential(Quadratic(lam)), BilinearCoupling(1, A1)],
                       [Potential(Quadratic(lam)), BilinearCoupling(0, A2)]], dirac_species={0, 1})


def test_lifted_identity_is_one():
    rep = estimate_lambda(lift_finite_dimensional(lambda Z: Z, [1, 2]), DiracPairSampler([1, 2]), 50)
    assert abs(rep.lambda_hat - 1) < 1e-10
    assert rep.num_pairs == 50


def test_indefinite_coupling_is_caught():
    lam, a = 1.0, 2.0
    rep = estimate_lambda(_bilinear_diracs(lam, [[a]], [[a]]), DiracPairSampler([1, 1]), 50, claimed_lambda=lam)
    assert rep.lambda_hat < lam
    assert rep.violation is True
    # the worst pair aligns with the (1, 1) direction, giving lam - a
    assert rep.lambda_hat < lam - a + 0.05


def test_zero_sum_coupling_is_lambda_monotone():
    lam = 1.0
    A = np.random.default_rng(5).normal(size=(2, 2)) * 2
    rep = estimate_lambda(_bilinear_diracs(lam, A, -A.T), DiracPairSampler([2, 2]), 200, claimed_lambda=lam)
    assert rep.lambda_hat >= lam - 1e-6
    assert rep.violation is False


def _grid_layouts(n=2, cells=96):
    g = build_grid(GridSpec(1, (-4,), (4,), (cells,)))
    return [SpeciesLayout(g, 1) for _ in range(n)]


def test_additivity_on_shared_pairs():
    F = EnergySpec([[Potential(Quartic(0.3)), Potential(Quadratic(0.5))], [Potential(Quadratic(1.0))]])
    E = EnergySpec([[SelfInteraction(Morse()), BilinearCoupling(1, [[1.5]])],
                    [BilinearCoupling(0, [[1.5]], sign=-1)]])
    FE = EnergySpec([F.terms[0] + E.terms[0], F.terms[1] + E.terms[1]])
    s = GaussianPairSampler(_grid_layouts())
    lf, le, lfe = (estimate_lambda(x, s, 12, seed=3).lambda_hat for x in (F, E, FE))
    assert lfe >= lf + le - 1e-9


class _FrozenSampler(GaussianPairSampler):
    """Pairs that differ only in species 0."""

    def __call__(self, rng):
        s0, d0 = self.sample_state(rng)
        rho, d = self._density(rng, self.layouts[0])
        return s0, SystemState(0.0, [rho] + s0.species[1:]), d0 + " vs " + d


def test_single_species_variations_respect_lambda():
    lam = 1.0
    spec = EnergySpec([[Potential(Quadratic(lam)), BilinearCoupling(1, [[2.0]])],
                       [Potential(Quadratic(lam)), BilinearCoupling(0, [[2.0]], sign=-1)]])
    rep = estimate_lambda(spec, _FrozenSampler(_grid_layouts()), 15)
    assert rep.lambda_hat >= lam - 1e-6


def test_diffusion_preset_ratio_and_caveat():
    cfg = load_config("zero_sum_diffusion")
    rep = estimate_lambda(cfg.spec, GaussianPairSampler(cfg.layouts), 10, claimed_lambda=1.0)
    assert rep.caveat is not None
    assert rep.lambda_hat >= 1.0 - 5e-2


def test_mixture_sampler_runs_and_reports(tmp_path):
    spec = EnergySpec([[Potential(Quadratic(2.0))]])
    rep = estimate_lambda(spec, MixturePairSampler(_grid_layouts(1)), 5, seed=11)
    assert rep.lambda_hat == pytest.approx(2.0, abs=1e-9)
    d = json.loads(rep.to_json())
    assert d["num_pairs"] == 5 and d["worst_pair"]["seed"] == rep.worst_pair["seed"]
    again = estimate_lambda(spec, MixturePairSampler(_grid_layouts(1)), 5, seed=11)
    assert again.per_pair == rep.per_pair


def test_identical_pairs_are_skipped():
    class Same(DiracPairSampler):
        def __call__(self, rng):
            s, d = self.sample_state(rng)
            return s, s, d

    spec = EnergySpec([[Potential(Quadratic())]], dirac_species={0})
    with pytest.raises(ConfigurationError):
        estimate_lambda(spec, Same([1]), 3)
    with pytest.raises(ConfigurationError):
        estimate_lambda(spec, DiracPairSampler([1]), 0)


# ---------------------------------------------------------------------------
# analytic certificates

@pytest.mark.parametrize("c, alpha, expected", [([3.0], 0.0, 3.0), ([2.0, 2.0], 1.0, 1.0),
                                                ([1.0, 1.0], 2.0, -1.0)])
def test_lambda_matrix_examples(c, alpha, expected):
    assert lambda_matrix_bound(LambdaMatrix(c, alpha)) == pytest.approx(expected, abs=1e-15)


def test_lambda_matrix_validation_and_from_spec():
    with pytest.raises(ConfigurationError):
        LambdaMatrix([1.0, 1.0], [[0, -1], [1, 0]])
    cfg = load_config("lambda_matrix")
    lm = LambdaMatrix.from_spec(cfg.spec)
    assert lambda_matrix_bound(lm) == 1.0


def test_lambda_matrix_certificate_is_respected_by_sampling():
    spec = EnergySpec([[CrossInteraction(1, QuadraticCross(2.0, -1.0))],
                       [CrossInteraction(0, QuadraticCross(2.0, -1.0))]], dirac_species={0, 1})
    rep = estimate_lambda(spec, DiracPairSampler([1, 1]), 100)
    assert rep.lambda_hat >= lambda_matrix_bound(LambdaMatrix.from_spec(spec)) - 1e-9


def morse_bound_oracle(Cr, lr, Ca, la, r_max=10.0, n=10 ** 6):
    """Brute-force radial minimisation of the two Morse Hessian terms."""
    r = np.linspace(0.0, r_max, n)
    q = r * r
    d1 = -Cr / lr * np.exp(-q / lr) + Ca / la * np.exp(-q / la)
    d2 = Cr / lr ** 2 * np.exp(-q / lr) - Ca / la ** 2 * np.exp(-q / la)
    return 2 * min(0.0, d1.min()) + 4 * min(0.0, (q * d2).min())


def test_kernel_bounds():
    assert kernel_hessian_bound("power", k=2) == 1.0
    assert kernel_hessian_bound("power_law", a=4, b=2) == -1.0
    assert kernel_hessian_bound("quadratic", k=3.5) == 3.5
    got = kernel_hessian_bound("morse", Cr=8, lr=0.5, Ca=2, la=1)
    assert abs(got - morse_bound_oracle(8, 0.5, 2, 1)) < 1e-6
    assert got == pytest.approx(-28.443363094317483, abs=1e-9)


@pytest.mark.parametrize("V", [Morse(8, 0.5, 2, 1), PowerLaw(4, 2), PowerLaw(6, 3), Power(2), Power(3)], ids=repr)
def test_kernel_bound_is_a_lower_bound(V):
    bound = kernel_hessian_bound(V)
    X = np.random.default_rng(0).normal(size=(4000, 2)) * 2
    lows = np.linalg.eigvalsh(V.hess(X))[:, 0]
    assert lows.min() >= bound - 1e-9


def test_kernel_bound_rejects_l1_morse():
    with pytest.raises(ConfigurationError):
        kernel_hessian_bound(Morse(norm="l1"))


# ---------------------------------------------------------------------------
# second-order form

def test_second_order_zero_sum_cross_vanishes():
    g = build_grid(GridSpec(1, (-3,), (3,), (40,)))
    spec = EnergySpec([[Potential(Quadratic()), CrossInteraction(1, TranslationKernel(Morse()))],
                       [Potential(Quadratic()), CrossInteraction(0, TranslationKernel(Morse()), coef=-1.0)]])
    state = SystemState(0, [gaussian_density(g, [0.4], 0.2), gaussian_density(g, [-0.3], 0.3)])
    form = second_order_form(spec, state, [lambda X: np.sin(X), lambda X: X ** 2 - 1])
    assert abs(form.cross) < 1e-10 * (1 + abs(form.local))


def test_second_order_potential_only():
    lam = 1.7
    g = build_grid(GridSpec(2, (-3, -3), (3, 3), (20, 20)))
    state = SystemState(0, [gaussian_density(g, [0.2, 0.1], 0.4)])
    form = second_order_form(EnergySpec([[Potential(Quadratic(lam))]]), state, [lambda X: np.cos(X) + X])
    assert form.lhs == pytest.approx(lam * form.norm, rel=1e-14)
    with pytest.raises(ConfigurationError):
        second_order_form(EnergySpec([[Diffusion(1.0, 1.0)]]), state, [lambda X: X])


def test_second_order_matches_first_order_on_translated_gaussians():
    lam, a = 1.0, 2.0
    g = build_grid(GridSpec(1, (-5,), (5,), (160,)))
    h = g.h[0]
    spec = EnergySpec([[Potential(Quadratic(lam)), BilinearCoupling(1, [[a]])],
                       [Potential(Quadratic(lam)), BilinearCoupling(0, [[a]])]])
    state0 = SystemState(0, [gaussian_density(g, [0.3], 0.2), gaussian_density(g, [-0.2], 0.3)])
    shifts = [5 * h, 3 * h]
    state1 = SystemState(0, [gaussian_density(g, [0.3 + shifts[0]], 0.2),
                             gaussian_density(g, [-0.2 + shifts[1]], 0.3)])
    pairing, sq = dissipation_pairing(velocity_oracle(spec, state0), velocity_oracle(spec, state1),
                                      optimal_plans(state0, state1))
    form = second_order_form(spec, state0, [np.array([s]) for s in shifts])
    assert pairing / sq == pytest.approx(form.ratio, abs=1e-6)
    # and the closed form lam |w|^2 + 2 a w1 w2
    w1, w2 = shifts
    assert form.lhs == pytest.approx(lam * (w1 ** 2 + w2 ** 2) + 2 * a * w1 * w2, rel=1e-9)


# ---------------------------------------------------------------------------
# lifting

def test_lift_single_species_is_minus_u():
    u = lambda Z: np.stack([Z[:, 0] ** 3, np.sin(Z[:, 1])], axis=1)
    X = np.random.default_rng(1).normal(size=(6, 2))
    g = build_grid(GridSpec(2, (-2, -2), (2, 2), (6, 6)))
    (v,) = lift_finite_dimensional(u, [2])(SystemState(0, [gaussian_density(g, [0, 0], 1.0)]))
    np.testing.assert_allclose(v(X), -u(X))


def test_lift_on_diracs():
    u = lambda Z: np.stack([Z[:, 0] * Z[:, 1], Z[:, 1] - Z[:, 0] ** 2], axis=1)
    h = [np.array([0.4]), np.array([-1.2])]
    v = lift_finite_dimensional(u, [1, 1])(SystemState(0, h))
    Z = np.array([[0.4, -1.2]])
    assert v[0](h[0][None, :])[0, 0] == pytest.approx(-u(Z)[0, 0])
    assert v[1](h[1][None, :])[0, 0] == pytest.approx(-u(Z)[0, 1])


def test_lift_linear_field_with_centred_gaussians():
    M = np.array([[1.5, 0.7], [-0.4, 2.0]])
    g = build_grid(GridSpec(1, (-5,), (5,), (64,)))
    state = SystemState(0, [gaussian_density(g, [0.0], 1.0), gaussian_density(g, [0.0], 1.0)])
    v = lift_finite_dimensional(lambda Z: Z @ M.T, [1, 1])(state)
    X = np.linspace(-2, 2, 9)[:, None]
    for i in range(2):
        np.testing.assert_allclose(v[i](X)[:, 0], -M[i, i] * X[:, 0], atol=1e-12)
