"""Acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line, printed together at the end of
the pytest run.  Long simulations run once per module and are shared.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from monoflow.config import load_config, preset_names
from monoflow.energy import EnergySpec, Potential, first_variation
from monoflow.grid import GridSpec, VectorField, build_grid, gaussian_density, gradient
from monoflow.kernels import Quadratic
from monoflow.monotone import (LambdaMatrix, dissipation_pairing, kernel_hessian_bound, lambda_matrix_bound)
from monoflow.run import execute
from monoflow.state import SystemState
from monoflow.transport import DiscreteMeasure, coarsen, product_plan, w2_exact

from cli_helpers import estimate
from oracles import directional_fd, lp_w2_squared, random_measure, tilt
from test_energy import CASES, _state

pytestmark = pytest.mark.slow

QUARTIC_B = (15, 75, 150)
TABLE_TIMES = (0.0, 6.0, 12.0, 20.0)


def _run_preset(name, overrides=None):
    traj, summary = execute(load_config(name, overrides))
    series = {k: list(v) for k, v in traj.series.items()}
    return {"summary": summary, "t": traj.t.tolist(), "series": series}


@pytest.fixture(scope="module")
def long_runs():
    """Quartic sweep and both multi-learner settings, run in parallel."""
    jobs = {f"quartic_game b={b}": ("quartic_game", {"b": b}) for b in QUARTIC_B}
    jobs["multi_learner"] = ("multi_learner", None)
    jobs["multi_learner_nokernel"] = ("multi_learner_nokernel", None)
    clock = time.perf_counter()
    with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
        futs = {k: pool.submit(_run_preset, *v) for k, v in jobs.items()}
        out = {k: f.result() for k, f in futs.items()}
    out["_wall"] = time.perf_counter() - clock
    return out


@pytest.fixture(scope="module")
def bilinear_run():
    clock = time.perf_counter()
    res = _run_preset("bilinear_zero_sum")
    res["wall"] = time.perf_counter() - clock
    return res


def test_01_ot_oracle(report_line):
    clock = time.perf_counter()
    worst = 0.0
    for k in range(100):
        r = np.random.default_rng([1, k])
        d = 1 + k % 2
        mu = DiscreteMeasure(*random_measure(r, int(r.integers(1, 9)), d))
        nu = DiscreteMeasure(*random_measure(r, int(r.integers(1, 9)), d))
        w, _ = w2_exact(mu, nu)
        worst = max(worst, abs(w * w - lp_w2_squared(mu.points, mu.weights, nu.points, nu.weights)))
    wall = time.perf_counter() - clock
    ok = worst <= 1e-9 and wall < 10
    assert report_line("1 OT oracle equivalence", ok, f"max |W2^2 - LP| = {worst:.2e} over 100 pairs, {wall:.1f}s")


def _fit(res, series):
    return next(f for f in res["summary"]["fits"] if f["series"] == series)


def test_02_contraction_rate(bilinear_run, report_line):
    rate = _fit(bilinear_run, "w2_pair")["rate"]
    ok = 0.9 <= rate <= 1.1 and bilinear_run["wall"] < 120
    assert report_line("2 contraction rate", ok, f"W2 rate {rate:.4f} (target [0.9, 1.1]), {bilinear_run['wall']:.1f}s")


def test_03_lyapunov_decay(bilinear_run, report_line):
    rate = _fit(bilinear_run, "D")["rate"]
    D = np.asarray(bilinear_run["series"]["D"])
    t = np.asarray(bilinear_run["t"])
    envelope = float(np.max(D / D[0] * np.exp(2.0 * t)))
    ok = 1.8 <= rate <= 2.2
    assert report_line("3 Lyapunov decay", ok, f"D rate {rate:.4f} (target [1.8, 2.2]); "
                                               f"max D(t) e^(2t) / D(0) = {envelope:.3f} (informational)")


def _quartic(long_runs):
    return [long_runs[f"quartic_game b={b}"]["summary"] for b in QUARTIC_B]


def test_04i_quartic_decay(long_runs, report_line):
    parts, ok = [], True
    for b, s in zip(QUARTIC_B, _quartic(long_runs)):
        f = s["fits"][0]
        decays = f["rate"] > 0 and f["r_squared"] > 0.9
        ok &= decays
        parts.append(f"b={b}: rate {f['rate']:.3g}, r2 {f['r_squared']:.4f}")
    runtime = sum(s["runtime_s"] for s in _quartic(long_runs))
    assert report_line("4(i) quartic F decays exponentially", ok and runtime < 900,
                       "; ".join(parts) + f"; {runtime:.0f}s CPU")


def test_04ii_quartic_rate_spread(long_runs, report_line):
    rates = np.array([s["fits"][0]["rate"] for s in _quartic(long_runs)])
    spread = (rates.max() - rates.min()) / rates.mean()
    assert report_line("4(ii) quartic rates insensitive to b", spread < 0.25,
                       f"relative spread {spread:.3f} (limit 0.25)")


def test_04iii_quartic_rate_band(long_runs, report_line):
    rates = [s["fits"][0]["rate"] for s in _quartic(long_runs)]
    lo, hi = 0.31 * 0.4, 0.31 * 1.5
    ok = all(lo <= r <= hi for r in rates)
    assert report_line("4(iii) quartic rates near 0.31", ok,
                       "rates " + ", ".join(f"{r:.3g}" for r in rates) + f" (band [{lo:.3f}, {hi:.3f}])")


def test_05_entropy_counterexample(report_line):
    clock = time.perf_counter()
    g = build_grid(GridSpec(2, (-5, -5), (5, 5), (64, 64)))
    r0 = gaussian_density(g, [-0.8, 0.5], [[0.6, 0.2], [0.2, 0.4]])
    r1 = gaussian_density(g, [0.9, -0.4], [[0.5, -0.1], [-0.1, 0.7]])
    v0, v1 = (VectorField(g, gradient(-np.log(r.values), g)) for r in (r0, r1))
    m0, m1 = DiscreteMeasure.from_density(r0), DiscreteMeasure.from_density(r1)
    prod, _ = dissipation_pairing([v0], [v1], [product_plan(m0, m1)])
    c0, c1 = coarsen(r0, 512), coarsen(r1, 512)
    opt, _ = dissipation_pairing([v0], [v1], [w2_exact(c0, c1)[1]])
    wall = time.perf_counter() - clock
    ok = abs(prod + 4.0) <= 5e-2 and opt >= -5e-2 and wall < 60 and max(len(c0), len(c1)) <= 512
    assert report_line("5 entropy counterexample", ok,
                       f"product plan {prod:.5f} (target -4), optimal plan {opt:.4f} (>= -0.05), {wall:.1f}s")


def test_06_lambda_estimation(report_line):
    clock = time.perf_counter()
    lifted = estimate("lifted_identity", pairs=50, sampler="dirac")
    indefinite = estimate("example42_indefinite", sampler="dirac")
    lm_cfg = load_config("lambda_matrix")
    matrix = estimate("lambda_matrix", pairs=100, sampler="gaussian")
    bound = lambda_matrix_bound(LambdaMatrix([2.0, 2.0], 1.0))
    bound_preset = lambda_matrix_bound(LambdaMatrix.from_spec(lm_cfg.spec))
    wall = time.perf_counter() - clock
    checks = [abs(lifted.lambda_hat - 1) <= 1e-8 and lifted.num_pairs == 50,
              indefinite.lambda_hat < 1.0 - 0.1,
              matrix.lambda_hat >= 1 - 5e-2 and matrix.num_pairs == 100 and bound == 1.0 and bound_preset == 1.0,
              wall < 180]
    assert report_line("6 lambda estimation", all(checks),
                       f"lifted {lifted.lambda_hat:.12f}; indefinite {indefinite.lambda_hat:.4f} (< 0.9); "
                       f"Lambda-matrix preset {matrix.lambda_hat:.4f} (>= 0.95), bound {bound}; {wall:.1f}s")


def test_07_kernel_bounds(report_line):
    clock = time.perf_counter()
    from test_monotone import morse_bound_oracle
    p = kernel_hessian_bound("power", k=2)
    pl = kernel_hessian_bound("power_law", a=4, b=2)
    m = kernel_hessian_bound("morse", Cr=8, lr=0.5, Ca=2, la=1)
    ref = morse_bound_oracle(8, 0.5, 2, 1)
    wall = time.perf_counter() - clock
    ok = p == 1.0 and pl == -1.0 and abs(m - ref) <= 1e-6 and wall < 5
    assert report_line("7 kernel bounds", ok, f"power {p}, power_law {pl}, morse {m:.10f} vs oracle {ref:.10f}, "
                                              f"{wall:.2f}s")


def test_08_conservation(long_runs, bilinear_run, report_line):
    metas = {"bilinear_zero_sum": bilinear_run["summary"]["meta"]}
    for k, v in long_runs.items():
        if not k.startswith("_"):
            metas[k] = v["summary"]["meta"]
    skipped = []
    for name in preset_names():
        if name in metas or name in ("quartic_game", "multi_learner", "multi_learner_nokernel"):
            continue
        cfg = load_config(name)
        if cfg.spec is None:
            skipped.append(name)
            continue
        metas[name] = _run_preset(name)["summary"]["meta"]
    worst_drift = max(m["mass_drift"] for m in metas.values())
    worst_min = min(m["min_density"] for m in metas.values())
    worst_bm = max(m["max_boundary_mass"] for m in metas.values())
    ok = worst_drift <= 1e-10 and worst_min >= 0 and worst_bm < 1e-6
    assert report_line("8 conservation and positivity", ok,
                       f"{len(metas)} runs: max drift {worst_drift:.1e}, min density {worst_min:.1e}, "
                       f"max boundary mass {worst_bm:.1e}" + (f" (no dynamics: {', '.join(skipped)})" if skipped else ""))


def test_09_gibbs_residual(report_line):
    clock = time.perf_counter()
    hs, res = [], []
    for n in (32, 64, 256):
        _, s = execute(load_config("gibbs", {"cells": n}))
        hs.append(8.0 / n)
        res.append(s["nash_final"])
    order = float(np.polyfit(np.log(hs), np.log(res), 1)[0])
    C = max(r / h ** 2 for r, h in zip(res, hs))
    _, s = execute(load_config("gibbs", {"cells": 128}))
    h = 8.0 / 128
    wall = time.perf_counter() - clock
    ok = 1.8 <= order <= 2.2 and s["nash_final"] <= 10 * C * h * h and wall < 60
    assert report_line("9 Gibbs Nash residual", ok,
                       f"sweep order {order:.3f}, C = {C:.4f}; residual at 128 cells {s['nash_final']:.3e} "
                       f"<= {10 * C * h * h:.3e}; {wall:.1f}s")


def _at(run, name, t):
    k = int(np.argmin(np.abs(np.asarray(run["t"]) - t)))
    assert abs(run["t"][k] - t) < 1e-9
    return run["series"][name][k]


def test_10_multi_learner(long_runs, report_line):
    kern, flat = long_runs["multi_learner"], long_runs["multi_learner_nokernel"]
    lines, ok = [], True
    for label, run in (("kernel", kern), ("no kernel", flat)):
        a11 = [_at(run, "a_11", t) for t in TABLE_TIMES]
        a21 = [_at(run, "a_21", t) for t in TABLE_TIMES]
        ends = a11[-1] < a11[0] and a21[-1] > a21[0]
        strict = all(np.diff(a11) < 0) and all(np.diff(a21) > 0)
        ok &= ends and strict
        lines.append(f"{label}: a11 " + "/".join(f"{v:.4f}" for v in a11) + ", a21 "
                     + "/".join(f"{v:.4f}" for v in a21) + f" (endpoints {ends}, strict {strict})")
    share = [(_at(kern, "a_11", t), _at(flat, "a_11", t)) for t in (6.0, 12.0)]
    larger = all(k > f for k, f in share)
    ok &= larger
    lines.append("kernel share > no-kernel at t=6,12: " + str(larger))
    runtime = kern["summary"]["runtime_s"] + flat["summary"]["runtime_s"]
    ok &= runtime < 1200
    assert report_line("10 multi-learner trends", ok, "; ".join(lines) + f"; {runtime:.0f}s")


def test_11_variational_consistency(report_line):
    clock = time.perf_counter()
    worst = {}
    for name, terms in CASES.items():
        spec = EnergySpec([terms, [Potential(Quadratic())]])
        for k in range(20):
            state, r = _state(1000 + k)
            sigma = tilt(state.species[0], r)
            exact = float(np.sum(first_variation(spec, state, 0) * sigma) * state.species[0].grid.vol)
            err = abs(directional_fd(spec, state, 0, sigma) - exact) / max(abs(exact), 1e-300)
            worst[name] = max(worst.get(name, 0.0), err)
    wall = time.perf_counter() - clock
    ok = max(worst.values()) <= 1e-4 and wall < 30
    name = max(worst, key=worst.get)
    assert report_line("11 variational consistency", ok,
                       f"{len(worst)} term types x 20 states, worst relative error {worst[name]:.1e} ({name}), "
                       f"{wall:.1f}s")
