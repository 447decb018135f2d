"""Exact discrete optimal transport between two small point clouds.

Solves for the optimal plan, compares its cost with the product plan,
and shows the displacement interpolant moving at constant speed.
"""

from __future__ import annotations

import numpy as np

from monoflow.transport import DiscreteMeasure, displacement_interpolant, product_plan, w2_exact

rng = np.random.default_rng(0)
mu = DiscreteMeasure(rng.normal(size=(6, 2)), rng.dirichlet(np.ones(6)))
nu = DiscreteMeasure(rng.normal(loc=2.0, size=(5, 2)), rng.dirichlet(np.ones(5)))

w2, plan = w2_exact(mu, nu)
prod = product_plan(mu, nu)
print(f"W2 = {w2:.6f}")
print(f"optimal plan cost {plan.cost:.6f} vs product plan cost {prod.sq_cost():.6f}")
print(f"plan support: {len(plan.mass)} entries (at most {len(mu.weights) + len(nu.weights) - 1})")

for t in (0.25, 0.5, 0.75):
    mid = displacement_interpolant(plan, t)
    d0, _ = w2_exact(mu, mid)
    print(f"t={t:.2f}: W2(mu, mu_t) / W2 = {d0 / w2:.6f}")
