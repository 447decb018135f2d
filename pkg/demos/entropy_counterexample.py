"""Why the pairing must use an optimal plan.

For the heat flow the velocity is -grad log rho.  Pairing two Gaussians
with the product coupling gives a negative value (-2 per dimension),
while the optimal coupling gives a nonnegative one.
"""

from __future__ import annotations

import numpy as np

from monoflow.grid import GridSpec, VectorField, build_grid, gaussian_density, gradient
from monoflow.monotone import dissipation_pairing
from monoflow.transport import DiscreteMeasure, coarsen, product_plan, w2_exact

g = build_grid(GridSpec(2, (-5, -5), (5, 5), (64, 64)))
r0 = gaussian_density(g, [-0.8, 0.5], [[0.6, 0.2], [0.2, 0.4]])
r1 = gaussian_density(g, [0.9, -0.4], [[0.5, -0.1], [-0.1, 0.7]])
v0, v1 = (VectorField(g, gradient(-np.log(r.values), g)) for r in (r0, r1))

prod, _ = dissipation_pairing([v0], [v1], [product_plan(DiscreteMeasure.from_density(r0),
                                                        DiscreteMeasure.from_density(r1))])
opt, _ = dissipation_pairing([v0], [v1], [w2_exact(coarsen(r0, 512), coarsen(r1, 512))[1]])
print(f"product plan pairing: {prod:.5f}")
print(f"optimal plan pairing: {opt:.5f}")
