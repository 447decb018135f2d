"""Empirical monotonicity constants from random state pairs.

Compares the sampled estimate with the analytic bound for a few presets,
including one whose coupling makes the system only weakly monotone.
"""

from __future__ import annotations

from monoflow.cli import estimate_from_config
from monoflow.config import load_config
from monoflow.monotone import LambdaMatrix, kernel_hessian_bound, lambda_matrix_bound

for name, sampler in (("lifted_identity", "dirac"), ("example42_indefinite", "dirac"),
                      ("lambda_matrix", "gaussian")):
    est = estimate_from_config(load_config(name), 100, 0, sampler)
    print(f"{name:>22}: lambda_hat {est.lambda_hat:+.4f} over {est.num_pairs} pairs")

print("Lambda-matrix bound:", lambda_matrix_bound(LambdaMatrix.from_spec(load_config("lambda_matrix").spec)))
print("Morse kernel Hessian bound:", kernel_hessian_bound("morse", Cr=8, lr=0.5, Ca=2, la=1))
