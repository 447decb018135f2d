"""Contraction of a bilinear zero-sum game.

Runs the same coupled flow from two initial states and fits the decay
of the joint Wasserstein distance and of the dissipation functional.
"""

from __future__ import annotations

from monoflow.config import load_config
from monoflow.run import execute

cfg = load_config("bilinear_zero_sum")
traj, summary = execute(cfg)
for fit in summary["fits"]:
    print(f"{fit['series']:>8}: rate {fit['rate']:.4f}  (r^2 {fit['r_squared']:.4f})")
print(f"mass drift {summary['meta']['mass_drift']:.1e}")
