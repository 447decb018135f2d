"""Coupled Wasserstein gradient flows of multi-species games.

Finite-volume simulation of coupled flows, exact discrete optimal
transport, and numerical checks of lambda-monotonicity.
"""

from __future__ import annotations

from .diagnostics import (RateFit, dirac_moment_bound, fit_rate, lyapunov_D, mollified_moment_bound,
                          nash_residual, nash_residuals, second_moment)
from .dynamics import Trajectory, cfl_dt, fv_step, simulate
from .energy import (KL, BilinearCoupling, CrossInteraction, Diffusion, EnergySpec, FiniteDimCost, Potential,
                     SelfInteraction, assemble_velocity, energy_value, first_variation)
from .errors import (BoundaryMassError, CapacityError, CFLViolationError, ConfigurationError, MonoflowError,
                     SimulationError)
from .grid import DensityField, Grid, GridSpec, VectorField, build_grid, gaussian_density
from .monotone import (LambdaMatrix, MonotonicityReport, dissipation_pairing, estimate_lambda,
                       kernel_hessian_bound, lambda_matrix_bound, lift_finite_dimensional, second_order_form)
from .state import SystemState
from .transport import DiscreteMeasure, TransportPlan, coarsen, joint_w2, w2_exact

__version__ = "0.1.0"
