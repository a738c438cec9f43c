"""Numerical laboratory for fast-diffusion / porous-medium equations with drift.

Library layout: fields (grids + discrete calculus), drift (closed-form vector
fields + admissibility classes), diffusion (implicit homogeneous step),
transport (flow maps + push-forward), splitting (the alternating scheme),
diagnostics (energy/speed/inequality verifiers), metrics (Wasserstein and
narrow-convergence distances), boussinesq (coupled application), cli.
"""

from .fields import (DensityField, Grid, MixedNormSpec, INF, integrate, lq_norm,
                     grad_power, mixed_norm)
from .drift import DriftSpec, DriftClassReport, classify, drift_preset
from .diffusion import DiffusionParams, step_diffusion
from .transport import flow_map, pushforward
from .splitting import SplittingSchedule, TrajectoryRecord, run_splitting

__all__ = [
    "DensityField", "Grid", "MixedNormSpec", "INF", "integrate", "lq_norm",
    "grad_power", "mixed_norm", "DriftSpec", "DriftClassReport", "classify",
    "drift_preset", "DiffusionParams", "step_diffusion", "flow_map", "pushforward",
    "SplittingSchedule", "TrajectoryRecord", "run_splitting",
]

__version__ = "0.1.0"
