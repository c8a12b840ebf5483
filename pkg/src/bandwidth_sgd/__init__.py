"""Bandwidth-based step-size schedules for multi-stage SGD and SGD with momentum."""

from .problems import Additive, ClippedAdditive, Relative, classify_basin, quadratic_objective, toy_objective
from .schedules import Band, Mode, ScheduleSpec, TrustRegion, build_stage_plan, step_size
from .optimizers import run_ensemble, run_sgd, run_sgdm

__all__ = [
    "Additive",
    "Band",
    "ClippedAdditive",
    "Mode",
    "Relative",
    "ScheduleSpec",
    "TrustRegion",
    "build_stage_plan",
    "classify_basin",
    "quadratic_objective",
    "run_ensemble",
    "run_sgd",
    "run_sgdm",
    "step_size",
    "toy_objective",
]

__version__ = "0.1.0"
