"""Optimal consumption and retirement timing for a lifecycle saver.

A worker with Gompertz mortality, CRRA-style preferences over consumption
and leisure, and a unit labour income chooses consumption and a voluntary
retirement time, investing only at the risk-free rate. The package solves
the post-retirement value in closed form up to a scalar ODE, the working
phase as a free-boundary HJB problem on a log-wealth grid, and exposes
simulation, classification of the time-wealth plane, and calibration of the
retirement-leisure endowment.
"""

from .calibrate import (CalibrationError, CalibrationResult, CalibrationTarget,
                        CandidateOutcome, calibrate_lbar)
from .model import (ConfigError, ModelParamError, ModelParams, default_params,
                    derive_params, load_params)
from .mortality import SurvivalCurve, hazard, integrated_hazard, survival, survival_curve
from .policy_sim import (Classification, CoalescenceError, Trajectory, UncommittedCurve,
                         classify, simulate, uncommitted_curve, z_process)
from .post_retirement import (FCurve, SolverError, consumption_post, marginal_value_post,
                              solve_f, value_post)
from .pre_retirement import (BoundaryCurve, Grid, GridError, RetiredRegionError,
                             SolveDiagnostics, ValueSurface, boundary_at, consumption_pre,
                             hjb_residual, marginal_value_pre, smooth_pasting_gap, solve_pde)

__version__ = "0.1.0"

__all__ = [
    "BoundaryCurve", "CalibrationError", "CalibrationResult", "CalibrationTarget",
    "CandidateOutcome", "Classification", "CoalescenceError", "ConfigError", "FCurve",
    "Grid", "GridError", "ModelParamError", "ModelParams", "RetiredRegionError",
    "SolveDiagnostics", "SolverError", "SurvivalCurve", "Trajectory", "UncommittedCurve",
    "boundary_at", "calibrate_lbar", "classify", "consumption_post", "consumption_pre",
    "default_params", "derive_params", "hazard", "hjb_residual", "integrated_hazard",
    "load_params", "marginal_value_post", "marginal_value_pre", "simulate",
    "smooth_pasting_gap", "solve_f", "solve_pde", "survival", "survival_curve",
    "uncommitted_curve", "value_post", "z_process",
]
