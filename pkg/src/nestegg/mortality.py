"""Gompertz hazard rate and survival probabilities.

Survival is evaluated through the closed-form integrated hazard; numerical
quadrature exists only as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams


def _check_domain(params: ModelParams, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > params.horizon):
        raise ValueError(f"t must lie in [0, {params.horizon}] years, got {t}")
    return t


def hazard(params: ModelParams, t):
    """Instantaneous mortality rate at model time t (per year).

    lambda_t = (1/b) * exp((x + t - m)/b): strictly positive, increasing in t,
    and equal to 1/b at the modal age.
    """
    t = _check_domain(params, t)
    out = np.exp((params.x + t - params.m) / params.b) / params.b
    return float(out) if out.ndim == 0 else out


def integrated_hazard(params: ModelParams, t):
    """Closed form of int_0^t lambda_q dq for the Gompertz law."""
    t = _check_domain(params, t)
    out = np.exp((params.x - params.m) / params.b) * np.expm1(t / params.b)
    return float(out) if out.ndim == 0 else out


def survival(params: ModelParams, t):
    """Probability of surviving beyond model time t (dimensionless, in (0, 1])."""
    t = _check_domain(params, t)
    out = np.exp(-np.exp((params.x - params.m) / params.b) * np.expm1(t / params.b))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SurvivalCurve:
    """Survival probabilities tabulated on a uniform time grid.

    Invariants: values[0] == 1, values non-increasing, all values in (0, 1].
    """

    times: np.ndarray
    values: np.ndarray
    params: ModelParams

    def at(self, t):
        return np.interp(t, self.times, self.values)


def survival_curve(params: ModelParams, n_points: int = 801) -> SurvivalCurve:
    """Tabulate survival on a uniform grid over [0, horizon]."""
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    times = np.linspace(0.0, params.horizon, n_points)
    return SurvivalCurve(times=times, values=survival(params, times), params=params)
