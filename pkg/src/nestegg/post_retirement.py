"""Post-retirement value function and consumption.

Once retired there is no labour income, so the value function inherits the
homogeneity V(t, k*w) = k**(1-gamma) * V(t, w) and collapses to
V(t, w) = F(t) * w**(1-gamma) / (1-gamma). Writing f = F**gamma_tilde turns
the remaining HJB into the scalar linear ODE

    f'(t) + gamma_tilde*[r*(1-gamma) - rho - lambda_t]*f(t) + B = 0,

integrated backward from f(horizon) = 0. Optimal consumption is B*w/f(t).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import math

import numpy as np
from scipy.integrate import solve_ivp

from .model import ModelParams


class SolverError(RuntimeError):
    """An integrator failed (step-size underflow, non-finite state, ...)."""


# Default output resolution: 0.0005-year steps, matching the PDE grid.
_DEFAULT_STEP_YEARS = 5e-4


@dataclass(frozen=True)
class FCurve:
    """The scaled post-retirement value coefficient f on a uniform time grid.

    f(horizon) == 0 exactly and f > 0 before the horizon. F = f**gamma
    reconstructs the value coefficient of V(t, w) = F(t)*w**(1-gamma)/(1-gamma).
    """

    times: np.ndarray
    f_values: np.ndarray
    params: ModelParams

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def f_at(self, t):
        """Linear interpolation of f between grid nodes."""
        return np.interp(t, self.times, self.f_values)

    def F_at(self, t):
        """Value coefficient F = f**gamma."""
        return self.f_at(t) ** self.params.gamma


def solve_f(
    params: ModelParams,
    n_steps: int | None = None,
    hazard_fn: Callable[[float], float] | None = None,
) -> FCurve:
    """Integrate the f ODE backward from f(horizon) = 0.

    Args:
        params: model parameters.
        n_steps: number of uniform grid intervals over [0, horizon]
            (>= 100); defaults to a 0.0005-year step.
        hazard_fn: optional mortality-rate override, a callable of model
            time. Defaults to the Gompertz law implied by ``params``.

    Returns:
        FCurve on the uniform grid, accurate to ~1e-10 relative (RK45 with
        dense output, tight tolerances).
    """
    T = params.horizon
    if n_steps is None:
        n_steps = int(round(T / _DEFAULT_STEP_YEARS))
    if n_steps < 100:
        raise ValueError(f"n_steps must be at least 100, got {n_steps}")

    if hazard_fn is None:
        # Non-validating local form: RK stages may probe marginally outside
        # the closed interval.
        x, m, b = params.x, params.m, params.b

        def hazard_fn(t: float) -> float:
            return math.exp((x + t - m) / b) / b

    gt = params.gamma_tilde
    drift0 = params.r * (1.0 - params.gamma) - params.rho
    B = params.B

    def rhs(t, f):
        return -gt * (drift0 - hazard_fn(t)) * f - B

    sol = solve_ivp(rhs, (T, 0.0), [0.0], method="RK45",
                    rtol=1e-10, atol=1e-14, dense_output=True)
    if not sol.success:
        raise SolverError(f"f-ODE integration failed: {sol.message}")

    times = np.linspace(0.0, T, n_steps + 1)
    f = sol.sol(times)[0]
    f[-1] = 0.0  # terminal condition, exact
    if np.any(f[:-1] <= 0.0) or not np.all(np.isfinite(f)):
        raise SolverError("f must be positive before the horizon; integration produced "
                          f"min interior value {f[:-1].min()}")
    return FCurve(times=times, f_values=f, params=params)


def value_post(fcurve: FCurve, t: float, w: float) -> float:
    """Post-retirement value f(t)**gamma * w**(1-gamma) / (1-gamma).

    For gamma > 1 the value diverges to -inf as w -> 0; that is signalled
    explicitly rather than raised. Negative wealth is a domain error.
    """
    params = fcurve.params
    if not 0.0 <= t <= params.horizon:
        raise ValueError(f"t must lie in [0, {params.horizon}], got {t}")
    if w < 0.0:
        raise ValueError(f"wealth must be non-negative, got {w}")
    if w == 0.0:
        if params.gamma > 1.0:
            return -math.inf
        return 0.0
    f = fcurve.f_at(t)
    return f ** params.gamma * w ** (1.0 - params.gamma) / (1.0 - params.gamma)


def marginal_value_post(fcurve: FCurve, t: float, w: float) -> float:
    """dV/dw of the post-retirement value surface, from its closed form."""
    params = fcurve.params
    if w <= 0.0:
        raise ValueError(f"wealth must be positive, got {w}")
    return fcurve.f_at(t) ** params.gamma * w ** (-params.gamma)


def consumption_post(fcurve: FCurve, t: float, w: float) -> float:
    """Optimal post-retirement consumption B*w/f(t) (per year).

    Within one grid step of the horizon, interpolation error in f would blow
    up the ratio, so the analytic leading order f ~ B*(horizon - t) is used
    there instead (giving c = w / (horizon - t)).
    """
    params = fcurve.params
    T = params.horizon
    if t >= T:
        raise ValueError(
            f"consumption is undefined at the horizon (f(horizon) = 0): t = {t}, horizon = {T}")
    if t < 0.0:
        raise ValueError(f"t must lie in [0, horizon), got {t}")
    if w < 0.0:
        raise ValueError(f"wealth must be non-negative, got {w}")
    if w == 0.0:
        return 0.0
    if T - t <= fcurve.step:
        return w / (T - t)
    return params.B * w / fcurve.f_at(t)
