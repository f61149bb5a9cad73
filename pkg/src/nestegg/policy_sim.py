"""Forward wealth simulation, regime classification, and diagnostics.

Wealth follows dw/dt = 1 + r*w - c while working and dw/dt = r*w - c once
retired; retirement triggers at the boundary (or a forced time). The module
also builds the uncommitted curve by backward integration from boundary
points, classifies initial states into the three regions of the time-wealth
plane, and evaluates the running-optimality diagnostic Z_t.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

try:
    from scipy.integrate import cumulative_simpson as _cumulative_simpson
except ImportError:  # pragma: no cover - older scipy
    _cumulative_simpson = None

from .model import ModelParams
from .mortality import survival
from .post_retirement import FCurve, consumption_post, value_post
from .pre_retirement import BoundaryCurve, ValueSurface, consumption_pre


class Classification(enum.Enum):
    RETIRE_NOW = "retire_now"
    SAVE_TO_RETIRE = "save_to_retire"
    NEVER_RETIRE = "never_retire"
    CRITICAL = "critical"


class CoalescenceError(RuntimeError):
    """Backward paths failed to agree at t = 0 within tolerance."""

    def __init__(self, message: str, spread: float, w0_values):
        super().__init__(message)
        self.spread = spread
        self.w0_values = list(w0_values)


@dataclass(frozen=True)
class Trajectory:
    """A simulated (wealth, consumption, regime) path on a uniform time grid.

    regime is 'working' or 'retired' per node; the switch happens at most
    once. floored flags nodes where the bankruptcy clamp altered consumption.
    """

    times: np.ndarray
    wealth: np.ndarray
    consumption: np.ndarray
    regime: np.ndarray
    retirement_time: float | None
    params: ModelParams
    floored: np.ndarray

    @property
    def retired(self) -> np.ndarray:
        return self.regime == "retired"

    def wealth_at(self, t):
        return np.interp(t, self.times, self.wealth)


@dataclass(frozen=True)
class UncommittedCurve:
    """The coalesced backward path from boundary points, and its start w~.

    w_tilde is the mean of the backward values at t = 0; spread is their
    relative disagreement ((max - min) / mean).
    """

    times: np.ndarray
    wealth: np.ndarray
    w_tilde: float
    spread: float
    w0_values: np.ndarray
    retirement_times: np.ndarray

    def at(self, t):
        if not self.times[0] <= t <= self.times[-1]:
            raise ValueError(f"t={t} outside the curve's domain "
                             f"[{self.times[0]}, {self.times[-1]}]")
        return float(np.interp(t, self.times, self.wealth))


def _rk4_step(rhs, t: float, w: float, h: float) -> float:
    k1 = rhs(t, w)
    k2 = rhs(t + 0.5 * h, w + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, w + 0.5 * h * k2)
    k4 = rhs(t + h, w + h * k3)
    return w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(
    surface: ValueSurface,
    boundary: BoundaryCurve,
    fcurve: FCurve,
    w0: float,
    t0: float = 0.0,
    forced_retirement: float | None = None,
    step: float | None = None,
    consumption_override: Callable[[float, float, str], float] | None = None,
) -> Trajectory:
    """Integrate a wealth path forward from (t0, w0) under the solved policy.

    Fixed-step RK4 at ``step`` (default: the PDE grid's dt). Retirement
    triggers when wealth reaches the interpolated boundary, located by
    bisection within the step; ``forced_retirement`` instead imposes the
    switch at the given time exactly. ``consumption_override(t, w, regime)``
    replaces the policy consumption (diagnostic mode; the boundary trigger
    still applies unless forced).

    Wealth is kept non-negative: where it would cross zero, consumption is
    capped at income (working) or zero (retired) and the node is flagged.
    """
    params = surface.params
    grid = surface.grid
    T = grid.horizon
    if not 0.0 <= t0 < T:
        raise ValueError(f"t0 must lie in [0, horizon), got {t0}")
    if w0 < 0.0:
        raise ValueError(f"w0 must be non-negative, got {w0}")
    if forced_retirement is not None and forced_retirement < t0:
        raise ValueError("forced_retirement must not precede t0")
    h = grid.dt if step is None else float(step)
    if h <= 0.0 or h > grid.dt * (1.0 + 1e-12):
        raise ValueError(f"step must lie in (0, {grid.dt}], got {step}")

    def policy(t: float, w: float, retired: bool) -> float:
        if consumption_override is not None:
            return consumption_override(t, w, "retired" if retired else "working")
        if retired:
            return consumption_post(fcurve, min(t, T - 1e-12), w)
        return consumption_pre(surface, min(t, T * (1.0 - 1e-12)), max(w, 1e-12))

    def rhs(retired: bool):
        income = 0.0 if retired else 1.0

        def f(t: float, w: float) -> float:
            w = max(w, 0.0)
            c = policy(t, w, retired)
            drift = income + params.r * w - c
            if w <= 0.0:
                drift = max(drift, 0.0)  # bankruptcy clamp
            return drift
        return f

    n_steps = int(round((T - t0) / h))
    times = t0 + h * np.arange(n_steps + 1)
    times[-1] = T
    wealth = np.empty(n_steps + 1)
    cons = np.empty(n_steps + 1)
    retired_arr = np.zeros(n_steps + 1, dtype=bool)
    floored = np.zeros(n_steps + 1, dtype=bool)

    def crossed(t: float, w: float) -> bool:
        if forced_retirement is not None:
            return t >= forced_retirement
        wb = boundary.at(min(t, T))
        return wb is not None and w >= wb

    t, w = t0, w0
    retired = crossed(t0, w0)
    t_ret = t0 if retired else None
    wealth[0] = w
    retired_arr[0] = retired
    cons[0] = policy(t0, w0, retired)

    rhs_work, rhs_ret = rhs(False), rhs(True)
    for i in range(1, n_steps + 1):
        hh = times[i] - t
        f = rhs_ret if retired else rhs_work
        if retired and T - t <= 1.5 * h and consumption_override is None:
            # terminal leading order: c ~ w/(T-t), so wealth decays linearly
            # to zero; avoids RK stages straddling the f -> 0 singularity
            w_new = w * math.exp(params.r * hh) * max(T - times[i], 0.0) / (T - t)
        else:
            w_new = _rk4_step(f, t, w, hh)
        if w_new < 0.0:
            w_new = 0.0
            floored[i] = True
        t_new = times[i]

        if not retired and crossed(t_new, w_new):
            # locate the switch inside (t, t_new) by bisection
            lo, hi = 0.0, hh
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                w_mid = _rk4_step(rhs_work, t, w, mid)
                if crossed(t + mid, w_mid):
                    hi = mid
                else:
                    lo = mid
            t_ret = t + hi
            w_ret = _rk4_step(rhs_work, t, w, hi)
            retired = True
            # finish the step under the retired dynamics
            if t_new - t_ret > 1e-15:
                w_new = _rk4_step(rhs_ret, t_ret, w_ret, t_new - t_ret)
            else:
                w_new = w_ret
            if w_new < 0.0:
                w_new = 0.0
                floored[i] = True

        t, w = t_new, w_new
        wealth[i] = w
        retired_arr[i] = retired
        if i < n_steps:
            cons[i] = policy(t, w, retired)
        else:
            cons[i] = cons[i - 1]  # policy is singular exactly at the horizon

    regime = np.where(retired_arr, "retired", "working")
    return Trajectory(times=times, wealth=wealth, consumption=cons, regime=regime,
                      retirement_time=t_ret, params=params, floored=floored)


def uncommitted_curve(
    surface: ValueSurface,
    boundary: BoundaryCurve,
    retirement_times: Sequence[float],
    step: float | None = None,
    coalesce_tol: float = 0.01,
) -> UncommittedCurve:
    """Trace the uncommitted curve by backward integration from the boundary.

    For each retirement time t_r the working-phase dynamics are integrated
    backward from (t_r, wbar(t_r)) to t = 0 with the solved consumption
    policy. The curve is the mean of the backward paths on their common
    window [0, min t_r]; their values at t = 0 define w~ (mean) and the
    coalescence spread. A spread beyond ``coalesce_tol`` raises
    CoalescenceError carrying the per-path values.
    """
    grid = surface.grid
    params = surface.params
    retirement_times = sorted(float(t) for t in retirement_times)
    if len(retirement_times) < 2:
        raise ValueError("need at least two retirement times strictly inside (0, horizon)")
    for t_r in retirement_times:
        if not 0.0 < t_r < grid.horizon:
            raise ValueError(f"retirement time {t_r} not strictly inside (0, {grid.horizon})")
        if boundary.at(t_r) is None:
            raise ValueError(f"boundary undefined at retirement time {t_r}")
    h = grid.dt if step is None else float(step)

    def rhs(t: float, w: float) -> float:
        c = consumption_pre(surface, t, max(w, 1e-12))
        if w < grid.w_min:
            c = min(c, 1.0 + params.r * w)
        return 1.0 + params.r * w - c

    t_common = min(retirement_times)
    n_common = int(math.floor(t_common / h + 1e-9))
    common_times = h * np.arange(n_common + 1)

    paths = []
    w0s = []
    for t_r in retirement_times:
        t = t_r
        w = boundary.at(t_r)
        rec_t, rec_w = [t], [w]
        while t > 1e-12:
            hh = min(h, t)
            w = _rk4_step(rhs, t, w, -hh)
            w = max(w, 0.0)
            t -= hh
            rec_t.append(t)
            rec_w.append(w)
        rec_t = np.asarray(rec_t[::-1])
        rec_w = np.asarray(rec_w[::-1])
        w0s.append(rec_w[0])
        paths.append(np.interp(common_times, rec_t, rec_w))

    w0s = np.asarray(w0s)
    mean0 = float(w0s.mean())
    spread = float((w0s.max() - w0s.min()) / mean0) if mean0 > 0 else math.inf
    if spread > coalesce_tol:
        raise CoalescenceError(
            f"backward paths from retirement times {retirement_times} end at t=0 with "
            f"wealths {np.array2string(w0s, precision=5)}; spread {spread:.3%} exceeds "
            f"tolerance {coalesce_tol:.3%} (the earliest retirement times may be reachable "
            "directly from t=0 rather than along the uncommitted curve)",
            spread=spread, w0_values=w0s)

    curve = np.mean(np.vstack(paths), axis=0)
    return UncommittedCurve(times=common_times, wealth=curve, w_tilde=mean0,
                            spread=spread, w0_values=w0s,
                            retirement_times=np.asarray(retirement_times))


def classify(
    boundary: BoundaryCurve,
    uncommitted: UncommittedCurve,
    w0: float,
    t0: float = 0.0,
) -> Classification:
    """Place an initial state into one of the three regions (or on the knife edge).

    The tolerance for 'critical' is the uncommitted curve's coalescence
    spread (w~ is only determined to that accuracy), floored at a nominal
    1e-9 relative so exact hits classify as critical.
    """
    if w0 < 0.0:
        raise ValueError(f"w0 must be non-negative, got {w0}")
    wb = boundary.at(t0)
    wu = uncommitted.at(t0)
    tol = max(uncommitted.spread, 1e-9) * wu
    if abs(w0 - wu) <= tol:
        return Classification.CRITICAL
    if wb is not None and w0 >= wb:
        return Classification.RETIRE_NOW
    if w0 > wu:
        return Classification.SAVE_TO_RETIRE
    return Classification.NEVER_RETIRE


def _cumulative_simpson_uniform(g: np.ndarray, h: float) -> np.ndarray:
    """Cumulative integral of samples on a uniform grid, O(h^4) accurate."""
    if _cumulative_simpson is not None:
        out = np.empty_like(g)
        out[0] = 0.0
        out[1:] = _cumulative_simpson(g, dx=h)
        return out
    # piecewise-parabola rule (same order as composite Simpson)
    out = np.zeros_like(g)
    if len(g) < 3:
        if len(g) == 2:
            out[1] = 0.5 * h * (g[0] + g[1])
        return out
    out[1] = h * (5.0 * g[0] + 8.0 * g[1] - g[2]) / 12.0
    incr = h * (-g[:-2] + 8.0 * g[1:-1] + 5.0 * g[2:]) / 12.0
    out[2:] = out[1] + np.cumsum(incr)
    return out


def z_process(
    trajectory: Trajectory,
    surface: ValueSurface | None = None,
    fcurve: FCurve | None = None,
) -> np.ndarray:
    """Accumulated utility plus discounted continuation value along a path.

    Z_t = int_0^t e^{-rho s} u(l_s, c_s) s_p_x ds + e^{-rho t} t_p_x V(t, w_t),
    with V taken from the working-phase surface or the retirement value per
    the node's regime. Constant along an optimal path; non-increasing under
    any other control. Times are absolute (discounting from t = 0).
    """
    params = trajectory.params
    retired = trajectory.retired
    if retired.any() and fcurve is None:
        raise ValueError("fcurve is required for retired segments")
    if (~retired).any() and surface is None:
        raise ValueError("surface is required for working segments")

    times = trajectory.times
    h = times[1] - times[0]
    disc = np.exp(-params.rho * times) * survival(params, np.minimum(times, params.horizon))

    c = np.maximum(trajectory.consumption, 1e-300)
    flow = np.where(retired, params.utility_retired(c), params.utility_working(c))
    integral = _cumulative_simpson_uniform(disc * flow, h)

    vals = np.empty_like(times)
    T = params.horizon
    for i, (t, w, ret) in enumerate(zip(times, trajectory.wealth, retired)):
        if ret:
            vals[i] = value_post(fcurve, min(t, T), max(w, 1e-12))
        else:
            vals[i] = surface.value_at(min(t, T), max(w, surface.grid.w_min))
    return integral + disc * vals
