"""Pre-retirement free-boundary HJB solve on a log-wealth grid.

The working-phase value function V1 satisfies, below the retirement
boundary,

    V1_t - (rho + lambda_t) V1 + (1 + r w) V1_w - V1_w**(1-gt) / (1-gt) = 0,

with gt = gamma_tilde, terminal condition V1(horizon, .) = 0, and the
obstacle constraint V1 >= Vbar (retiring now is always available). The
solver marches backward in time with an explicit monotone upwind scheme in
y = ln w and applies the obstacle comparison after every step; the
retirement boundary is the smallest wealth where the obstacle binds.

Scheme notes, in brief:

* Upwinding is Godunov-style: for each node the forward-difference branch
  (valid when its implied drift is positive), the backward-difference branch
  (drift negative), and the zero-drift branch with c = 1 + r w compete, and
  the largest Hamiltonian wins.
* Consumption entering the update is clipped per node so the implied
  y-drift never exceeds nu_allow = cfl_safety * dy / dt. The clip binds only
  inside the region where the obstacle also binds (the terminal layer), so
  it never distorts the continuation solution; events are counted and any
  clip on a non-obstacle node is recorded as a CFL violation.
* At the wealth floor the no-borrowing constraint caps consumption at
  1 + r*w_min so the drift stays non-negative and only the forward neighbor
  is needed; at the wealth cutoff the node is pinned to the retirement value
  (the cutoff sits above the boundary for all supported parameters).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .model import ModelParams
from .post_retirement import FCurve, SolverError


class GridError(ValueError):
    """Grid construction violates a stability or shape requirement."""


class RetiredRegionError(ValueError):
    """Working-phase policy queried inside the retirement region."""


_STORE_BYTES_TARGET = 64e6  # cap on stored value-surface memory
_DERIVATIVE_FLOOR = 1e-12


@dataclass(frozen=True)
class Grid:
    """Log-wealth/time discretization with CFL metadata.

    y runs over [ln w_min, ln w_cutoff] with n_y uniform nodes; time runs
    over [0, horizon] with n_t nodes spaced dt apart. cfl_safety scales the
    admissible drift nu_allow = cfl_safety * dy / dt.
    """

    y_min: float
    y_max: float
    n_y: int
    dt: float
    n_t: int
    cfl_safety: float = 0.9

    def __post_init__(self):
        if self.n_y < 4 or self.n_t < 2:
            raise GridError(f"grid too small: n_y={self.n_y}, n_t={self.n_t}")
        if self.y_max <= self.y_min:
            raise GridError("y_max must exceed y_min")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise GridError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        # Explicit-scheme stability: the scheme caps the y-drift at nu_allow,
        # so dt * max|drift| / dy <= cfl_safety <= 1 by construction. Still
        # require dt <= dy so the cap leaves room for the unit-income drift
        # at the wealth floor (|nu| ~ 1 there).
        if self.dt > self.dy:
            raise GridError(
                f"CFL guard: dt={self.dt} must not exceed dy={self.dy:.6g} "
                f"(admissible drift would fall below the income drift)")

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.n_y - 1)

    @property
    def horizon(self) -> float:
        return self.dt * (self.n_t - 1)

    @property
    def nu_allow(self) -> float:
        return self.cfl_safety * self.dy / self.dt

    @property
    def w_min(self) -> float:
        return math.exp(self.y_min)

    @property
    def w_cutoff(self) -> float:
        return math.exp(self.y_max)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_t)

    @property
    def y_nodes(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @property
    def w_nodes(self) -> np.ndarray:
        return np.exp(self.y_nodes)

    @classmethod
    def build(cls, params: ModelParams, dt: float = 1e-3, dy: float = 2e-2,
              w_min: float = 0.01, w_cutoff: float = 30.0,
              cfl_safety: float = 0.9) -> "Grid":
        """Construct a grid for the given horizon, snapping dt/dy to fit.

        The requested dt and dy are adjusted (downward in magnitude of
        error) so that the horizon and y-span divide evenly.
        """
        if dt <= 0.0 or dy <= 0.0:
            raise GridError("dt and dy must be positive")
        if not 0.0 < w_min < w_cutoff:
            raise GridError(f"need 0 < w_min < w_cutoff, got {w_min}, {w_cutoff}")
        y_min, y_max = math.log(w_min), math.log(w_cutoff)
        n_y = int(round((y_max - y_min) / dy)) + 1
        n_t = int(round(params.horizon / dt)) + 1
        dt_exact = params.horizon / (n_t - 1)
        return cls(y_min=y_min, y_max=y_max, n_y=n_y, dt=dt_exact, n_t=n_t,
                   cfl_safety=cfl_safety)

    @classmethod
    def coarse(cls, params: ModelParams, **kw) -> "Grid":
        """The fast grid: dt=0.001, dy=0.02."""
        return cls.build(params, dt=1e-3, dy=2e-2, **kw)

    @classmethod
    def fine(cls, params: ModelParams, **kw) -> "Grid":
        """The reference grid: dt=0.0005, dy=0.01."""
        return cls.build(params, dt=5e-4, dy=1e-2, **kw)


@dataclass
class SolveDiagnostics:
    """Counters and margins surfaced by solve_pde."""

    derivative_clamps: int = 0
    consumption_caps: int = 0
    startup_caps: int = 0
    cfl_violations: int = 0
    worst_drift_ratio: float = 0.0   # unclipped |nu|*dt/dy over counted violations
    store_stride: int = 1
    runtime_seconds: float = 0.0
    obstacle_bound_share: float = 0.0
    pasting_gap: float = float("nan")
    hjb_residual: float = float("nan")

    def summary(self) -> str:
        lines = [
            f"derivative clamps (V1_y floored at {_DERIVATIVE_FLOOR:g}): {self.derivative_clamps}",
            f"consumption cap events (CFL control truncation): {self.consumption_caps}",
            f"  of which in the terminal startup layer: {self.startup_caps}",
            f"CFL violations (caps on continuation nodes past startup): {self.cfl_violations}",
            f"worst violating drift ratio |nu|*dt/dy: {self.worst_drift_ratio:.4g}",
            f"obstacle-bound share of node updates: {self.obstacle_bound_share:.4f}",
            f"stored every {self.store_stride} time step(s)",
            f"smooth-pasting gradient gap (reported, not enforced): {self.pasting_gap:.4g}",
            f"max interior HJB residual: {self.hjb_residual:.4g}",
            f"solve runtime: {self.runtime_seconds:.2f} s",
        ]
        return "\n".join(lines)


@dataclass(frozen=True)
class ValueSurface:
    """Working-phase value V1 on stored time slices of the grid.

    v1[k, j] is the value at time times[k] and log-wealth node j, after the
    obstacle comparison; retired_mask flags nodes where the obstacle binds.
    Slices are a stride-subsample of the march (the full fine-grid surface
    would not fit in memory); queries interpolate linearly in time.
    """

    grid: Grid
    params: ModelParams
    times: np.ndarray
    v1: np.ndarray
    retired_mask: np.ndarray
    diagnostics: SolveDiagnostics

    def _bracket(self, t: float) -> tuple[int, float]:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        idx = min(max(idx, 0), len(self.times) - 2)
        tau = (t - self.times[idx]) / (self.times[idx + 1] - self.times[idx])
        return idx, min(max(tau, 0.0), 1.0)

    def value_at(self, t: float, w: float) -> float:
        """Bilinear interpolation of V1 at (t, w)."""
        grid = self.grid
        if not 0.0 <= t <= grid.horizon:
            raise ValueError(f"t outside [0, {grid.horizon}]: {t}")
        y = math.log(w) if w > 0 else -math.inf
        if not grid.y_min - 1e-12 <= y <= grid.y_max + 1e-12:
            raise ValueError(f"wealth {w} outside the grid [{grid.w_min:.4g}, {grid.w_cutoff:.4g}]")
        k, tau = self._bracket(t)
        dy = grid.dy
        j = int((y - grid.y_min) / dy)
        j = min(max(j, 0), grid.n_y - 2)
        th = (y - (grid.y_min + j * dy)) / dy
        row = (1.0 - tau) * self.v1[k] + tau * self.v1[k + 1]
        return float((1.0 - th) * row[j] + th * row[j + 1])


@dataclass(frozen=True)
class BoundaryCurve:
    """Retirement wealth threshold per time node (NaN where undefined)."""

    times: np.ndarray
    w_bar: np.ndarray
    params: ModelParams

    def at(self, t: float):
        """Linearly interpolated boundary wealth at time t, or None."""
        if not 0.0 <= t <= self.times[-1] + 1e-12:
            raise ValueError(f"t outside [0, {self.times[-1]}]: {t}")
        idx = min(int(np.searchsorted(self.times, t, side="right")) - 1, len(self.times) - 2)
        idx = max(idx, 0)
        w0, w1 = self.w_bar[idx], self.w_bar[idx + 1]
        if math.isnan(w0) or math.isnan(w1):
            return None
        tau = (t - self.times[idx]) / (self.times[idx + 1] - self.times[idx])
        return float(w0 + tau * (w1 - w0))


def boundary_at(boundary: BoundaryCurve, t: float):
    """Module-level alias for BoundaryCurve.at."""
    return boundary.at(t)


def _auto_stride(grid: Grid) -> int:
    return max(1, int(math.ceil(grid.n_t * grid.n_y * 8 / _STORE_BYTES_TARGET)))


def solve_pde(
    params: ModelParams,
    grid: Grid,
    fcurve: FCurve,
    with_obstacle: bool = True,
    store_stride: int | None = None,
) -> tuple[ValueSurface, BoundaryCurve]:
    """March the working-phase HJB backward and locate the boundary.

    Args:
        params: model parameters (must match fcurve.params).
        grid: CFL-valid discretization.
        fcurve: post-retirement coefficient solved on the same horizon.
        with_obstacle: disable to compute the never-retire value (used by
            dominance tests and the bifurcation cross-check).
        store_stride: keep every k-th time slice (default: auto-chosen to
            cap memory).

    Returns:
        (ValueSurface, BoundaryCurve). With the obstacle disabled the
        boundary is all-NaN.

    Raises:
        SolverError: on non-finite values or a catastrophic CFL violation.
    """
    if abs(fcurve.params.horizon - params.horizon) > 1e-9:
        raise ValueError("fcurve horizon does not match params horizon")
    t_start = time.perf_counter()

    n_y, n_t = grid.n_y, grid.n_t
    dy, dt = grid.dy, grid.dt
    times = grid.times
    y = grid.y_nodes
    w = grid.w_nodes
    emy = np.exp(-y)
    one_rw = 1.0 + params.r * w
    gamma, gt = params.gamma, params.gamma_tilde
    rho = params.rho

    nu_allow = grid.nu_allow
    c_lo = np.maximum(one_rw - nu_allow * w, 0.0)
    c_hi = one_rw + nu_allow * w
    c_cap_floor_node = one_rw[0]  # no-borrow cap at the wealth floor

    # hazard and obstacle coefficient per time node
    lam_nodes = np.exp((params.x + times - params.m) / params.b) / params.b
    f_nodes = np.interp(times, fcurve.times, fcurve.f_values)
    wpow = w ** (1.0 - gamma) / (1.0 - gamma)

    stride = _auto_stride(grid) if store_stride is None else max(1, int(store_stride))
    store_flag = np.zeros(n_t, dtype=bool)
    store_flag[::stride] = True
    store_flag[-1] = True
    store_rows = np.cumsum(store_flag) - 1
    n_stored = int(store_flag.sum())

    v1_store = np.empty((n_stored, n_y))
    mask_store = np.zeros((n_stored, n_y), dtype=bool)
    wbar = np.full(n_t, np.nan)
    diag = SolveDiagnostics(store_stride=stride)

    V = np.zeros(n_y)
    if with_obstacle:
        # horizon slice: V1 = Vbar = 0, obstacle binds degenerately
        mask_store[store_rows[n_t - 1]] = True
        wbar[n_t - 1] = w[0]
    v1_store[store_rows[n_t - 1]] = V

    def u(c):
        return c ** (1.0 - gamma) / (1.0 - gamma)

    bound_updates = 0
    dVf = np.empty(n_y)
    dVb = np.empty(n_y)
    # Terminal startup layer: just before the horizon the optimal consumption
    # near the wealth floor is ~ 1 + w/(horizon - t), which exceeds the CFL
    # cap while the obstacle does not yet bind there. Cap events inside this
    # window are benign (the layer is O(w_min) years wide); outside it they
    # count as CFL violations.
    startup_window = max(0.5, 10.0 * grid.w_min)

    for n in range(n_t - 1, 0, -1):
        lam = lam_nodes[n]

        dVf[:-1] = (V[1:] - V[:-1]) / dy
        dVf[-1] = _DERIVATIVE_FLOOR
        dVb[1:] = dVf[:-1]
        dVb[0] = _DERIVATIVE_FLOOR
        n_clamped = int(np.count_nonzero(dVf < _DERIVATIVE_FLOOR)) \
            + int(np.count_nonzero(dVb < _DERIVATIVE_FLOOR))
        diag.derivative_clamps += n_clamped
        np.maximum(dVf, _DERIVATIVE_FLOOR, out=dVf)
        np.maximum(dVb, _DERIVATIVE_FLOOR, out=dVb)

        cf_raw = (emy * dVf) ** (-gt)
        cb_raw = (emy * dVb) ** (-gt)
        cf = np.clip(cf_raw, c_lo, c_hi)
        cb = np.clip(cb_raw, c_lo, c_hi)
        # CFL truncation accounting; the floor node's no-borrow cap below is
        # a boundary condition, not a stability event
        capped = (cf_raw != cf) | (cb_raw != cb)
        diag.consumption_caps += int(np.count_nonzero(capped))
        cf[0] = min(cf[0], c_cap_floor_node)
        cb[0] = min(cb[0], c_cap_floor_node)

        nuf = emy * (one_rw - cf)
        nub = emy * (one_rw - cb)

        Hf = np.where(nuf > 0.0, u(cf) + nuf * dVf, -np.inf)
        Hb = np.where(nub < 0.0, u(cb) + nub * dVb, -np.inf)
        H = np.maximum(np.maximum(Hf, Hb), u(one_rw))

        Vc = V * (1.0 - dt * (rho + lam)) + dt * H

        t_new = times[n - 1]
        if with_obstacle:
            obst = f_nodes[n - 1] ** gamma * wpow
            Vc[-1] = obst[-1]
            bind = Vc <= obst + 1e-10 * np.abs(obst)
            V_new = np.maximum(Vc, obst)
            if bind.any():
                j = int(np.argmax(bind))
                if j == 0:
                    wbar[n - 1] = w[0]
                else:
                    g1 = Vc[j - 1] - obst[j - 1]
                    g2 = Vc[j] - obst[j]
                    frac = g1 / (g1 - g2) if g1 != g2 else 1.0
                    wbar[n - 1] = w[j - 1] + frac * (w[j] - w[j - 1])
            bound_updates += int(np.count_nonzero(bind))
        else:
            bind = np.zeros(n_y, dtype=bool)
            V_new = Vc

        # unclipped drift exceedances outside the obstacle region are real
        # CFL trouble; inside it the obstacle max erases the node anyway
        viol = capped & ~bind
        n_viol = int(np.count_nonzero(viol))
        if n_viol:
            diag.cfl_violations += n_viol
            raw_drift = np.maximum(np.abs(emy[viol] * (one_rw[viol] - cf_raw[viol])),
                                   np.abs(emy[viol] * (one_rw[viol] - cb_raw[viol])))
            worst = float(raw_drift.max()) * dt / dy
            diag.worst_drift_ratio = max(diag.worst_drift_ratio, worst)
            if n_viol > 0.25 * max(1, n_y - int(np.count_nonzero(bind))):
                raise SolverError(
                    f"CFL violation at t={t_new:.4f}: {n_viol} of {n_y} continuation nodes "
                    f"demand drifts beyond nu_allow={nu_allow:.3g} (worst ratio "
                    f"{diag.worst_drift_ratio:.3g}); refine dt or coarsen dy")

        V = V_new
        if store_flag[n - 1]:
            row = store_rows[n - 1]
            v1_store[row] = V
            mask_store[row] = bind
        if n % 200 == 0 and not np.all(np.isfinite(V)):
            raise SolverError(f"non-finite values at t={t_new:.4f}; aborting march")

    if not np.all(np.isfinite(V)):
        raise SolverError("non-finite values in the final slice")

    diag.obstacle_bound_share = bound_updates / float((n_t - 1) * n_y)
    diag.runtime_seconds = time.perf_counter() - t_start

    surface = ValueSurface(
        grid=grid, params=params, times=times[store_flag],
        v1=v1_store, retired_mask=mask_store, diagnostics=diag,
    )
    boundary = BoundaryCurve(times=times, w_bar=wbar, params=params)
    if with_obstacle:
        diag.pasting_gap = smooth_pasting_gap(surface, fcurve)
        diag.hjb_residual = hjb_residual(surface)
    return surface, boundary


def _upwind_consumption_nodes(params: ModelParams, grid: Grid, vloc: np.ndarray,
                              j: int) -> tuple[float, float]:
    """Consumption and marginal value at node j from a 3-value window.

    vloc holds V at nodes (j-1, j, j+1); the branch choice replicates the
    solver's Godunov rule. Returns (c, V1_w). On the zero-drift branch the
    marginal value is the shadow price c**(-gamma) of the binding budget.
    """
    dy = grid.dy
    y = grid.y_min + j * dy
    w = math.exp(y)
    one_rw = 1.0 + params.r * w
    gt, gamma = params.gamma_tilde, params.gamma

    dvf = max((vloc[2] - vloc[1]) / dy, _DERIVATIVE_FLOOR)
    dvb = max((vloc[1] - vloc[0]) / dy, _DERIVATIVE_FLOOR)
    vw_f = dvf / w
    vw_b = dvb / w
    cf = vw_f ** (-gt)
    cb = vw_b ** (-gt)
    if j == 0:
        cf = min(cf, one_rw)
    nu_f = (one_rw - cf) / w
    nu_b = (one_rw - cb) / w

    u = params.utility_working
    h_f = u(cf) + nu_f * dvf if nu_f > 0.0 else -math.inf
    h_b = u(cb) + nu_b * dvb if nu_b < 0.0 else -math.inf
    h_0 = u(one_rw)
    best = max(h_f, h_b, h_0)
    if best == h_f:
        return cf, vw_f
    if best == h_b:
        return cb, vw_b
    return one_rw, one_rw ** (-gamma)


def _policy_point(surface: ValueSurface, t: float, w: float) -> tuple[float, float]:
    """(consumption, marginal value) at (t, w), bilinear between stored slices."""
    grid, params = surface.grid, surface.params
    if not 0.0 <= t < grid.horizon:
        raise ValueError(f"t must lie in [0, horizon): {t}")
    if w > grid.w_cutoff * (1.0 + 1e-9):
        raise ValueError(f"wealth {w} above the grid cutoff {grid.w_cutoff:.4g}")
    if w <= 0.0:
        raise ValueError(f"wealth must be positive, got {w}")
    y = max(math.log(w), grid.y_min)  # below-floor queries clamp to the floor node

    k, tau = surface._bracket(t)
    # retirement-region guard: allow one log-cell of slack above the first
    # binding node (the boundary itself is a legitimate query point)
    for row in (k, k + 1):
        mask = surface.retired_mask[row]
        if mask.any():
            jbind = int(np.argmax(mask))
            if jbind > 0 and y > grid.y_min + (jbind + 1) * grid.dy:
                raise RetiredRegionError(
                    f"(t={t:.4f}, w={w:.4f}) lies in the retirement region; "
                    "use the post-retirement consumption rule")

    dy = grid.dy
    j = int((y - grid.y_min) / dy)
    j = min(max(j, 0), grid.n_y - 2)

    out = []
    for jj in (j, j + 1):
        lo = max(jj - 1, 0)
        hi = min(jj + 2, grid.n_y)
        window = (1.0 - tau) * surface.v1[k, lo:hi] + tau * surface.v1[k + 1, lo:hi]
        if jj == 0:
            window = np.concatenate(([window[0]], window))  # backward branch floors out
        if jj == grid.n_y - 1:
            window = np.concatenate((window, [window[-1]]))  # forward branch floors out
        out.append(_upwind_consumption_nodes(params, grid, window, jj))
    th = (y - (grid.y_min + j * dy)) / dy
    th = min(max(th, 0.0), 1.0)
    c = (1.0 - th) * out[0][0] + th * out[1][0]
    vw = (1.0 - th) * out[0][1] + th * out[1][1]
    return c, vw


def consumption_pre(surface: ValueSurface, t: float, w: float) -> float:
    """Working-phase optimal consumption (V1_w)**(-gamma_tilde) at (t, w).

    The derivative uses one-sided upwind differencing consistent with the
    solver's stencil. Queries inside the retirement region raise
    RetiredRegionError; queries below the wealth floor use the floor node's
    policy under the no-borrowing cap.
    """
    c, _ = _policy_point(surface, t, w)
    if w < surface.grid.w_min:
        c = min(c, 1.0 + surface.params.r * w)
    return c


def marginal_value_pre(surface: ValueSurface, t: float, w: float) -> float:
    """The upwind V1_w used by consumption_pre at (t, w)."""
    _, vw = _policy_point(surface, t, w)
    return vw


def hjb_residual(surface: ValueSurface) -> float:
    """Max-norm residual of the HJB on stored continuation slices.

    The time derivative is a central difference across stored slices, the
    wealth derivative the solver's upwind choice. Nodes where the obstacle
    binds, nodes within two cells of the policy kink (where the value
    function is genuinely non-smooth), and the slices adjoining the horizon
    are excluded; the residual measures consistency where V1 is classical.
    """
    grid, params = surface.grid, surface.params
    times = surface.times
    if len(times) < 5:
        return float("nan")
    y = grid.y_nodes
    w = grid.w_nodes
    dy = grid.dy
    gt, rho = params.gamma_tilde, params.rho
    worst = 0.0
    step = max(1, (len(times) - 3) // 150)  # sample ~150 slices
    for k in range(1, len(times) - 2, step):
        t = times[k]
        lam = math.exp((params.x + t - params.m) / params.b) / params.b
        V = surface.v1[k]
        vt = (surface.v1[k + 1] - surface.v1[k - 1]) / (times[k + 1] - times[k - 1])
        dvf = np.empty_like(V)
        dvf[:-1] = (V[1:] - V[:-1]) / dy
        dvf[-1] = _DERIVATIVE_FLOOR
        dvb = np.empty_like(V)
        dvb[1:] = dvf[:-1]
        dvb[0] = _DERIVATIVE_FLOOR
        np.maximum(dvf, _DERIVATIVE_FLOOR, out=dvf)
        np.maximum(dvb, _DERIVATIVE_FLOOR, out=dvb)
        vw_f, vw_b = dvf / w, dvb / w
        cf, cb = vw_f ** (-gt), vw_b ** (-gt)
        up_f = (1.0 + params.r * w - cf) > 0.0
        dn_b = (1.0 + params.r * w - cb) < 0.0
        vw = np.where(up_f, vw_f, np.where(dn_b, vw_b, np.nan))  # NaN marks the kink
        resid = vt - (rho + lam) * V + (1.0 + params.r * w) * vw \
            - vw ** (1.0 - gt) / (1.0 - gt)

        ok = np.isfinite(resid)
        masks = surface.retired_mask[k - 1] | surface.retired_mask[k] | surface.retired_mask[k + 1]
        ok &= ~masks
        kink = np.isnan(vw)
        for shift in (-2, -1, 1, 2):
            kink[max(shift, 0):grid.n_y + min(shift, 0)] |= np.isnan(vw)[max(-shift, 0):grid.n_y - max(shift, 0)]
        ok &= ~kink
        ok[:2] = ok[-2:] = False
        if ok.any():
            worst = max(worst, float(np.max(np.abs(resid[ok]))))
    return worst


def smooth_pasting_gap(surface: ValueSurface, fcurve: FCurve) -> float:
    """Relative V1_w mismatch across the boundary (diagnostic only).

    Compares the one-sided continuation derivative just below the first
    binding node against the analytic retirement-value derivative there.
    Reported over stored slices in the first 90% of the horizon.
    """
    grid, params = surface.grid, surface.params
    w = grid.w_nodes
    gaps = []
    step = max(1, len(surface.times) // 200)
    for k in range(0, len(surface.times), step):
        t = surface.times[k]
        if t > 0.9 * grid.horizon:
            continue
        mask = surface.retired_mask[k]
        if not mask.any():
            continue
        j = int(np.argmax(mask))
        if j < 3:
            continue
        v1w = (surface.v1[k, j - 1] - surface.v1[k, j - 2]) / (w[j - 1] - w[j - 2])
        vbar_w = fcurve.f_at(t) ** params.gamma * w[j - 1] ** (-params.gamma)
        gaps.append(abs(v1w - vbar_w) / vbar_w)
    return float(max(gaps)) if gaps else float("nan")
