"""Search the leisure endowment so simulated retirement hits target bands.

Each candidate l_bar triggers a full solve (post-retirement ODE plus the
free-boundary PDE) and one simulation from the target's starting state; the
feasible set is the sub-interval of candidates whose retirement age and
wealth both land inside the bands.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .model import ModelParams, default_params
from .policy_sim import simulate
from .post_retirement import SolverError, solve_f
from .pre_retirement import Grid, solve_pde


class CalibrationError(RuntimeError):
    """No candidate satisfied the target bands; carries the closest miss."""

    def __init__(self, message: str, closest=None):
        super().__init__(message)
        self.closest = closest


@dataclass(frozen=True)
class CalibrationTarget:
    """Bands the simulated retirement outcome must hit.

    Defaults: start at age 30 with one year of income saved, retire between
    55 and 65 holding 7 to 12 times annual income; search l_bar in [6, 7].
    """

    start_age: float = 30.0
    start_wealth: float = 1.0
    age_band: tuple[float, float] = (55.0, 65.0)
    wealth_band: tuple[float, float] = (7.0, 12.0)
    search_interval: tuple[float, float] = (6.0, 7.0)

    def __post_init__(self):
        if self.age_band[0] >= self.age_band[1] or self.wealth_band[0] >= self.wealth_band[1]:
            raise ValueError("bands must be non-empty intervals")
        if self.search_interval[0] >= self.search_interval[1]:
            raise ValueError("search interval must have positive width")
        if self.start_wealth <= 0.0:
            raise ValueError("start_wealth must be positive")


@dataclass(frozen=True)
class CandidateOutcome:
    l_bar: float
    retirement_age: float | None
    retirement_wealth: float | None
    feasible: bool
    note: str = ""

    def miss(self, target: CalibrationTarget) -> float:
        """Distance to the bands (0 when feasible, inf when no retirement)."""
        if self.retirement_age is None:
            return math.inf
        lo_a, hi_a = target.age_band
        lo_w, hi_w = target.wealth_band
        d_age = max(0.0, lo_a - self.retirement_age, self.retirement_age - hi_a)
        d_w = max(0.0, lo_w - self.retirement_wealth, self.retirement_wealth - hi_w)
        return d_age + d_w


@dataclass(frozen=True)
class CalibrationResult:
    recommended: float
    feasible_interval: tuple[float, float]
    scan: list[CandidateOutcome]
    achieved: CandidateOutcome
    verified: CandidateOutcome | None = None


def evaluate_candidate(l_bar: float, target: CalibrationTarget, grid: Grid,
                       params_base: ModelParams) -> CandidateOutcome:
    """Solve the model at one l_bar and simulate the target's start state."""
    try:
        params = params_base.evolve(l_bar=l_bar, x=target.start_age)
        fcurve = solve_f(params, n_steps=grid.n_t - 1)
        surface, boundary = solve_pde(params, grid, fcurve)
        traj = simulate(surface, boundary, fcurve, w0=target.start_wealth, t0=0.0)
    except (SolverError, ValueError) as exc:
        return CandidateOutcome(l_bar=l_bar, retirement_age=None, retirement_wealth=None,
                                feasible=False, note=f"solve failed: {exc}")
    if traj.retirement_time is None:
        return CandidateOutcome(l_bar=l_bar, retirement_age=None, retirement_wealth=None,
                                feasible=False, note="never retires")
    age = target.start_age + traj.retirement_time
    wealth = float(traj.wealth_at(traj.retirement_time))
    feasible = (target.age_band[0] <= age <= target.age_band[1]
                and target.wealth_band[0] <= wealth <= target.wealth_band[1])
    return CandidateOutcome(l_bar=l_bar, retirement_age=age, retirement_wealth=wealth,
                            feasible=feasible)


def _scan(candidates, target, grid, params_base, max_workers):
    if max_workers > 1 and len(candidates) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(
                evaluate_candidate, candidates,
                [target] * len(candidates), [grid] * len(candidates),
                [params_base] * len(candidates)))
    else:
        outcomes = [evaluate_candidate(lb, target, grid, params_base) for lb in candidates]
    return sorted(outcomes, key=lambda o: o.l_bar)


def calibrate_lbar(
    target: CalibrationTarget,
    grid: Grid,
    params_base: ModelParams | None = None,
    n_candidates: int = 11,
    refine_iters: int = 4,
    verify_grid: Grid | None = None,
    max_workers: int = 1,
) -> CalibrationResult:
    """Locate the feasible l_bar interval for the target bands.

    Scans ``n_candidates`` evenly spaced values over the search interval,
    then bisects the feasibility edges ``refine_iters`` times each. The
    recommended value is 6.49 when the feasible interval contains it,
    otherwise the interval midpoint. When ``verify_grid`` is given, the
    winner is re-solved on it and the outcome attached.

    Raises:
        CalibrationError: when no candidate is feasible; the error carries
            the closest-miss outcome for diagnosis.
    """
    if params_base is None:
        params_base = default_params()
    if n_candidates < 2:
        raise ValueError("n_candidates must be at least 2")
    lo, hi = target.search_interval
    step = (hi - lo) / (n_candidates - 1)
    candidates = [lo + k * step for k in range(n_candidates)]
    scan = _scan(candidates, target, grid, params_base, max_workers)

    feas = [o for o in scan if o.feasible]
    if not feas:
        closest = min(scan, key=lambda o: o.miss(target))
        raise CalibrationError(
            f"no feasible l_bar in [{lo}, {hi}] for age band {target.age_band} and "
            f"wealth band {target.wealth_band}; closest miss at l_bar={closest.l_bar:.4g} "
            f"(age={closest.retirement_age}, wealth={closest.retirement_wealth}, "
            f"note={closest.note!r})", closest=closest)

    # take the longest contiguous feasible run of the scan
    runs = []
    current = [scan[0]] if scan[0].feasible else []
    for o in scan[1:]:
        if o.feasible:
            current.append(o)
        elif current:
            runs.append(current)
            current = []
    if current:
        runs.append(current)
    block = max(runs, key=len)
    feas_lo, feas_hi = block[0].l_bar, block[-1].l_bar

    # bisect the edges against their infeasible neighbors
    extra: list[CandidateOutcome] = []

    def edge(inner: float, outer: float) -> float:
        good, bad = inner, outer
        for _ in range(refine_iters):
            mid = 0.5 * (good + bad)
            out = evaluate_candidate(mid, target, grid, params_base)
            extra.append(out)
            if out.feasible:
                good = mid
            else:
                bad = mid
        return good

    if feas_lo > lo + 1e-12 and feas_lo - step >= lo - 1e-12:
        feas_lo = edge(feas_lo, feas_lo - step)
    if feas_hi < hi - 1e-12 and feas_hi + step <= hi + 1e-12:
        feas_hi = edge(feas_hi, feas_hi + step)

    recommended = 6.49 if feas_lo <= 6.49 <= feas_hi else 0.5 * (feas_lo + feas_hi)
    achieved = next((o for o in scan + extra if abs(o.l_bar - recommended) < 1e-12), None)
    if achieved is None:
        achieved = evaluate_candidate(recommended, target, grid, params_base)

    verified = None
    if verify_grid is not None:
        verified = evaluate_candidate(recommended, target, verify_grid, params_base)

    full_scan = sorted(scan + extra, key=lambda o: o.l_bar)
    return CalibrationResult(recommended=recommended,
                             feasible_interval=(feas_lo, feas_hi),
                             scan=full_scan, achieved=achieved, verified=verified)
