"""CSV writers for solver outputs.

Every file carries comment lines documenting units, a header row, and a
trailing manifest reference. Floats are rendered with a fixed format so
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .calibrate import CalibrationResult
from .model import ModelParams
from .mortality import SurvivalCurve, survival
from .policy_sim import Trajectory, UncommittedCurve
from .post_retirement import FCurve
from .pre_retirement import BoundaryCurve, ValueSurface

UNITS_COMMENT = "# units: wealth in annual-income multiples; time and age in years; rates per year"
MANIFEST_REF = "# manifest: manifest.json"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    v = float(v)
    if math.isnan(v):
        return ""
    return format(v, ".10g")


def _write(path, header: list[str], rows, comments: list[str] | None = None) -> None:
    lines = [UNITS_COMMENT]
    lines.extend(comments or [])
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    lines.append(MANIFEST_REF)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_survival_csv(path, curve: SurvivalCurve) -> None:
    _write(path, ["t", "tpx"], zip(curve.times, curve.values))


def write_fcurve_csv(path, fcurve: FCurve, stride: int = 1) -> None:
    params = fcurve.params
    times = fcurve.times[::stride]
    f = fcurve.f_values[::stride]
    rows = ((t, params.x + t, fv, fv ** params.gamma) for t, fv in zip(times, f))
    _write(path, ["t", "age", "f", "F"], rows)


def write_boundary_csv(path, boundary: BoundaryCurve, stride: int = 1) -> None:
    params = boundary.params
    times = boundary.times[::stride]
    wb = boundary.w_bar[::stride]
    rows = ((t, params.x + t, v) for t, v in zip(times, wb))
    _write(path, ["t", "age", "w_bar"], rows)


def write_surface_csv(path, surface: ValueSurface, t_stride: int = 1, y_stride: int = 1) -> None:
    params = surface.params
    w = surface.grid.w_nodes
    rows = []
    for k in range(0, len(surface.times), t_stride):
        t = surface.times[k]
        for j in range(0, surface.grid.n_y, y_stride):
            rows.append((t, params.x + t, w[j], surface.v1[k, j],
                         bool(surface.retired_mask[k, j])))
    _write(path, ["t", "age", "w", "V1", "retired_flag"], rows)


def write_trajectory_csv(path, traj: Trajectory, stride: int = 1) -> None:
    params = traj.params
    idx = range(0, len(traj.times), stride)
    tpx = survival(params, np.minimum(traj.times, params.horizon))
    rows = ((traj.times[i], params.x + traj.times[i], traj.wealth[i],
             traj.consumption[i], traj.regime[i], tpx[i]) for i in idx)
    comments = []
    if traj.retirement_time is not None:
        comments.append(f"# retirement_time: {_fmt(traj.retirement_time)}"
                        f" (age {_fmt(params.x + traj.retirement_time)})")
    else:
        comments.append("# retirement_time: none")
    _write(path, ["t", "age", "wealth", "consumption", "regime", "tpx"], rows,
           comments=comments)


def write_uncommitted_csv(path, curve: UncommittedCurve, params: ModelParams,
                          stride: int = 1) -> None:
    idx = range(0, len(curve.times), stride)
    rows = ((curve.times[i], params.x + curve.times[i], curve.wealth[i]) for i in idx)
    comments = [
        f"# w_tilde: {_fmt(curve.w_tilde)} (coalescence spread {_fmt(curve.spread)})",
        "# backward start times: " + " ".join(_fmt(t) for t in curve.retirement_times),
    ]
    _write(path, ["t", "age", "w_uncommitted"], rows, comments=comments)


def write_calibration_csv(path, result: CalibrationResult) -> None:
    rows = ((o.l_bar, o.retirement_age, o.retirement_wealth, o.feasible, o.note)
            for o in result.scan)
    lo, hi = result.feasible_interval
    comments = [
        f"# feasible_interval: [{_fmt(lo)}, {_fmt(hi)}]",
        f"# recommended: {_fmt(result.recommended)}",
    ]
    if result.verified is not None:
        comments.append(
            f"# verified: age={_fmt(result.verified.retirement_age)} "
            f"wealth={_fmt(result.verified.retirement_wealth)} "
            f"feasible={_fmt(result.verified.feasible)}")
    _write(path, ["l_bar", "retirement_age", "retirement_wealth", "feasible_flag", "note"],
           rows, comments=comments)


def remove_if_exists(paths) -> None:
    for p in paths:
        try:
            os.unlink(p)
        except FileNotFoundError:
            pass
