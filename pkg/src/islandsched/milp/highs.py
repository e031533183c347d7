"""Adapter to the HiGHS solver shipped with SciPy."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .model import MilpModel, MilpSolution, ModelArrays

_STATUS = {0: "optimal", 1: "time-limit", 2: "infeasible", 3: "unbounded", 4: "error"}


def solve_highs(arr: ModelArrays, *, time_limit: float = math.inf, gap: float = 1e-6,
                relax: bool = False) -> MilpSolution:
    opts = {"mip_rel_gap": gap, "presolve": True}
    if math.isfinite(time_limit):
        opts["time_limit"] = float(time_limit)
    cons = [LinearConstraint(arr.a, arr.row_lo, arr.row_hi)] if arr.a.shape[0] else []
    integrality = np.zeros(len(arr.c)) if relax else arr.integer.astype(float)
    res = milp(arr.c, constraints=cons, integrality=integrality,
               bounds=Bounds(arr.lb, arr.ub), options=opts)
    status = _STATUS.get(res.status, "error")
    if res.x is None:
        if status == "optimal":
            status = "error"
        return MilpSolution(status, backend="highs")
    x = np.asarray(res.x, dtype=float).copy()
    if not relax:
        x[arr.integer] = np.round(x[arr.integer])
    obj = float(arr.c @ x + arr.c0)
    bound = getattr(res, "mip_dual_bound", None)
    bound = obj if bound is None or not np.isfinite(bound) else float(bound) + arr.c0
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    return MilpSolution(status, obj, x, min(bound, obj), nodes, 0,
                        [(nodes, obj, min(bound, obj))], "highs")


def solve_model_highs(model: MilpModel, **kw) -> MilpSolution:
    return solve_highs(model.to_arrays(), **kw)
