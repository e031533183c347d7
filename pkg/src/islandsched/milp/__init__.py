"""Linear and mixed-integer programming: model layer, simplex, branch and bound."""

from __future__ import annotations

import math

from .bnb import branch_and_bound, propagate_bounds, tighten_singletons
from .highs import solve_highs
from .lpfile import dump_lp, load_lp
from .model import (INF, Constraint, LinExpr, MilpModel, MilpSolution, ModelArrays,
                    ModelError, Var, quicksum)
from .simplex import solve_arrays

BACKENDS = ("builtin", "highs")


def solve_lp(model: MilpModel, *, backend: str = "builtin") -> MilpSolution:
    """Solve the LP relaxation (integrality dropped)."""
    arr = model.to_arrays()
    if backend == "highs":
        return solve_highs(arr, relax=True)
    if backend != "builtin":
        raise ValueError(f"unknown backend {backend!r}")
    res = solve_arrays(arr)
    if res.status != "optimal":
        return MilpSolution(res.status, iterations=res.iterations)
    return MilpSolution("optimal", res.objective, res.x, res.objective, 0, res.iterations)


def solve_mip(model: MilpModel, gap: float = 1e-6, time_limit: float = math.inf, *,
              backend: str = "builtin", node_limit: int = 10**7,
              snapshot_every: int = 0) -> MilpSolution:
    """Minimize ``model`` by branch and bound, or hand it to HiGHS."""
    arr = model.to_arrays()
    if backend == "highs":
        return solve_highs(arr, time_limit=time_limit, gap=gap)
    if backend != "builtin":
        raise ValueError(f"unknown backend {backend!r}")
    return branch_and_bound(arr, time_limit=time_limit, gap=gap, node_limit=node_limit,
                            snapshot_every=snapshot_every)


__all__ = [
    "BACKENDS", "INF", "Constraint", "LinExpr", "MilpModel", "MilpSolution", "ModelArrays",
    "ModelError", "Var", "branch_and_bound", "dump_lp", "load_lp", "quicksum", "solve_arrays",
    "solve_highs", "solve_lp", "solve_mip", "tighten_singletons",
]
