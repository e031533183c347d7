"""LP-based branch and bound.

Nodes are explored best-bound first; after each branching the search
plunges into the child on the side the fractional value rounds to and only
returns to the heap when the dive ends.  Branching picks the most
fractional variable, ties to the lowest index, so runs are deterministic.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .model import MilpModel, MilpSolution, ModelArrays
from .simplex import Basis, Simplex

log = logging.getLogger(__name__)

INT_TOL = 1e-6
# remaining relative gap still reported as optimal
OPT_GAP = 1e-6


@dataclass
class _Node:
    bound: float
    depth: int
    lb: np.ndarray
    ub: np.ndarray
    start: Basis | None = None  # parent's optimal basis; None means the live tableau


def tighten_singletons(arr: ModelArrays) -> tuple[ModelArrays, bool]:
    """Fold single-variable rows into variable bounds.

    Returns the reduced arrays and False if some bound became empty.
    """
    a = arr.a.tocsr()
    lb, ub = arr.lb.copy(), arr.ub.copy()
    nnz = np.diff(a.indptr)
    keep = np.ones(a.shape[0], dtype=bool)
    for r in np.flatnonzero(nnz == 1):
        j = a.indices[a.indptr[r]]
        v = a.data[a.indptr[r]]
        lo, hi = arr.row_lo[r] / v, arr.row_hi[r] / v
        if v < 0:
            lo, hi = hi, lo
        lb[j] = max(lb[j], lo)
        ub[j] = min(ub[j], hi)
        keep[r] = False
    for r in np.flatnonzero(nnz == 0):
        if arr.row_lo[r] > 1e-9 or arr.row_hi[r] < -1e-9:
            return arr, False
        keep[r] = False
    ints = arr.integer
    lb[ints] = np.ceil(lb[ints] - INT_TOL)
    ub[ints] = np.floor(ub[ints] + INT_TOL)
    ok = bool(np.all(lb <= ub + 1e-9))
    out = ModelArrays(arr.c, arr.c0, a[keep], arr.row_lo[keep], arr.row_hi[keep], lb, ub, arr.integer)
    return out, ok


def propagate_bounds(arr: ModelArrays, passes: int = 20, eps: float = 1e-9) -> tuple[ModelArrays, bool]:
    """Tighten variable bounds from row activity limits.

    Each row's min and max activity over the current box implies a bound on
    every variable in it.  Continuous bounds are loosened by ``eps`` so that
    rounding can never cut off a feasible point.  Returns False if some
    bound became empty.
    """
    a = arr.a.tocsr()
    rows = np.repeat(np.arange(a.shape[0]), np.diff(a.indptr))
    cols, v = a.indices, a.data
    lb, ub = arr.lb.copy(), arr.ub.copy()
    ints = arr.integer
    n_rows = a.shape[0]

    def split(vals):
        # per-row sum of finite parts and count of infinite parts
        inf = ~np.isfinite(vals)
        fin = np.bincount(rows, np.where(inf, 0.0, vals), n_rows)
        cnt = np.bincount(rows, inf.astype(float), n_rows)
        return fin, cnt, inf

    for _ in range(passes):
        lo_c = np.where(v > 0, v * lb[cols], v * ub[cols])
        hi_c = np.where(v > 0, v * ub[cols], v * lb[cols])
        lo_fin, lo_cnt, lo_inf = split(lo_c)
        hi_fin, hi_cnt, hi_inf = split(hi_c)
        # activity of the other entries in the row, finite only when no other entry is infinite
        rest_lo = np.where(lo_cnt[rows] - lo_inf == 0, lo_fin[rows] - np.where(lo_inf, 0, lo_c), -np.inf)
        rest_hi = np.where(hi_cnt[rows] - hi_inf == 0, hi_fin[rows] - np.where(hi_inf, 0, hi_c), np.inf)
        with np.errstate(invalid="ignore"):
            # v*x <= row_hi - rest_lo and v*x >= row_lo - rest_hi
            up = (arr.row_hi[rows] - rest_lo) / v
            dn = (arr.row_lo[rows] - rest_hi) / v
        new_ub = np.where(v > 0, up, dn)
        new_lb = np.where(v > 0, dn, up)
        nub = ub.copy()
        nlb = lb.copy()
        np.minimum.at(nub, cols, np.where(np.isnan(new_ub), np.inf, new_ub))
        np.maximum.at(nlb, cols, np.where(np.isnan(new_lb), -np.inf, new_lb))
        nub = np.where(ints, np.floor(nub + INT_TOL), nub + eps * (1 + np.abs(nub)))
        nlb = np.where(ints, np.ceil(nlb - INT_TOL), nlb - eps * (1 + np.abs(nlb)))
        # keep only real progress, so continuous bounds do not creep
        tol = np.where(ints, 0.5, 1e-7 * (1 + np.abs(np.where(np.isfinite(ub), ub, 0.0))))
        grow_ub = nub < ub - tol
        tol = np.where(ints, 0.5, 1e-7 * (1 + np.abs(np.where(np.isfinite(lb), lb, 0.0))))
        grow_lb = nlb > lb + tol
        if not (grow_ub.any() or grow_lb.any()):
            break
        ub = np.where(grow_ub, nub, ub)
        lb = np.where(grow_lb, nlb, lb)
        if np.any(lb > ub + 1e-9):
            return arr, False
    out = ModelArrays(arr.c, arr.c0, arr.a, arr.row_lo, arr.row_hi, lb, ub, arr.integer)
    return out, bool(np.all(lb <= ub + 1e-9))


def _branch_var(x: np.ndarray, integer: np.ndarray) -> int:
    frac = np.abs(x - np.round(x))
    frac = np.where(integer, frac, 0.0)
    if frac.max() <= INT_TOL:
        return -1
    # round so float noise cannot break ties unpredictably
    return int(np.argmax(np.round(frac, 9)))


def branch_and_bound(arr: ModelArrays, *, time_limit: float = math.inf, gap: float = 1e-6,
                     node_limit: int = 10**7, snapshot_every: int = 0) -> MilpSolution:
    t0 = time.monotonic()
    arr, ok = tighten_singletons(arr)
    if ok and arr.integer.any():
        arr, ok = propagate_bounds(arr)
    if not ok:
        return MilpSolution("infeasible")
    integer = arr.integer
    inc_x, inc_obj = None, math.inf
    snapshots: list[tuple[int, float, float]] = []
    heap: list[tuple[float, int, _Node]] = []
    seq = 0
    nodes = 0
    iters = 0

    sx = Simplex(arr)
    root = sx.solve()
    if root.status == "infeasible":
        return MilpSolution("infeasible", iterations=iters)
    if root.status == "unbounded":
        return MilpSolution("unbounded", iterations=iters)
    if root.status != "optimal":
        return MilpSolution("iteration-limit", iterations=iters)

    def rel_gap(bound: float) -> float:
        if inc_x is None:
            return math.inf
        return (inc_obj - bound) / max(1.0, abs(inc_obj))

    # a node carries its parent's LP value until it is solved
    current: _Node | None = _Node(root.objective, 0, arr.lb.copy(), arr.ub.copy())
    cached = root
    status = "optimal"
    while True:
        if current is None:
            if not heap:
                break
            _, _, current = heapq.heappop(heap)
            cached = None
        best_bound = min([current.bound] + [h[0] for h in heap])
        if inc_x is not None and rel_gap(best_bound) <= gap:
            if rel_gap(best_bound) > OPT_GAP:
                status = "gap-limit"
            else:
                current = None
                heap.clear()
            break
        if time.monotonic() - t0 > time_limit:
            status = "time-limit"
            break
        if nodes >= node_limit:
            status = "node-limit"
            break
        node = current
        current = None
        if node.bound >= inc_obj - 1e-9 * max(1.0, abs(inc_obj)):
            continue
        res = cached if cached is not None else sx.resolve(node.lb, node.ub, node.start)
        if res.status == "iteration-limit":
            # warm start went astray; fall back to a cold solve
            iters += sx.iterations
            sx = Simplex(ModelArrays(arr.c, arr.c0, arr.a, arr.row_lo, arr.row_hi,
                                     node.lb, node.ub, arr.integer))
            res = sx.solve()
        cached = None
        nodes += 1
        if res.status != "optimal":
            continue
        if res.objective >= inc_obj - 1e-9 * max(1.0, abs(inc_obj)):
            continue
        j = _branch_var(res.x, integer)
        if j < 0:
            x = res.x.copy()
            x[integer] = np.round(x[integer])
            inc_x, inc_obj = x, float(arr.c @ x + arr.c0)
            snapshots.append((nodes, inc_obj, min([res.objective] + [h[0] for h in heap])))
            log.debug("node %d incumbent %.6g", nodes, inc_obj)
            continue
        v = res.x[j]
        down_ub = node.ub.copy()
        down_ub[j] = math.floor(v)
        up_lb = node.lb.copy()
        up_lb[j] = math.ceil(v)
        down = _Node(res.objective, node.depth + 1, node.lb, down_ub)
        up = _Node(res.objective, node.depth + 1, up_lb, node.ub)
        first, second = (up, down) if v - math.floor(v) >= 0.5 else (down, up)
        second.start = sx.snapshot()
        heapq.heappush(heap, (second.bound, seq, second))
        seq += 1
        current = first
        if snapshot_every and nodes % snapshot_every == 0:
            snapshots.append((nodes, inc_obj, min([res.objective] + [h[0] for h in heap])))

    iters += sx.iterations
    open_bounds = [h[0] for h in heap] + ([current.bound] if current is not None else [])
    bound = min(open_bounds) if open_bounds else inc_obj
    if inc_x is None:
        if status == "optimal":
            return MilpSolution("infeasible", nodes=nodes, iterations=iters, snapshots=snapshots)
        return MilpSolution(status, bound=bound, nodes=nodes, iterations=iters, snapshots=snapshots)
    bound = min(bound, inc_obj)
    snapshots.append((nodes, inc_obj, bound))
    return MilpSolution(status, inc_obj, inc_x, bound, nodes, iters, snapshots, "builtin")


def solve_model(model: MilpModel, **kw) -> MilpSolution:
    return branch_and_bound(model.to_arrays(), **kw)
