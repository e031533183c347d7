"""Bounded-variable simplex on a dense tableau.

Every row ``lo <= a x <= hi`` is written as ``a x - s = 0`` with a bounded
row-activity variable ``s``; phase 1 starts from a basis of signed
artificials.  Primal pricing is Dantzig's rule, switching to Bland's rule
after a run of degenerate pivots; the ratio test is Harris' two-pass
variant.  A dual simplex re-solves after bound changes from a stored basis,
which is what branch and bound uses at every node but the root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelArrays

BASIC, AT_LO, AT_HI, FREE = 0, 1, 2, 3
PIV_TOL = 1e-9
REFRESH_EVERY = 100
BLAND_AFTER = 50


@dataclass
class LpResult:
    status: str  # optimal | infeasible | unbounded | iteration-limit
    x: np.ndarray | None
    objective: float
    iterations: int


@dataclass
class Basis:
    """Enough to rebuild a tableau: basic columns and nonbasic statuses."""

    basis: np.ndarray
    status: np.ndarray


class Simplex:
    def __init__(self, arr: ModelArrays, *, feas_tol: float = 1e-9, opt_tol: float = 1e-9,
                 max_iter: int = 100000):
        a = arr.a.toarray()
        m, n = a.shape
        self.m, self.n = m, n
        self.N = n + 2 * m
        self.arr = arr
        self.feas_tol, self.opt_tol, self.max_iter = feas_tol, opt_tol, max_iter
        self.a = a
        self.scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
        self.cost = np.zeros(self.N)
        self.cost[:n] = arr.c
        self.art = np.zeros(self.N, dtype=bool)
        self.art[n + m:] = True
        self.lb = np.concatenate([arr.lb, arr.row_lo, np.zeros(m)])
        self.ub = np.concatenate([arr.ub, arr.row_hi, np.zeros(m)])
        self.mat: np.ndarray | None = None  # full column matrix, fixed once phase 1 ran
        self.t = self.x = self.status = self.basis = self.d = None
        self.iterations = 0

    # --- state helpers ---------------------------------------------------

    def _nonbasic_value(self, j: int, st: int) -> float:
        if st == AT_LO:
            return self.lb[j]
        if st == AT_HI:
            return self.ub[j]
        return 0.0

    def _place_nonbasic(self) -> None:
        st = self.status
        x = self.x
        for j in np.flatnonzero(st != BASIC):
            s = st[j]
            if s == AT_LO and not math.isfinite(self.lb[j]):
                s = AT_HI if math.isfinite(self.ub[j]) else FREE
            elif s == AT_HI and not math.isfinite(self.ub[j]):
                s = AT_LO if math.isfinite(self.lb[j]) else FREE
            elif s == FREE and (math.isfinite(self.lb[j]) or math.isfinite(self.ub[j])):
                s = AT_LO if math.isfinite(self.lb[j]) else AT_HI
            st[j] = s
            x[j] = self._nonbasic_value(j, s)

    def refresh(self) -> None:
        nb = self.status != BASIC
        self.x[self.basis] = -self.t[:, nb] @ self.x[nb]
        self.d = self.cost - self.cost[self.basis] @ self.t
        self.d[self.basis] = 0.0

    def snapshot(self) -> Basis:
        return Basis(self.basis.copy(), self.status.copy())

    def set_bounds(self, lb: np.ndarray, ub: np.ndarray) -> None:
        self.lb[:self.n] = lb
        self.ub[:self.n] = ub

    def load(self, b: Basis) -> None:
        """Rebuild the tableau for a stored basis."""
        self.basis = b.basis.copy()
        self.status = b.status.copy()
        self.t = np.linalg.solve(self.mat[:, self.basis], self.mat)
        self.x = np.zeros(self.N)
        self._place_nonbasic()
        self.refresh()

    # --- pivoting --------------------------------------------------------

    def _pivot(self, r: int, j: int) -> None:
        t = self.t
        t[r] /= t[r, j]
        colj = t[:, j].copy()
        colj[r] = 0.0
        nz = np.flatnonzero(colj)
        if len(nz):
            t[nz] -= np.outer(colj[nz], t[r])
        self.d -= self.d[j] * t[r]
        self.d[j] = 0.0
        self.basis[r] = j
        self.status[j] = BASIC

    def _entering(self, bland: bool) -> tuple[int, int]:
        d, st, tol = self.d, self.status, self.opt_tol
        movable = self.lb < self.ub
        up = ((st == AT_LO) | (st == FREE)) & (d < -tol) & movable
        down = ((st == AT_HI) | (st == FREE)) & (d > tol) & movable
        cand = up | down
        if not cand.any():
            return -1, 0
        if bland:
            j = int(np.flatnonzero(cand)[0])
        else:
            j = int(np.argmax(np.where(cand, np.abs(d), -1.0)))
        return j, (1 if up[j] else -1)

    def _ratio(self, j: int, direction: int, bland: bool):
        col = direction * self.t[:, j]
        xb = self.x[self.basis]
        lbb = self.lb[self.basis]
        ubb = self.ub[self.basis]
        dec = col > PIV_TOL
        inc = col < -PIV_TOL
        tol = self.feas_tol
        lim_relaxed = np.full(self.m, np.inf)
        lim = np.full(self.m, np.inf)
        lim_relaxed[dec] = (xb[dec] - lbb[dec] + tol) / col[dec]
        lim_relaxed[inc] = (ubb[inc] - xb[inc] + tol) / -col[inc]
        lim[dec] = (xb[dec] - lbb[dec]) / col[dec]
        lim[inc] = (ubb[inc] - xb[inc]) / -col[inc]
        flip = self.ub[j] - self.lb[j]
        theta_max = float(np.min(lim_relaxed)) if self.m else np.inf
        if not math.isfinite(theta_max):
            return (flip, -1) if math.isfinite(flip) else (np.inf, -1)
        ok = np.flatnonzero(lim <= theta_max)
        if bland:
            r = int(ok[np.argmin(self.basis[ok])])
        else:
            r = int(ok[np.argmax(np.abs(col[ok]))])
        theta = max(float(lim[r]), 0.0)
        if math.isfinite(flip) and flip <= theta:
            return flip, -1
        return theta, r

    def primal(self) -> str:
        degenerate = 0
        bland = False
        stop = self.iterations + self.max_iter
        while True:
            if self.iterations >= stop:
                return "iteration-limit"
            j, direction = self._entering(bland)
            if j < 0:
                return "optimal"
            theta, r = self._ratio(j, direction, bland)
            if not math.isfinite(theta):
                return "unbounded"
            self.iterations += 1
            step = direction * theta
            self.x[self.basis] -= step * self.t[:, j]
            self.x[j] += step
            if r < 0:
                self.status[j] = AT_HI if direction > 0 else AT_LO
                self.x[j] = self.ub[j] if direction > 0 else self.lb[j]
            else:
                leave = self.basis[r]
                going_down = direction * self.t[r, j] > 0
                bound = self.lb[leave] if going_down else self.ub[leave]
                if math.isfinite(bound):
                    self.status[leave] = AT_LO if going_down else AT_HI
                    self.x[leave] = bound
                else:
                    self.status[leave] = FREE
                self._pivot(r, j)
            if theta <= 1e-12:
                degenerate += 1
                bland = degenerate > BLAND_AFTER
            else:
                degenerate = 0
                bland = False
            if self.iterations % REFRESH_EVERY == 0:
                self.refresh()

    def dual(self) -> str:
        """Dual simplex from a dual-feasible basis; restores primal feasibility."""
        tol = self.feas_tol
        stop = self.iterations + self.max_iter
        while True:
            if self.iterations >= stop:
                return "iteration-limit"
            xb = self.x[self.basis]
            below = self.lb[self.basis] - xb
            above = xb - self.ub[self.basis]
            viol = np.maximum(below, above)
            r = int(np.argmax(viol))
            if viol[r] <= tol:
                return "optimal"
            leave = self.basis[r]
            row = self.t[r]
            st = self.status
            movable = (st != BASIC) & (self.lb < self.ub)
            if below[r] > 0:
                target, leave_st = self.lb[leave], AT_LO
                elig = movable & (((st == AT_LO) & (row < -PIV_TOL)) | ((st == AT_HI) & (row > PIV_TOL))
                                  | ((st == FREE) & (np.abs(row) > PIV_TOL)))
            else:
                target, leave_st = self.ub[leave], AT_HI
                elig = movable & (((st == AT_LO) & (row > PIV_TOL)) | ((st == AT_HI) & (row < -PIV_TOL))
                                  | ((st == FREE) & (np.abs(row) > PIV_TOL)))
            if not elig.any():
                return "infeasible"
            cand = np.flatnonzero(elig)
            ratios = np.abs(self.d[cand]) / np.abs(row[cand])
            best = ratios.min()
            near = cand[ratios <= best + self.opt_tol]
            j = int(near[np.argmax(np.abs(row[near]))])
            self.iterations += 1
            step = (xb[r] - target) / row[j]
            self.x[self.basis] -= step * self.t[:, j]
            self.x[j] += step
            self.x[leave] = target
            self.status[leave] = leave_st
            self._pivot(r, j)
            if self.iterations % REFRESH_EVERY == 0:
                self.refresh()

    # --- drivers ---------------------------------------------------------

    def solve(self) -> LpResult:
        """Two-phase primal simplex from scratch."""
        n, m, N = self.n, self.m, self.N
        if np.any(self.lb[:n + m] > self.ub[:n + m] + self.feas_tol):
            return LpResult("infeasible", None, math.nan, 0)
        x = np.zeros(N)
        status = np.full(N, FREE, dtype=np.int8)
        self.status, self.x = status, x
        status[:n + m] = AT_LO
        self._place_nonbasic()
        r = x[n:n + m] - self.a @ x[:n]
        sigma = np.where(r >= 0, 1.0, -1.0)
        self.mat = np.hstack([self.a, -np.eye(m), np.diag(sigma)])
        self.t = self.mat * sigma[:, None]
        x[n + m:] = np.abs(r)
        status[n + m:] = BASIC
        self.basis = np.arange(n + m, N)
        # phase 1: artificials free to move up, cost one each
        self.ub[self.art] = np.inf
        saved = self.cost
        self.cost = self.art.astype(float)
        self.refresh()
        st = self.primal()
        self.cost = saved
        self.ub[self.art] = 0.0
        if st == "iteration-limit":
            return LpResult(st, None, math.nan, self.iterations)
        self.refresh()
        if float(np.sum(self.x[self.art])) > 1e-7 * self.scale:
            return LpResult("infeasible", None, math.nan, self.iterations)
        nb_art = self.art & (self.status != BASIC)
        self.x[nb_art] = 0.0
        self.status[nb_art] = AT_LO
        self.refresh()
        return self._finish(self.primal())

    def resolve(self, lb: np.ndarray, ub: np.ndarray, start: Basis | None = None) -> LpResult:
        """Re-optimize after structural bound changes, warm from ``start``."""
        if np.any(lb > ub + self.feas_tol):
            return LpResult("infeasible", None, math.nan, 0)
        self.set_bounds(lb, ub)
        if start is not None:
            self.load(start)
        else:
            self._place_nonbasic()
            self.refresh()
        st = self.dual()
        if st == "optimal":
            # tolerance drift can leave small dual infeasibilities behind
            st = self.primal()
        return self._finish(st)

    def _finish(self, st: str) -> LpResult:
        if st != "optimal":
            return LpResult(st, None, math.nan, self.iterations)
        self.refresh()
        x = self.x[:self.n].copy()
        x = np.minimum(np.maximum(x, self.lb[:self.n]), self.ub[:self.n])
        return LpResult("optimal", x, float(self.arr.c @ x + self.arr.c0), self.iterations)


def solve_arrays(arr: ModelArrays, lb: np.ndarray | None = None, ub: np.ndarray | None = None,
                 **kw) -> LpResult:
    """LP relaxation of ``arr`` with optional overriding variable bounds."""
    if lb is not None or ub is not None:
        arr = ModelArrays(arr.c, arr.c0, arr.a, arr.row_lo, arr.row_hi,
                          arr.lb if lb is None else lb, arr.ub if ub is None else ub, arr.integer)
    return Simplex(arr, **kw).solve()
