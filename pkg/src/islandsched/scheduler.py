"""Day-ahead microgrid scheduling with islanding constraints.

Case 1 is plain unit commitment over a linearized DistFlow feeder.  Case 2
adds the static islanding rows: spinning reserve must cover the PCC import
and DSG output must cover an export.  Case 3 adds inertia-emulation
availability logic and bounds the surrogate-predicted frequency nadir after
an islanding event in every period.

Costs: unit costs are per MWh in the same currency unit as the objective;
the PCC price is in ct/kWh and is scaled by ``price_scale`` into that unit.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import Forecast, NetworkModel, enumerate_scenarios, wind_power
from .encode import encode_relu
from .milp import LinExpr, MilpModel, MilpSolution, quicksum, solve_mip
from .pspb import DsgUnit
from .surrogate import ActivationBounds, NeuralNet, activation_bounds, forward, input_box

log = logging.getLogger(__name__)

SCHEDULE_HEADER = ["period", "u_d1", "u_d2", "p_d1_mw", "p_d2_mw", "r_d1_mw", "r_d2_mw",
                   "u_w1", "u_w2", "u_w3", "u_ie1", "u_ie2", "u_ie3", "p_pcc_mw",
                   "nadir_pred_hz", "period_cost"]
SWEEP_HEADER = ["limit_hz", "cost_ie_on", "cost_ie_off"]


class ScheduleDataError(ValueError):
    pass


@dataclass
class ScheduleProblem:
    load_mw: np.ndarray  # (T,)
    price: np.ndarray  # (T,) ct/kWh
    wind_mw: np.ndarray  # (T, J) available output per turbine
    wtg_rated_mw: np.ndarray  # (J,)
    network: NetworkModel
    units: list[DsgUnit]
    case: int = 3
    nadir_limit_hz: float = 1.0
    alpha: float = 0.95
    big_m: np.ndarray | None = None  # per turbine; default twice the rating
    q_limit_frac: float = 0.75
    price_scale: float = 0.1
    u0: tuple[int, ...] | None = None
    charge_initial_startup: bool = False
    startup_literal: bool = False  # sum startups over t = 2..T-1 only
    net: NeuralNet | None = None
    bounds: ActivationBounds | None = None
    mode: str = "exact"  # exact ReLU encoding or presolved thresholds
    thresholds: dict | None = None
    ie_enabled: bool = True
    pcc_box: tuple[float, float] = (-2.0, 2.0)
    ie_tiebreak: float = 1e-6
    linearize_stable: bool = False

    def __post_init__(self):
        self.load_mw = np.asarray(self.load_mw, float)
        self.price = np.asarray(self.price, float)
        self.wind_mw = np.atleast_2d(np.asarray(self.wind_mw, float))
        self.wtg_rated_mw = np.asarray(self.wtg_rated_mw, float)
        T = len(self.load_mw)
        if self.price.shape != (T,) or self.wind_mw.shape != (T, len(self.wtg_rated_mw)):
            raise ScheduleDataError("load, price and wind series do not line up")
        if self.case not in (1, 2, 3):
            raise ScheduleDataError(f"case must be 1, 2 or 3, got {self.case}")
        if not 0 < self.alpha <= 1:
            raise ScheduleDataError("alpha must lie in (0, 1]")
        if self.nadir_limit_hz <= 0:
            raise ScheduleDataError("nadir limit must be positive")
        if self.big_m is None:
            self.big_m = 2.0 * self.wtg_rated_mw
        self.big_m = np.asarray(self.big_m, float)
        gap = np.abs(self.wind_mw - self.alpha * self.wtg_rated_mw)
        if np.any(gap >= self.big_m):
            raise ScheduleDataError("big-M must exceed |P^W - alpha * rating| for every turbine")
        if self.u0 is None:
            self.u0 = (0,) * len(self.units)
        if len(self.network.dsg_bus) != len(self.units) or len(self.network.wtg_bus) != len(self.wtg_rated_mw):
            raise ScheduleDataError("network source buses do not match the fleet")
        if self.mode not in ("exact", "presolve"):
            raise ScheduleDataError(f"unknown mode {self.mode!r}")
        if self.case == 3:
            if self.net is None:
                raise ScheduleDataError("surrogate required for case 3")
            if self.bounds is None and self.mode == "exact":
                self.bounds = activation_bounds(self.net, *input_box(self.net, len(self.units),
                                                                     len(self.wtg_rated_mw),
                                                                     self.pcc_box))

    @property
    def n_periods(self) -> int:
        return len(self.load_mw)

    @property
    def n_wtg(self) -> int:
        return len(self.wtg_rated_mw)


def case_problem(forecast: Forecast, network: NetworkModel, units: Sequence[DsgUnit], *,
                 rated_kw: float = 400.0, n_wtg: int = 3, wind_curve: dict | None = None,
                 **kw) -> ScheduleProblem:
    """Problem from a forecast table; every turbine sees the same wind speed."""
    p = wind_power(forecast.wind_raw, rated_kw, **(wind_curve or {}))
    wind = np.repeat(np.asarray(p)[:, None], n_wtg, axis=1)
    return ScheduleProblem(forecast.load, forecast.price, wind, np.full(n_wtg, rated_kw / 1000.0),
                           network, list(units), **kw)


# --- model ---------------------------------------------------------------


@dataclass
class _Handles:
    u_d: list[list]
    w_d: list[list]
    p_d: list[list]
    r_d: list[list]
    q_d: list[list]
    u_w: list[list]
    e_w: list[list]
    u_ie: list[list]
    p_pcc: list
    q_pcc: list
    p_line: list[list]
    q_line: list[list]
    v: list[dict]
    nadir: list
    cost_terms: dict = field(default_factory=dict)


def _check_capacity(pb: ScheduleProblem) -> None:
    cap = sum(u.p_max for u in pb.units)
    root_lines = [ln for ln in pb.network.lines if ln.from_bus == pb.network.pcc_bus]
    import_cap = sum(ln.p_max_mw for ln in root_lines)
    if pb.case == 3:
        import_cap = min(import_cap, pb.pcc_box[1])
    for t in range(pb.n_periods):
        need = pb.load_mw[t] - pb.wind_mw[t].sum()
        if need > cap + import_cap + 1e-9:
            raise ScheduleDataError(
                f"period {t + 1}: net load {need:.3f} MW exceeds DSG capacity {cap:.3f} MW "
                f"plus import capacity {import_cap:.3f} MW")


def build_model(pb: ScheduleProblem) -> tuple[MilpModel, _Handles]:
    _check_capacity(pb)
    nw = pb.network
    T, I, J = pb.n_periods, len(pb.units), pb.n_wtg
    m = MilpModel(f"schedule_case{pb.case}")
    h = _Handles([], [], [], [], [], [], [], [], [], [], [], [], [], [])
    fuel, fixed, start, buy = LinExpr(), LinExpr(), LinExpr(), LinExpr()
    tiebreak = LinExpr()
    pcc_lo, pcc_hi = (pb.pcc_box if pb.case == 3 else (-math.inf, math.inf))

    for t in range(T):
        k = t + 1
        ud, wd, pd, rd, qd = [], [], [], [], []
        for i, u in enumerate(pb.units):
            span = u.p_max - u.p_min
            ud.append(m.add_var(f"u_d{i + 1}_{k}", binary=True))
            wd.append(m.add_var(f"w_d{i + 1}_{k}", 0.0, 1.0))
            pd.append(m.add_var(f"p_d{i + 1}_{k}", 0.0, span))
            rd.append(m.add_var(f"r_d{i + 1}_{k}", 0.0, span))
            qmax = pb.q_limit_frac * u.p_max
            qd.append(m.add_var(f"q_d{i + 1}_{k}", -qmax, qmax))
            m.add_constr(pd[i] + rd[i] - span * ud[i] == 0, f"dispatch_{i + 1}_{k}")
            m.add_constr(pd[i] - span * ud[i] <= 0, f"pmax_{i + 1}_{k}")
            m.add_constr(rd[i] - span * ud[i] <= 0, f"rmax_{i + 1}_{k}")
            m.add_constr(qd[i] - qmax * ud[i] <= 0, f"qmax_{i + 1}_{k}")
            m.add_constr(qd[i] + qmax * ud[i] >= 0, f"qmin_{i + 1}_{k}")
            prev = pb.u0[i] if t == 0 else h.u_d[t - 1][i]
            m.add_constr(wd[i] - ud[i] + prev >= 0, f"startup_{i + 1}_{k}")
            fuel.add(pd[i], u.cost_marginal)
            fixed.add(ud[i], u.cost_fixed)
            charged = (t > 0 or pb.charge_initial_startup) and not (pb.startup_literal and t == T - 1)
            if charged:
                start.add(wd[i], u.cost_startup)
        m.add_constr(quicksum(ud) >= 1, f"one_dsg_{k}")
        h.u_d.append(ud)
        h.w_d.append(wd)
        h.p_d.append(pd)
        h.r_d.append(rd)
        h.q_d.append(qd)

        uw = [m.add_var(f"u_w{j + 1}_{k}", binary=True) for j in range(J)]
        h.u_w.append(uw)
        p_pcc = m.add_var(f"p_pcc_{k}", pcc_lo, pcc_hi)
        q_pcc = m.add_var(f"q_pcc_{k}", -math.inf, math.inf)
        h.p_pcc.append(p_pcc)
        h.q_pcc.append(q_pcc)
        buy.add(p_pcc, pb.price_scale * pb.price[t])

        # linearized DistFlow
        pl = [m.add_var(f"p_l{ln.index}_{k}", -ln.p_max_mw, ln.p_max_mw) for ln in nw.lines]
        ql = [m.add_var(f"q_l{ln.index}_{k}", -ln.p_max_mw, ln.p_max_mw) for ln in nw.lines]
        v = {b: m.add_var(f"v{b}_{k}", 1.0 - nw.v_eps, 1.0 + nw.v_eps) for b in nw.buses}
        h.p_line.append(pl)
        h.q_line.append(ql)
        h.v.append(v)
        p_load, q_load = nw.bus_load(pb.load_mw[t])
        p_bal = {b: LinExpr(const=-p_load[b]) for b in nw.buses}
        q_bal = {b: LinExpr(const=-q_load[b]) for b in nw.buses}
        for li, ln in enumerate(nw.lines):
            p_bal[ln.to_bus].add(pl[li])
            p_bal[ln.from_bus].add(pl[li], -1.0)
            q_bal[ln.to_bus].add(ql[li])
            q_bal[ln.from_bus].add(ql[li], -1.0)
            s = nw.s_base_mva
            m.add_constr(v[ln.to_bus] - v[ln.from_bus] + (ln.r_pu / s) * pl[li] + (ln.x_pu / s) * ql[li] == 0,
                         f"vdrop_{ln.index}_{k}")
        for i, u in enumerate(pb.units):
            b = nw.dsg_bus[i]
            p_bal[b].add(pd[i])
            p_bal[b].add(ud[i], u.p_min)
            q_bal[b].add(qd[i])
        for j in range(J):
            p_bal[nw.wtg_bus[j]].add(uw[j], float(pb.wind_mw[t, j]))
        p_bal[nw.pcc_bus].add(p_pcc)
        q_bal[nw.pcc_bus].add(q_pcc)
        for b in nw.buses:
            m.add_constr(p_bal[b] == 0, f"pbal_{b}_{k}")
            m.add_constr(q_bal[b] == 0, f"qbal_{b}_{k}")

        if pb.case >= 2:
            m.add_constr(p_pcc - quicksum(rd) <= 0, f"reserve_up_{k}")
            m.add_constr(p_pcc + quicksum(pd) >= 0, f"reserve_dn_{k}")

        ew, uie = [], []
        if pb.case == 3:
            for j in range(J):
                e = m.add_var(f"e_w{j + 1}_{k}", binary=True)
                ui = m.add_var(f"u_ie{j + 1}_{k}", binary=True)
                M = float(pb.big_m[j])
                margin = float(pb.wind_mw[t, j] - pb.alpha * pb.wtg_rated_mw[j])
                m.add_constr(M * e >= margin, f"ie_avail_lo_{j + 1}_{k}")
                # strict inequality softened by 1e-6 M
                m.add_constr(M * e <= margin + M - 1e-6 * M, f"ie_avail_hi_{j + 1}_{k}")
                m.add_constr(ui - e <= 0, f"ie_ready_{j + 1}_{k}")
                m.add_constr(ui - uw[j] <= 0, f"ie_on_{j + 1}_{k}")
                if not pb.ie_enabled:
                    ui.ub = 0.0
                ew.append(e)
                uie.append(ui)
                tiebreak.add(ui, -pb.ie_tiebreak)
            n_ie = quicksum(uie)
            if pb.mode == "exact":
                enc = encode_relu(pb.net, pb.bounds, [*ud, n_ie, p_pcc], m, prefix=f"nn{k}",
                                  linearize_stable=pb.linearize_stable)
                m.add_constr(enc.output - pb.nadir_limit_hz <= 0, f"nadir_{k}")
                h.nadir.append(enc.output)
            else:
                _threshold_rows(m, pb, k, ud, n_ie, p_pcc)
                h.nadir.append(None)
        h.e_w.append(ew)
        h.u_ie.append(uie)

    h.cost_terms = {"fuel": fuel, "fixed": fixed, "startup": start, "purchase": buy}
    m.minimize(fuel + fixed + start + buy + tiebreak)
    return m, h


def _threshold_rows(m: MilpModel, pb: ScheduleProblem, k: int, ud, n_ie, p_pcc) -> None:
    thr = pb.thresholds
    if thr is None:
        thr = presolve_thresholds(pb.net, enumerate_scenarios(len(pb.units), pb.n_wtg),
                                  limit=pb.nadir_limit_hz, pcc_range=pb.pcc_box)
        pb.thresholds = thr
    ys = []
    link_u = [LinExpr() for _ in ud]
    link_n = LinExpr()
    cap = LinExpr()
    for c, ((pattern, n), value) in enumerate(sorted(thr.items())):
        y = m.add_var(f"y{c}_{k}", binary=True)
        if value is None or (not pb.ie_enabled and n > 0):
            y.ub = 0.0
            value = pb.pcc_box[0]
        ys.append(y)
        for i, bit in enumerate(pattern):
            link_u[i].add(y, float(bit))
        link_n.add(y, float(n))
        cap.add(y, float(value))
    m.add_constr(quicksum(ys) == 1, f"combo_{k}")
    for i, u in enumerate(ud):
        m.add_constr(u - link_u[i] == 0, f"combo_u{i + 1}_{k}")
    m.add_constr(n_ie - link_n == 0, f"combo_n_{k}")
    m.add_constr(p_pcc - cap <= 0, f"combo_cap_{k}")


def presolve_thresholds(net: NeuralNet, combos, grid_n: int = 4001, limit: float = 1.0,
                        pcc_range=(-2.0, 2.0)) -> dict:
    """Largest PCC power per (commitment, IE count) with predicted nadir within ``limit``.

    The scan runs up from the low end of the range; the threshold is the last
    point of the initial feasible run.  ``None`` marks a combo that is
    infeasible even at the lowest PCC power.
    """
    grid = np.linspace(pcc_range[0], pcc_range[1], grid_n)
    out = {}
    for pattern, n in combos:
        x = np.column_stack([np.tile(np.asarray(pattern, float), (grid_n, 1)),
                             np.full(grid_n, float(n)), grid])
        ok = forward(net, x) <= limit
        if not ok[0]:
            out[(tuple(pattern), n)] = None
            continue
        bad = np.flatnonzero(~ok)
        last = grid_n - 1 if len(bad) == 0 else bad[0] - 1
        if len(bad) and ok[bad[0]:].any():
            log.warning("nadir scan for combo %s/%d is not monotone; using the feasible prefix",
                        pattern, n)
        out[(tuple(pattern), n)] = float(grid[last])
    return out


# --- results -------------------------------------------------------------


@dataclass
class ScheduleResult:
    case: int
    status: str
    suboptimal: bool
    objective: float
    bound: float
    u_d: np.ndarray  # (T, I)
    w_d: np.ndarray
    p_d: np.ndarray  # total output, MW
    r_d: np.ndarray
    q_d: np.ndarray
    u_w: np.ndarray  # (T, J)
    e_w: np.ndarray
    u_ie: np.ndarray
    p_pcc: np.ndarray  # (T,)
    q_pcc: np.ndarray
    p_line: np.ndarray  # (T, L)
    q_line: np.ndarray
    v: np.ndarray  # (T, B)
    nadir_pred: np.ndarray  # (T,), NaN without a surrogate
    costs: dict
    period_cost: np.ndarray
    nodes: int = 0
    backend: str = ""
    audit: list[str] = field(default_factory=list)

    @property
    def n_ie(self) -> np.ndarray:
        return self.u_ie.sum(axis=1).astype(int) if self.u_ie.size else np.zeros(len(self.p_pcc), int)

    @property
    def total_cost(self) -> float:
        return float(sum(self.costs.values()))

    def to_csv(self, path) -> None:
        T = len(self.p_pcc)
        u_ie = self.u_ie if self.u_ie.size else np.zeros_like(self.u_w)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SCHEDULE_HEADER)
            for t in range(T):
                w.writerow([t + 1, *(int(round(x)) for x in self.u_d[t]),
                            *(f"{x:.6f}" for x in self.p_d[t]), *(f"{x:.6f}" for x in self.r_d[t]),
                            *(int(round(x)) for x in self.u_w[t]), *(int(round(x)) for x in u_ie[t]),
                            f"{self.p_pcc[t]:.6f}",
                            "" if math.isnan(self.nadir_pred[t]) else f"{self.nadir_pred[t]:.6f}",
                            f"{self.period_cost[t]:.6f}"])

    def cost_summary(self) -> dict:
        return {"case": self.case, "status": self.status, "suboptimal": self.suboptimal,
                "total": round(self.total_cost, 9),
                **{k: round(v, 9) for k, v in self.costs.items()},
                "bound": round(self.bound, 9), "backend": self.backend, "nodes": self.nodes,
                "audit_violations": len(self.audit)}

    def save_costs(self, path, **meta) -> None:
        with open(path, "w") as fh:
            json.dump({**self.cost_summary(), **meta}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _cost_breakdown(pb: ScheduleProblem, p_inc, u_d, w_d, p_pcc):
    T = pb.n_periods
    per = np.zeros(T)
    totals = {"fuel": 0.0, "fixed": 0.0, "startup": 0.0, "purchase": 0.0}
    for t in range(T):
        fuel = sum(u.cost_marginal * p_inc[t, i] for i, u in enumerate(pb.units))
        fixed = sum(u.cost_fixed * u_d[t, i] for i, u in enumerate(pb.units))
        charged = (t > 0 or pb.charge_initial_startup) and not (pb.startup_literal and t == pb.n_periods - 1)
        st = sum(u.cost_startup * w_d[t, i] for i, u in enumerate(pb.units)) if charged else 0.0
        buy = pb.price_scale * pb.price[t] * p_pcc[t]
        per[t] = fuel + fixed + st + buy
        for k, v in (("fuel", fuel), ("fixed", fixed), ("startup", st), ("purchase", buy)):
            totals[k] += v
    return totals, per


def solve_schedule(pb: ScheduleProblem, *, backend: str = "highs", gap: float = 1e-4,
                   time_limit: float = 600.0, audit: bool = True, method: str = "auto") -> ScheduleResult:
    """Solve and audit a schedule.

    ``method`` is ``monolithic`` (one MILP over all periods), ``decomposed``
    (see ``_solve_decomposed``) or ``auto``, which decomposes the
    surrogate-constrained case and solves the others in one piece.
    """
    if method == "auto":
        method = "decomposed" if pb.case == 3 else "monolithic"
    if method == "decomposed":
        res = _solve_decomposed(pb, backend=backend, gap=gap, time_limit=time_limit)
    elif method == "monolithic":
        model, h = build_model(pb)
        log.info("case %d model: %d vars (%d binary), %d rows", pb.case, len(model.vars),
                 model.n_binary, len(model.constraints))
        sol = solve_mip(model, gap=gap, time_limit=time_limit, backend=backend)
        if not sol.has_incumbent:
            raise ScheduleSolveError(sol.status, f"case {pb.case} schedule has no solution ({sol.status})")
        res = _extract(pb, h, sol)
    else:
        raise ValueError(f"unknown method {method!r}")
    if audit:
        res.audit = audit_schedule(pb, res)
        for line in res.audit:
            log.warning("audit: %s", line)
    return res


def _period_problem(pb: ScheduleProblem, t: int) -> ScheduleProblem:
    return replace(pb, load_mw=pb.load_mw[t:t + 1], price=pb.price[t:t + 1],
                   wind_mw=pb.wind_mw[t:t + 1], charge_initial_startup=False,
                   startup_literal=False, u0=None)


def _solve_decomposed(pb: ScheduleProblem, *, backend: str, gap: float,
                      time_limit: float) -> ScheduleResult:
    """Exact solve by period decomposition.

    Periods interact only through the startup rows, which depend on the DSG
    commitments alone.  So for every period and every commitment pattern a
    one-period MILP with the commitment fixed is solved, and a shortest path
    over patterns adds the startup costs.  The same recursion run on the
    subproblem dual bounds gives a valid bound for the whole problem.
    """
    T, I = pb.n_periods, len(pb.units)
    patterns = [p for p, n in enumerate_scenarios(I, 0)]
    n_sub = T * len(patterns)
    sub_limit = time_limit / n_sub if math.isfinite(time_limit) else math.inf
    if pb.case == 3 and pb.mode == "presolve" and pb.thresholds is None:
        pb.thresholds = presolve_thresholds(pb.net, enumerate_scenarios(I, pb.n_wtg),
                                            limit=pb.nadir_limit_hz, pcc_range=pb.pcc_box)
    obj = np.full((T, len(patterns)), np.inf)
    low = np.full((T, len(patterns)), np.inf)
    subs: dict[tuple[int, int], ScheduleResult] = {}
    status = "optimal"
    nodes = 0
    for t in range(T):
        sub_pb = _period_problem(pb, t)
        for s, pat in enumerate(patterns):
            try:
                model, h = build_model(sub_pb)
            except ScheduleDataError:
                continue
            for i, bit in enumerate(pat):
                h.u_d[0][i].lb = h.u_d[0][i].ub = float(bit)
            sol = solve_mip(model, gap=gap, time_limit=sub_limit, backend=backend)
            nodes += sol.nodes
            if sol.status == "infeasible":
                continue
            if not sol.has_incumbent:
                status = sol.status
                continue
            if sol.status != "optimal":
                status = sol.status
            obj[t, s] = sol.objective
            low[t, s] = sol.bound if math.isfinite(sol.bound) else sol.objective
            subs[t, s] = _extract(sub_pb, h, sol)

    def startup(prev, cur, t):
        charged = (t > 0 or pb.charge_initial_startup) and not (pb.startup_literal and t == T - 1)
        if not charged:
            return 0.0
        return sum(u.cost_startup for u, a, b in zip(pb.units, prev, cur) if b and not a)

    def shortest(cost):
        best = np.array([cost[0, s] + startup(pb.u0, patterns[s], 0) for s in range(len(patterns))])
        back = np.zeros((T, len(patterns)), dtype=int)
        for t in range(1, T):
            nxt = np.full(len(patterns), np.inf)
            for s in range(len(patterns)):
                if not math.isfinite(cost[t, s]):
                    continue
                cand = [best[q] + startup(patterns[q], patterns[s], t) for q in range(len(patterns))]
                q = int(np.argmin(cand))
                nxt[s] = cand[q] + cost[t, s]
                back[t, s] = q
            best = nxt
        s = int(np.argmin(best))
        total = float(best[s])
        path = [s]
        for t in range(T - 1, 0, -1):
            s = back[t, s]
            path.append(s)
        return total, path[::-1]

    total, path = shortest(obj)
    if not math.isfinite(total):
        raise ScheduleSolveError("infeasible", f"case {pb.case} schedule has no solution (infeasible)")
    bound, _ = shortest(low)
    parts = [subs[t, s] for t, s in enumerate(path)]
    cat = lambda name: np.concatenate([getattr(r, name) for r in parts], axis=0)
    u_d = cat("u_d")
    prev = np.vstack([np.asarray(pb.u0, float)[None, :], u_d[:-1]])
    w_d = np.maximum(u_d - prev, 0.0)
    p_min = np.array([u.p_min for u in pb.units])
    p_inc = cat("p_d") - u_d * p_min
    p_pcc = cat("p_pcc")
    costs, per = _cost_breakdown(pb, p_inc, u_d, w_d, p_pcc)
    if status == "optimal" and (total - bound) > gap * max(1.0, abs(total)):
        status = "gap-limit"
    return ScheduleResult(
        case=pb.case, status=status, suboptimal=status != "optimal", objective=total,
        bound=min(bound, total), u_d=u_d, w_d=w_d, p_d=cat("p_d"), r_d=cat("r_d"), q_d=cat("q_d"),
        u_w=cat("u_w"), e_w=cat("e_w"), u_ie=cat("u_ie"), p_pcc=p_pcc, q_pcc=cat("q_pcc"),
        p_line=cat("p_line"), q_line=cat("q_line"), v=cat("v"), nadir_pred=cat("nadir_pred"),
        costs=costs, period_cost=per, nodes=nodes, backend=backend + "/decomposed",
    )


class ScheduleSolveError(RuntimeError):
    def __init__(self, status: str, msg: str):
        super().__init__(msg)
        self.status = status


def _extract(pb: ScheduleProblem, h: _Handles, sol: MilpSolution) -> ScheduleResult:
    val = lambda rows: np.array([[sol.value(v) for v in r] for r in rows]) if rows and rows[0] else \
        np.zeros((pb.n_periods, 0))
    u_d = np.round(val(h.u_d))
    w_d = val(h.w_d)
    p_inc = val(h.p_d)
    u_w = np.round(val(h.u_w))
    e_w = np.round(val(h.e_w))
    u_ie = np.round(val(h.u_ie))
    p_pcc = np.array([sol.value(v) for v in h.p_pcc])
    p_min = np.array([u.p_min for u in pb.units])
    p_tot = p_inc + u_d * p_min
    nadir = np.full(pb.n_periods, np.nan)
    if pb.net is not None:
        n_ie = u_ie.sum(axis=1) if u_ie.size else np.zeros(pb.n_periods)
        x = np.column_stack([u_d, n_ie, p_pcc])
        nadir = forward(pb.net, x)
    costs, per = _cost_breakdown(pb, p_inc, u_d, w_d, p_pcc)
    buses = pb.network.buses
    return ScheduleResult(
        case=pb.case, status=sol.status, suboptimal=sol.status != "optimal",
        objective=sol.objective, bound=sol.bound, u_d=u_d, w_d=w_d, p_d=p_tot, r_d=val(h.r_d),
        q_d=val(h.q_d), u_w=u_w, e_w=e_w, u_ie=u_ie, p_pcc=p_pcc,
        q_pcc=np.array([sol.value(v) for v in h.q_pcc]), p_line=val(h.p_line), q_line=val(h.q_line),
        v=np.array([[sol.value(h.v[t][b]) for b in buses] for t in range(pb.n_periods)]),
        nadir_pred=nadir, costs=costs, period_cost=per, nodes=sol.nodes, backend=sol.backend,
    )


# --- independent audit ---------------------------------------------------


def audit_schedule(pb: ScheduleProblem, res: ScheduleResult, tol: float = 1e-6) -> list[str]:
    """Re-check a schedule against the physical rules, not the model rows."""
    out = []
    nw = pb.network
    T = pb.n_periods
    bus_pos = {b: n for n, b in enumerate(nw.buses)}

    def bad(cond, msg):
        if cond:
            out.append(msg)

    for t in range(T):
        k = t + 1
        bad(res.u_d[t].sum() < 1, f"period {k}: no DSG committed")
        for i, u in enumerate(pb.units):
            on = res.u_d[t, i]
            lo, hi = u.p_min * on, u.p_max * on
            bad(not lo - tol <= res.p_d[t, i] <= hi + tol,
                f"period {k}: DSG {i + 1} output {res.p_d[t, i]:.6f} outside [{lo}, {hi}]")
            bad(abs(res.p_d[t, i] + res.r_d[t, i] - hi) > tol,
                f"period {k}: DSG {i + 1} output plus reserve differs from its upper limit")
            bad(res.r_d[t, i] < -tol, f"period {k}: DSG {i + 1} negative reserve")
            q = pb.q_limit_frac * u.p_max * on
            bad(abs(res.q_d[t, i]) > q + tol, f"period {k}: DSG {i + 1} reactive limit")
        p_load, q_load = nw.bus_load(pb.load_mw[t])
        inj_p = {b: -p_load[b] for b in nw.buses}
        inj_q = {b: -q_load[b] for b in nw.buses}
        for i in range(len(pb.units)):
            inj_p[nw.dsg_bus[i]] += res.p_d[t, i]
            inj_q[nw.dsg_bus[i]] += res.q_d[t, i]
        for j in range(pb.n_wtg):
            inj_p[nw.wtg_bus[j]] += res.u_w[t, j] * pb.wind_mw[t, j]
        inj_p[nw.pcc_bus] += res.p_pcc[t]
        inj_q[nw.pcc_bus] += res.q_pcc[t]
        for li, ln in enumerate(nw.lines):
            inj_p[ln.to_bus] += res.p_line[t, li]
            inj_p[ln.from_bus] -= res.p_line[t, li]
            inj_q[ln.to_bus] += res.q_line[t, li]
            inj_q[ln.from_bus] -= res.q_line[t, li]
            bad(abs(res.p_line[t, li]) > ln.p_max_mw + tol, f"period {k}: line {ln.index} overload")
            bad(abs(res.q_line[t, li]) > ln.p_max_mw + tol, f"period {k}: line {ln.index} reactive overload")
            drop = (ln.r_pu * res.p_line[t, li] + ln.x_pu * res.q_line[t, li]) / nw.s_base_mva
            dv = res.v[t, bus_pos[ln.to_bus]] - res.v[t, bus_pos[ln.from_bus]]
            bad(abs(dv + drop) > tol, f"period {k}: voltage drop on line {ln.index}")
        for b in nw.buses:
            bad(abs(inj_p[b]) > tol, f"period {k}: active power imbalance {inj_p[b]:.3g} at bus {b}")
            bad(abs(inj_q[b]) > tol, f"period {k}: reactive power imbalance {inj_q[b]:.3g} at bus {b}")
        bad(np.any(np.abs(res.v[t] - 1.0) > nw.v_eps + tol), f"period {k}: voltage out of band")
        if pb.case >= 2:
            bad(res.p_pcc[t] > res.r_d[t].sum() + tol, f"period {k}: reserve below PCC import")
            p_inc = res.p_d[t] - res.u_d[t] * np.array([u.p_min for u in pb.units])
            bad(res.p_pcc[t] < -p_inc.sum() - tol, f"period {k}: export exceeds DSG headroom")
        if pb.case == 3:
            for j in range(pb.n_wtg):
                ready = pb.wind_mw[t, j] >= pb.alpha * pb.wtg_rated_mw[j] - 1e-6 * pb.big_m[j]
                if res.u_ie[t, j]:
                    bad(not res.u_w[t, j], f"period {k}: IE on turbine {j + 1} which is off")
                    bad(not ready, f"period {k}: IE on turbine {j + 1} below the loading threshold")
            lo, hi = pb.pcc_box
            bad(not lo - tol <= res.p_pcc[t] <= hi + tol, f"period {k}: PCC power outside the surrogate box")
            bad(res.nadir_pred[t] > pb.nadir_limit_hz + tol,
                f"period {k}: predicted nadir {res.nadir_pred[t]:.6f} above limit")
    return out


# --- sweeps --------------------------------------------------------------


@dataclass
class SweepPoint:
    limit_hz: float
    ie_enabled: bool
    cost: float
    status: str


def nadir_sweep(pb: ScheduleProblem, limits: Sequence[float], ie_enabled: bool = True,
                **solve_kw) -> list[SweepPoint]:
    """Case 3 total cost as a function of the nadir limit."""
    out = []
    for lim in limits:
        sub = replace(pb, case=3, nadir_limit_hz=float(lim), ie_enabled=ie_enabled,
                      thresholds=None if pb.mode == "presolve" else pb.thresholds)
        try:
            res = solve_schedule(sub, audit=False, **solve_kw)
            out.append(SweepPoint(float(lim), ie_enabled, res.total_cost, res.status))
        except (ScheduleSolveError, ScheduleDataError) as exc:
            status = getattr(exc, "status", "infeasible")
            out.append(SweepPoint(float(lim), ie_enabled, math.nan, status))
    return out


def write_sweep(path, on: Sequence[SweepPoint], off: Sequence[SweepPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for a, b in zip(on, off):
            w.writerow([f"{a.limit_hz:.6f}", f"{a.cost:.6f}", f"{b.cost:.6f}"])
