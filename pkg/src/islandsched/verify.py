"""Closed-loop checks of schedules by islanding re-simulation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pspb import Trajectory, WtgParams, integrate_dsg, simulate_batch
from .scheduler import SCHEDULE_HEADER, ScheduleProblem, ScheduleResult
from .surrogate import NeuralNet, forward
from .ufls import UflsPlan, UflsStage, stage_order_ok

__all__ = ["UflsPlan", "UflsStage", "VerifyRow", "VerifyReport", "verify_schedule", "ScheduleCommands",
           "read_schedule",
           "simulate_period", "power_replay", "rms_gap", "REPLAY_MODES", "format_periods", "write_svg"]

REPLAY_MODES = ("pcc_only", "pcc_minus_wtg", "dsg_electric")
REPORT_HEADER = ["periods", "predicted_hz", "simulated_hz", "error_pct"]


def format_periods(periods: Sequence[int]) -> str:
    """``[4, 5, 6, 8]`` -> ``"4-6,8"``."""
    ps = sorted(periods)
    out, i = [], 0
    while i < len(ps):
        j = i
        while j + 1 < len(ps) and ps[j + 1] == ps[j] + 1:
            j += 1
        out.append(str(ps[i]) if i == j else f"{ps[i]}-{ps[j]}")
        i = j + 1
    return ",".join(out)


@dataclass
class ScheduleCommands:
    """The parts of a schedule that islanding re-simulation needs."""
    case: int
    u_d: np.ndarray  # (T, I)
    u_w: np.ndarray  # (T, J)
    u_ie: np.ndarray  # (T, J)
    p_pcc: np.ndarray  # (T,)
    nadir_pred: np.ndarray  # (T,)

    @classmethod
    def of(cls, res: ScheduleResult) -> "ScheduleCommands":
        u_ie = res.u_ie if res.u_ie.size else np.zeros_like(res.u_w)
        return cls(res.case, np.rint(res.u_d).astype(int), np.rint(res.u_w).astype(int),
                   np.rint(u_ie).astype(int), np.asarray(res.p_pcc, float),
                   np.asarray(res.nadir_pred, float))


def read_schedule(path, case: int) -> ScheduleCommands:
    """Commands back from a schedule CSV."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    if header != SCHEDULE_HEADER:
        raise ValueError(f"{path} is not a schedule table")
    col = {h: i for i, h in enumerate(header)}

    def grab(names, kind=float):
        return np.array([[kind(row[col[n]]) for n in names] for row in rows])

    nadir = np.array([float(row[col["nadir_pred_hz"]]) if row[col["nadir_pred_hz"]] else math.nan
                      for row in rows])
    return ScheduleCommands(case, grab(["u_d1", "u_d2"], int), grab(["u_w1", "u_w2", "u_w3"], int),
                            grab(["u_ie1", "u_ie2", "u_ie3"], int), grab(["p_pcc_mw"])[:, 0], nadir)


@dataclass
class VerifyRow:
    periods: list[int]
    u_d: tuple[int, ...]
    n_ie: int
    p_pcc_mw: float
    predicted_hz: float
    simulated_hz: float
    stages: list[int] = field(default_factory=list)
    stage_times: list[float | None] = field(default_factory=list)
    failed: bool = False

    @property
    def error_pct(self) -> float:
        if self.failed or math.isnan(self.predicted_hz) or self.simulated_hz == 0:
            return math.nan
        return 100.0 * abs(self.predicted_hz - self.simulated_hz) / abs(self.simulated_hz)


@dataclass
class VerifyReport:
    case: int
    rows: list[VerifyRow]
    ufls: bool = False

    @property
    def mean_error_pct(self) -> float:
        errs = [r.error_pct for r in self.rows if not math.isnan(r.error_pct)]
        return float(np.mean(errs)) if errs else math.nan

    @property
    def period_rows(self) -> dict[int, VerifyRow]:
        return {p: r for r in self.rows for p in r.periods}

    @property
    def failed_periods(self) -> list[int]:
        return sorted(p for r in self.rows if r.failed for p in r.periods)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                pred = "" if math.isnan(r.predicted_hz) else f"{r.predicted_hz:.6f}"
                sim = "" if r.failed else f"{r.simulated_hz:.6f}"
                err = "" if math.isnan(r.error_pct) else f"{r.error_pct:.4f}"
                w.writerow([format_periods(r.periods), pred, sim, err])

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None or (isinstance(x, float) and math.isnan(x)) else round(x, 9)
        return {
            "case": self.case,
            "ufls": self.ufls,
            "mean_error_pct": num(self.mean_error_pct),
            "reference": "reduced power-balance simulation",
            "rows": [{
                "periods": format_periods(r.periods), "u_d": list(r.u_d), "n_ie": r.n_ie,
                "p_pcc_mw": num(r.p_pcc_mw), "predicted_hz": num(r.predicted_hz),
                "simulated_hz": num(r.simulated_hz), "error_pct": num(r.error_pct),
                "stages_triggered": [s + 1 for s in r.stages],
                "stage_times_s": [num(t) for t in r.stage_times],
                "failed": r.failed,
            } for r in self.rows],
        }

    def save_json(self, path, **meta) -> None:
        with open(path, "w") as fh:
            json.dump({**self.to_dict(), **meta}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _period_inputs(pb: ScheduleProblem, res: ScheduleCommands, t: int):
    u_d = tuple(int(x) for x in res.u_d[t])
    u_ie = res.u_ie[t]
    wind = res.u_w[t] * pb.wind_mw[t]
    # the simulator enables IE on its first online turbines, so list those first
    order = np.argsort(-np.asarray(u_ie), kind="stable")
    return u_d, int(round(u_ie.sum())), float(res.p_pcc[t]), float(pb.load_mw[t]), wind[order]


def verify_schedule(result: ScheduleResult | ScheduleCommands, net: NeuralNet | None = None,
                    ufls: UflsPlan | None = None, *, problem: ScheduleProblem,
                    periods: Sequence[int] | None = None, wtg: WtgParams = WtgParams(),
                    dt: float = 1e-3, horizon_s: float = 10.0) -> VerifyReport:
    """Simulate islanding in each period and compare with the predicted nadir.

    The prediction is the schedule's own where it has one, otherwise the
    network's output at the scheduled operating point (NaN without a net).
    Periods sharing commitment, IE count, PCC power and turbine wind are
    simulated once; with a UFLS plan the period load also matters, so it
    joins the signature.
    """
    if isinstance(result, ScheduleResult):
        result = ScheduleCommands.of(result)
    T = len(result.p_pcc)
    wanted = range(1, T + 1) if periods is None else periods
    groups: dict[tuple, list[int]] = {}
    inputs = {}
    for k in wanted:
        if not 1 <= k <= T:
            raise ValueError(f"period {k} outside 1..{T}")
        u_d, n_ie, p, load, wind = _period_inputs(problem, result, k - 1)
        sig = (u_d, n_ie, round(p, 6), tuple(np.round(wind, 6)))
        if ufls is not None:
            sig += (round(load, 6),)
        groups.setdefault(sig, []).append(k)
        inputs[sig] = (u_d, n_ie, p, load, wind)
    sigs = list(groups)
    if not sigs:
        return VerifyReport(result.case, [], ufls is not None)
    batch = simulate_batch(problem.units, [inputs[s][0] for s in sigs], [inputs[s][1] for s in sigs],
                           [inputs[s][2] for s in sigs], np.array([inputs[s][4] for s in sigs]),
                           [inputs[s][3] for s in sigs], wtg=wtg, dt=dt, horizon_s=horizon_s,
                           ufls=ufls, record=ufls is not None)
    rows = []
    for b, s in enumerate(sigs):
        ks = groups[s]
        u_d, n_ie, p, _, _ = inputs[s]
        pred = float(result.nadir_pred[ks[0] - 1])
        if math.isnan(pred) and net is not None:
            pred = float(forward(net, [*u_d, n_ie, p]))
        stage_times = batch.trajectories[b].stage_times if ufls is not None else []
        rows.append(VerifyRow(
            periods=ks, u_d=u_d, n_ie=n_ie, p_pcc_mw=p, predicted_hz=pred,
            simulated_hz=float(batch.nadir[b]),
            stages=[i for i, x in enumerate(stage_times) if x is not None],
            stage_times=list(stage_times), failed=bool(batch.failed[b]),
        ))
        if ufls is not None and not stage_order_ok(stage_times):
            raise AssertionError(f"UFLS stages fired out of order in periods {ks}")
    rows.sort(key=lambda r: r.periods[0])
    return VerifyReport(result.case, rows, ufls is not None)


def simulate_period(result: ScheduleResult | ScheduleCommands, problem: ScheduleProblem,
                    period: int, ufls: UflsPlan | None = None, *, wtg: WtgParams = WtgParams(),
                    dt: float = 1e-3, horizon_s: float = 10.0, t_island: float = 0.0) -> Trajectory:
    """Recorded islanding trajectory for one scheduled period."""
    if isinstance(result, ScheduleResult):
        result = ScheduleCommands.of(result)
    u_d, n_ie, p, load, wind = _period_inputs(problem, result, period - 1)
    res = simulate_batch(problem.units, [u_d], [n_ie], [p], wind[None, :], [load], wtg=wtg, dt=dt,
                         horizon_s=horizon_s, t_island=t_island, ufls=ufls, record=True)
    return res.trajectories[0]


def power_replay(reference: Trajectory, mode: str) -> Trajectory:
    """Drive the standalone diesel model with power recorded in ``reference``.

    ``pcc_only`` imposes the lost PCC import, ``pcc_minus_wtg`` subtracts
    the turbines' change in output from it, ``dsg_electric`` imposes the
    diesel electric power variation itself.
    """
    if mode not in REPLAY_MODES:
        raise ValueError(f"mode must be one of {REPLAY_MODES}")
    if reference.d_pe is None or reference.dsg is None:
        raise ValueError("reference trajectory lacks recorded power series")
    n0 = int(round(reference.t_island / reference.dt))
    p0 = reference.p_pcc[n0]
    lost = np.where(np.arange(len(reference.t)) >= n0, p0, 0.0)
    if mode == "dsg_electric":
        d_pe = reference.d_pe
    elif mode == "pcc_only":
        d_pe = lost / reference.s_sg
    else:
        d_wtg = reference.p_wtg - reference.p_wtg[n0]
        d_pe = (lost - d_wtg) / reference.s_sg
    freq = integrate_dsg(reference.dsg, d_pe, reference.dt, start=n0)
    return Trajectory(
        dt=reference.dt, t=reference.t.copy(), freq=freq,
        p_dsg=reference.p_dsg[n0] + d_pe * reference.s_sg, p_wtg=reference.p_wtg.copy(),
        p_pcc=reference.p_pcc.copy(), t_island=reference.t_island, d_pe=np.asarray(d_pe, float),
        s_sg=reference.s_sg, dsg=reference.dsg,
    )


def rms_gap(a: Trajectory, b: Trajectory) -> float:
    return float(np.sqrt(np.mean((a.freq - b.freq) ** 2)))


def write_svg(path, series: dict[str, tuple[np.ndarray, np.ndarray]], *, title: str = "",
              x_label: str = "t [s]", y_label: str = "f [Hz]", width: int = 640,
              height: int = 400) -> None:
    """Static line plot with one polyline per named series."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 50
    sx = lambda x: pad + (x - x0) / (x1 - x0) * (width - 2 * pad)
    sy = lambda y: height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{x_label}</text>',
             f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})">{y_label}</text>',
             f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{x0:.3g}</text>',
             f'<text x="{width - pad}" y="{height - pad + 15}" font-size="10" text-anchor="end">{x1:.3g}</text>',
             f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.4g}</text>',
             f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.4g}</text>']
    for n, (name, (x, y)) in enumerate(series.items()):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        step = max(1, len(x) // 1000)
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x[::step], y[::step]))
        c = colors[n % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 14 * (n + 1)}" font-size="11" '
                     f'text-anchor="end" fill="{c}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
