"""Positive-sequence power-balance (PSPB) islanding simulator.

The diesel fleet is aggregated into one governor/engine/swing model on the
committed MVA base; every DFIG wind turbine carries its own zero-axis
machine, rotor-side converter control and optional inertia emulation (IE).
The two are coupled only through active power.  Integration is fixed-step
RK4 and vectorised over a batch of scenarios, which is what makes dataset
generation affordable.

Complex space vectors use the ``x = x_q - j x_d`` convention so that the
stator/rotor voltage equations collapse to ``v = R i + j w psi``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ufls import UflsPlan

F_NOM = 60.0
UNSTABLE_HZ = 55.0


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DsgUnit:
    base_mva: float
    inertia_h: float
    p_min: float
    p_max: float
    tau_d: float = 0.1
    tau_sm: float = 0.5
    droop_r: float = 0.05
    cost_marginal: float = 0.0
    cost_fixed: float = 0.0
    cost_startup: float = 0.0
    bus: int = 1

    def __post_init__(self):
        if self.base_mva <= 0 or self.inertia_h <= 0:
            raise ValueError("DSG base and inertia must be positive")
        if not 0 < self.p_min < self.p_max <= self.base_mva:
            raise ValueError("DSG limits must satisfy 0 < p_min < p_max <= base")
        if self.droop_r <= 0 or self.tau_d <= 0 or self.tau_sm <= 0:
            raise ValueError("DSG droop and time constants must be positive")


@dataclass(frozen=True)
class DsgAggregate:
    h_coi: float
    s_sg: float
    tau_d: float
    tau_sm: float
    droop_r: float
    f_base: float = F_NOM


def aggregate_dsgs(units: Sequence[DsgUnit], committed: Sequence[int]) -> DsgAggregate:
    """Center-of-inertia aggregate of the committed diesel units.

    Time constants and droop are averaged with the unit bases as weights.
    """
    if len(units) != len(committed):
        raise ValueError("commitment vector length does not match units")
    on = [u for u, c in zip(units, committed) if c]
    if not on:
        raise ValueError("islanded grid has no grid-forming source")
    s_sg = sum(u.base_mva for u in on)

    def avg(attr):
        return sum(u.base_mva * getattr(u, attr) for u in on) / s_sg

    return DsgAggregate(
        h_coi=avg("inertia_h"), s_sg=s_sg, tau_d=avg("tau_d"),
        tau_sm=avg("tau_sm"), droop_r=avg("droop_r"),
    )


@dataclass(frozen=True)
class WtgParams:
    rated_kw: float = 400.0
    h_t: float = 3.0
    r_s: float = 0.00706
    l_ls: float = 0.171
    r_r: float = 0.005
    l_lr: float = 0.156
    l_m: float = 2.9
    omega_base: float = 2 * math.pi * F_NOM
    ie_gain: float = 0.1
    deadband: tuple[float, float] = (59.85, 65.0)
    washout_tc: float = 0.01
    speed_kp: float = 1.0
    speed_ki: float = 0.2
    current_kp: float = 0.3
    current_ki: float = 8.0
    v_s: float = 1.0

    def __post_init__(self):
        lo, hi = self.deadband
        if not lo < F_NOM < hi:
            raise ValueError("dead-band must bracket the nominal frequency")
        for name in ("h_t", "r_s", "l_ls", "r_r", "l_lr", "l_m", "washout_tc"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def l_s(self) -> float:
        return self.l_ls + self.l_m

    @property
    def l_r(self) -> float:
        return self.l_lr + self.l_m

    @property
    def rated_mw(self) -> float:
        return self.rated_kw / 1000.0


def mppt_speed(p_g, rated: float = 1.0):
    """Optimal rotor speed (pu) for an electrical output ``p_g`` (pu)."""
    p = np.asarray(p_g, dtype=float)
    if np.any(p < 0):
        raise ValueError("MPPT power must be nonnegative")
    w = np.where(p < rated, -0.67 * p**2 + 1.42 * p + 0.51, 1.2)
    return float(w) if w.ndim == 0 else w


def deadband_input(freq, deadband: tuple[float, float]):
    """Frequency excursion seen by the IE loop; zero inside the band and on over-frequency."""
    return np.minimum(np.asarray(freq, dtype=float) - deadband[0], 0.0)


def ie_signal(freq: float, washout_state: float, dt: float,
              params: WtgParams = WtgParams()) -> tuple[float, float]:
    """Advance the IE washout one step.

    Returns ``(command_pu, new_state)``.  ``command_pu`` is the extra active
    power the turbine is asked to deliver (positive on a frequency decline).
    The first-order lag inside ``K s / (T s + 1)`` is advanced exactly for a
    held input.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = float(deadband_input(freq, params.deadband))
    tc = params.washout_tc
    x = u + (washout_state - u) * math.exp(-dt / tc)
    y = params.ie_gain * (u - x) / tc
    return -y, x


# --- DFIG algebra --------------------------------------------------------


@dataclass
class WtgAlgebraic:
    psi_ds: np.ndarray
    psi_qs: np.ndarray
    psi_dr: np.ndarray
    psi_qr: np.ndarray
    i_ds: np.ndarray
    i_qs: np.ndarray
    i_dr: np.ndarray
    i_qr: np.ndarray
    v_ds: np.ndarray
    v_qs: np.ndarray
    v_dr: np.ndarray
    v_qr: np.ndarray
    p_g: np.ndarray
    q_g: np.ndarray

    @classmethod
    def from_phasors(cls, v_s, v_r, i_s, i_r, params: WtgParams) -> "WtgAlgebraic":
        psi_s = params.l_s * i_s + params.l_m * i_r
        psi_r = params.l_r * i_r + params.l_m * i_s
        p_g = -(np.real(v_s * np.conj(i_s)) + np.real(v_r * np.conj(i_r)))
        # x_q i_d - x_d i_q for q - j d phasors is Im(conj(v) i) with a sign flip
        q_g = -((v_s.real * -i_s.imag - -v_s.imag * i_s.real)
                + (v_r.real * -i_r.imag - -v_r.imag * i_r.real))
        return cls(
            psi_ds=-psi_s.imag, psi_qs=psi_s.real, psi_dr=-psi_r.imag, psi_qr=psi_r.real,
            i_ds=-i_s.imag, i_qs=i_s.real, i_dr=-i_r.imag, i_qr=i_r.real,
            v_ds=-np.imag(v_s) * np.ones_like(i_s.real), v_qs=np.real(v_s) * np.ones_like(i_s.real),
            v_dr=-v_r.imag, v_qr=v_r.real, p_g=p_g, q_g=q_g,
        )

    def electrical_torque(self, params: WtgParams):
        """Torque opposing the turbine (generator convention)."""
        return -(params.l_m / params.l_s) * (self.psi_qs * self.i_dr - self.psi_ds * self.i_qr)


def solve_dfig_algebraic(params: WtgParams, omega_s, omega_r, v_r,
                         v_s: complex | None = None) -> WtgAlgebraic:
    """Direct solve of the zero-axis machine for given speeds and rotor voltage."""
    v_s = params.v_s + 0j if v_s is None else v_s
    ws = np.asarray(omega_s, dtype=float)
    slip = ws - np.asarray(omega_r, dtype=float)
    v_r = np.asarray(v_r, dtype=complex)
    a11 = params.r_s + 1j * ws * params.l_s
    a12 = 1j * ws * params.l_m
    a21 = 1j * slip * params.l_m
    a22 = params.r_r + 1j * slip * params.l_r
    det = a11 * a22 - a12 * a21
    if np.any(np.abs(det) < 1e-12):
        raise SimulationError("DFIG algebraic system is singular")
    i_s = (v_s * a22 - a12 * v_r) / det
    i_r = (a11 * v_r - a21 * v_s) / det
    return WtgAlgebraic.from_phasors(v_s + 0 * i_s, v_r, i_s, i_r, params)


def dfig_residuals(alg: WtgAlgebraic, params: WtgParams, omega_s, omega_r) -> np.ndarray:
    """Stacked residuals of the ten algebraic machine relations (per unit)."""
    ws = np.asarray(omega_s, dtype=float)
    slip = ws - np.asarray(omega_r, dtype=float)
    a = alg
    return np.stack(np.broadcast_arrays(
        a.v_qs - params.r_s * a.i_qs - ws * a.psi_ds,
        a.v_ds - params.r_s * a.i_ds + ws * a.psi_qs,
        a.v_qr - params.r_r * a.i_qr - slip * a.psi_dr,
        a.v_dr - params.r_r * a.i_dr + slip * a.psi_qr,
        -a.psi_qs + params.l_s * a.i_qs + params.l_m * a.i_qr,
        -a.psi_ds + params.l_s * a.i_ds + params.l_m * a.i_dr,
        -a.psi_qr + params.l_r * a.i_qr + params.l_m * a.i_qs,
        -a.psi_dr + params.l_r * a.i_dr + params.l_m * a.i_ds,
        a.p_g + (a.v_qs * a.i_qs + a.v_ds * a.i_ds) + (a.v_qr * a.i_qr + a.v_dr * a.i_dr),
        a.q_g + (a.v_qs * a.i_ds - a.v_ds * a.i_qs) + (a.v_qr * a.i_dr - a.v_dr * a.i_qr),
    ))


# --- trajectories --------------------------------------------------------


@dataclass
class Trajectory:
    dt: float
    t: np.ndarray
    freq: np.ndarray
    p_dsg: np.ndarray
    p_wtg: np.ndarray
    p_pcc: np.ndarray
    t_island: float = 0.0
    p_wtg_each: np.ndarray | None = None  # (steps, n_wtg) MW
    p_shed: np.ndarray | None = None
    d_pe: np.ndarray | None = None  # pu on the committed base
    s_sg: float = 1.0
    dsg: DsgAggregate | None = None
    unstable: bool = False
    stage_times: list[float | None] = field(default_factory=list)
    max_residual: float = 0.0

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.freq) == len(self.p_dsg) == len(self.p_wtg) == len(self.p_pcc) == n):
            raise ValueError("trajectory series lengths differ")

    @property
    def stages_triggered(self) -> list[int]:
        return [k for k, tk in enumerate(self.stage_times) if tk is not None]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "freq_hz", "p_dsg_mw", "p_wtg_mw", "p_pcc_mw"])
            for row in zip(self.t, self.freq, self.p_dsg, self.p_wtg, self.p_pcc):
                w.writerow([f"{v:.6f}" for v in row])


def extract_nadir(traj: Trajectory, f_nom: float = F_NOM) -> float:
    """Largest frequency drop below nominal after islanding (Hz, >= 0)."""
    post = traj.freq[traj.t >= traj.t_island - 1e-12]
    return max(0.0, f_nom - float(np.min(post)))


# --- batched integrator --------------------------------------------------


@dataclass
class BatchResult:
    nadir: np.ndarray
    unstable: np.ndarray
    failed: np.ndarray
    trajectories: list[Trajectory] | None = None


class _Batch:
    """State-space bookkeeping for ``B`` scenarios with ``W`` turbine slots."""

    def __init__(self, agg: list[DsgAggregate], params: WtgParams,
                 p_pcc0, wind_mw, ie_mask, load_mw, shed_mw, thresholds, delays):
        self.params = params
        self.f = F_NOM
        self.h = np.array([a.h_coi for a in agg])
        self.s_sg = np.array([a.s_sg for a in agg])
        self.tau_d = np.array([a.tau_d for a in agg])
        self.tau_sm = np.array([a.tau_sm for a in agg])
        self.inv_fr = np.array([0.0 if math.isinf(a.droop_r) else 1.0 / (self.f * a.droop_r)
                                for a in agg])
        self.p_pcc0 = np.asarray(p_pcc0, dtype=float)
        self.load = np.asarray(load_mw, dtype=float)
        self.on = wind_mw > 0
        self.ie = ie_mask & self.on
        self.shed_mw = shed_mw  # (B, K)
        self.thr = thresholds
        self.delay = delays
        self._init_wtg(np.where(self.on, wind_mw, 0.5 * params.rated_mw))

    def _init_wtg(self, p_mw):
        p = self.params
        p_pu = p_mw / p.rated_mw
        self.wref = mppt_speed(p_pu)
        if np.any(self.wref > 1.3):
            raise SimulationError("turbine speed reference outside (0, 1.3] pu")
        t_ref = p_pu / self.wref
        psi = p.v_s / 1.0
        a11 = p.r_s + 1j * p.l_s
        slip = 1.0 - self.wref
        # raise the torque until the electrical output, net of copper
        # losses, equals the requested power
        for _ in range(50):
            i_r = t_ref * p.l_s / (p.l_m * psi) - 1j * (psi / p.l_m)
            i_s = (p.v_s - 1j * p.l_m * i_r) / a11
            v_r = (p.r_r + 1j * slip * p.l_r) * i_r + 1j * slip * p.l_m * i_s
            alg = WtgAlgebraic.from_phasors(p.v_s + 0 * i_s, v_r, i_s, i_r, p)
            miss = p_pu - alg.p_g
            if np.max(np.abs(miss)) < 1e-13:
                break
            t_ref = t_ref + miss / self.wref
        self.tm = alg.electrical_torque(p)
        self.p_set = t_ref * self.wref
        self.pg0 = alg.p_g
        self.state0 = dict(
            dw=np.zeros_like(self.h), pm=np.zeros_like(self.h), pv=np.zeros_like(self.h),
            wr=self.wref.copy(), xw=np.zeros_like(p_pu), xr=v_r.astype(complex),
            xo=np.zeros_like(p_pu),
        )

    def machine(self, st, want_alg=False):
        p = self.params
        dw = st["dw"]
        ws = (1.0 + dw / self.f)[:, None]
        u = deadband_input(self.f + dw, p.deadband)[:, None]
        y_ie = p.ie_gain * (u - st["xo"]) / p.washout_tc
        err = st["wr"] - self.wref
        p_ref = self.p_set + p.speed_kp * err + st["xw"] - y_ie * self.ie
        psi = p.v_s / ws
        i_ref = (p_ref / st["wr"]) * p.l_s / (p.l_m * psi) - 1j * (psi / p.l_m)
        slip = ws - st["wr"]
        kp = p.current_kp
        a11 = p.r_s + 1j * ws * p.l_s
        a12 = 1j * ws * p.l_m
        a21 = 1j * slip * p.l_m
        a22 = p.r_r + kp + 1j * slip * p.l_r
        b2 = kp * i_ref + st["xr"]
        det = a11 * a22 - a12 * a21
        i_s = (p.v_s * a22 - a12 * b2) / det
        i_r = (a11 * b2 - a21 * p.v_s) / det
        v_r = kp * (i_ref - i_r) + st["xr"]
        psi_s = p.l_s * i_s + p.l_m * i_r
        # generator-convention torque: -(Lm/Ls)(psi_qs i_dr - psi_ds i_qr)
        te = -(p.l_m / p.l_s) * (psi_s.real * -i_r.imag - (-psi_s.imag) * i_r.real)
        p_g = -(p.v_s * i_s.real + np.real(v_r * np.conj(i_r)))
        out = dict(u=u, i_ref=i_ref, i_r=i_r, err=err, te=te, p_g=p_g)
        if want_alg:
            out["alg"] = WtgAlgebraic.from_phasors(p.v_s + 0 * i_s, v_r, i_s, i_r, p)
            out["ws"] = ws
        return out

    def deriv(self, st, shed):
        p = self.params
        m = self.machine(st)
        dpg = np.where(self.on, m["p_g"] - self.pg0, 0.0) * p.rated_mw
        d_pe = (self.p_pcc0 - dpg.sum(axis=1) - shed) / self.s_sg
        d = dict(
            dw=self.f * (st["pm"] - d_pe) / (2.0 * self.h),
            pm=(st["pv"] - st["pm"]) / self.tau_d,
            pv=(-st["pv"] - st["dw"] * self.inv_fr) / self.tau_sm,
            wr=(self.tm - m["te"]) / (2.0 * p.h_t),
            xw=p.speed_ki * m["err"],
            xr=p.current_ki * (m["i_ref"] - m["i_r"]),
            xo=(m["u"] - st["xo"]) / p.washout_tc,
        )
        return d

    def outputs(self, st, shed, want_alg=False):
        m = self.machine(st, want_alg)
        p_each = np.where(self.on, m["p_g"], 0.0) * self.params.rated_mw
        dpg = np.where(self.on, m["p_g"] - self.pg0, 0.0) * self.params.rated_mw
        d_pe = (self.p_pcc0 - dpg.sum(axis=1) - shed) / self.s_sg
        return p_each, d_pe, m


def _rk4(batch: _Batch, st, shed, dt):
    def axpy(a, k):
        return {n: st[n] + a * k[n] for n in st}

    k1 = batch.deriv(st, shed)
    k2 = batch.deriv(axpy(dt / 2, k1), shed)
    k3 = batch.deriv(axpy(dt / 2, k2), shed)
    k4 = batch.deriv(axpy(dt, k3), shed)
    return {n: st[n] + dt / 6.0 * (k1[n] + 2 * k2[n] + 2 * k3[n] + k4[n]) for n in st}


def simulate_batch(units: Sequence[DsgUnit], committed: Sequence[Sequence[int]],
                   n_ie_active: Sequence[int], p_pcc0: Sequence[float],
                   wind_mw, load_mw=None, *, wtg: WtgParams = WtgParams(),
                   horizon_s: float = 10.0, dt: float = 1e-3, t_island: float = 0.0,
                   ufls: UflsPlan | None = None, record: bool = False,
                   check_residuals: bool = False) -> BatchResult:
    """Simulate ``B`` islanding events side by side.

    ``wind_mw`` is either a ``(B, W)`` array of per-turbine output or a
    ``(W,)`` vector shared by all scenarios; a zero entry means the turbine
    is off.  IE is enabled on the first ``n_ie_active[b]`` online turbines.
    """
    B = len(committed)
    if not (len(n_ie_active) == len(p_pcc0) == B):
        raise ValueError("batch inputs have inconsistent lengths")
    wind = np.atleast_2d(np.asarray(wind_mw, dtype=float))
    if wind.shape[0] == 1 and B > 1:
        wind = np.repeat(wind, B, axis=0)
    if wind.shape[0] != B:
        raise ValueError("wind array does not match batch size")
    W = wind.shape[1]
    ie_mask = np.zeros((B, W), dtype=bool)
    for b, n in enumerate(n_ie_active):
        online = np.flatnonzero(wind[b] > 0)
        if n > len(online):
            raise ValueError("more IE activations than online turbines")
        ie_mask[b, online[:n]] = True
    load = np.zeros(B) if load_mw is None else np.broadcast_to(np.asarray(load_mw, float), (B,))
    agg = [aggregate_dsgs(units, c) for c in committed]

    if ufls is not None:
        frac = np.asarray(ufls.shed_fractions())
        shed_mw = load[:, None] * frac[None, :]
        thr = np.array([s.threshold_hz for s in ufls.stages])
        delay = np.array([s.delay_s for s in ufls.stages])
    else:
        shed_mw = np.zeros((B, 0))
        thr = delay = np.zeros(0)

    batch = _Batch(agg, wtg, p_pcc0, wind, ie_mask, load, shed_mw, thr, delay)
    st = batch.state0
    n_steps = int(round(horizon_s / dt))
    n_pre = int(round(t_island / dt))
    K = len(thr)
    timer = np.zeros((B, K))
    fired = np.zeros((B, K), dtype=bool)
    fire_t = np.full((B, K), np.nan)
    shed = np.zeros(B)
    min_dw = np.zeros(B)
    bad_speed = np.zeros(B, dtype=bool)
    failed = np.zeros(B, dtype=bool)
    max_res = 0.0

    if record:
        n_tot = n_pre + n_steps + 1
        rec_dw = np.zeros((n_tot, B))
        rec_pw = np.zeros((n_tot, B, W))
        rec_pe = np.zeros((n_tot, B))
        rec_shed = np.zeros((n_tot, B))
        p_each0, d_pe0, _ = batch.outputs(st, shed)
        rec_pw[: n_pre + 1] = p_each0
        # right-continuous: the islanding sample already carries the step
        rec_pe[n_pre] = d_pe0
        k0 = n_pre

    for k in range(n_steps):
        st = _rk4(batch, st, shed, dt)
        bad = ~np.isfinite(st["dw"]) | ~np.all(np.isfinite(st["wr"]), axis=1)
        if bad.any():
            failed |= bad
            for name, arr in st.items():
                arr[bad] = batch.state0[name][bad]
        dev = -st["dw"]
        min_dw = np.minimum(min_dw, st["dw"])
        bad_speed |= np.any((st["wr"] <= 0) | (st["wr"] > 1.3), axis=1)
        if K:
            above = (dev[:, None] > thr[None, :]) & ~fired
            timer = np.where(above, timer + dt, 0.0)
            new = above & (timer >= delay[None, :] - 1e-12)
            if new.any():
                fired |= new
                fire_t = np.where(new, t_island + (k + 1) * dt, fire_t)
                shed = shed + (new * shed_mw).sum(axis=1)
        if record or check_residuals:
            p_each, d_pe, m = batch.outputs(st, shed, want_alg=check_residuals)
            if check_residuals:
                res = dfig_residuals(m["alg"], wtg, m["ws"], st["wr"])
                res = np.where(batch.on[None], res, 0.0)
                max_res = max(max_res, float(np.max(np.abs(res))))
            if record:
                i = k0 + k + 1
                rec_dw[i] = st["dw"]
                rec_pw[i] = p_each
                rec_pe[i] = d_pe
                rec_shed[i] = shed

    nadir = np.maximum(0.0, -min_dw) + 0.0  # no negative zero
    unstable = (F_NOM - nadir < UNSTABLE_HZ) | bad_speed
    nadir[failed] = np.nan
    out = BatchResult(nadir=nadir, unstable=unstable, failed=failed)
    if record:
        t = np.arange(n_pre + n_steps + 1) * dt
        trajs = []
        for b in range(B):
            p_w = rec_pw[:, b, :].sum(axis=1)
            p_pcc = np.where(t < t_island - 1e-12, batch.p_pcc0[b], 0.0)
            p_pcc[: n_pre + 1] = batch.p_pcc0[b]
            p_shed = rec_shed[:, b]
            p_dsg = load[b] - p_shed - p_w - p_pcc
            trajs.append(Trajectory(
                dt=dt, t=t, freq=F_NOM + rec_dw[:, b], p_dsg=p_dsg, p_wtg=p_w,
                p_pcc=p_pcc, t_island=t_island, p_wtg_each=rec_pw[:, b, :].copy(),
                p_shed=p_shed.copy(), d_pe=rec_pe[:, b].copy(), s_sg=agg[b].s_sg,
                dsg=agg[b], unstable=bool(unstable[b]),
                stage_times=[None if np.isnan(x) else float(x) for x in fire_t[b]],
                max_residual=max_res,
            ))
        out.trajectories = trajs
    return out


def simulate_islanding(units: Sequence[DsgUnit], committed: Sequence[int],
                       n_ie_active: int, p_pcc0: float, load_mw: float,
                       wind_mw, horizon_s: float = 10.0, ufls: UflsPlan | None = None,
                       *, wtg: WtgParams = WtgParams(), dt: float = 1e-3,
                       t_island: float = 0.0, check_residuals: bool = False) -> Trajectory:
    """Islanding at ``t_island`` from a steady PCC import of ``p_pcc0`` MW."""
    res = simulate_batch(units, [committed], [n_ie_active], [p_pcc0],
                         np.atleast_1d(np.asarray(wind_mw, float))[None, :], [load_mw],
                         wtg=wtg, horizon_s=horizon_s, dt=dt, t_island=t_island,
                         ufls=ufls, record=True, check_residuals=check_residuals)
    if res.failed[0]:
        raise SimulationError("integration diverged")
    return res.trajectories[0]


def integrate_dsg(agg: DsgAggregate, d_pe: np.ndarray, dt: float, start: int = 0) -> np.ndarray:
    """Standalone diesel response to an imposed electric-power series (pu).

    ``d_pe`` is sampled right-continuously on the simulation grid and
    interpolated linearly inside each step; integration begins at sample
    ``start`` (the islanding instant).  Returns the frequency in Hz.
    """
    f = agg.f_base
    inv_fr = 0.0 if math.isinf(agg.droop_r) else 1.0 / (f * agg.droop_r)

    def rhs(x, pe):
        dw, pm, pv = x
        return np.array([f * (pm - pe) / (2 * agg.h_coi),
                         (pv - pm) / agg.tau_d,
                         (-pv - dw * inv_fr) / agg.tau_sm])

    x = np.zeros(3)
    out = np.full(len(d_pe), f)
    for k in range(start + 1, len(d_pe)):
        pa, pb = d_pe[k - 1], d_pe[k]
        pm_ = 0.5 * (pa + pb)
        k1 = rhs(x, pa)
        k2 = rhs(x + dt / 2 * k1, pm_)
        k3 = rhs(x + dt / 2 * k2, pm_)
        k4 = rhs(x + dt * k3, pb)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = f + x[0]
    return out
