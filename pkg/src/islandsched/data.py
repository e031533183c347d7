"""Forecast and network ingestion, scenario enumeration and dataset labeling."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .pspb import DsgUnit, WtgParams, simulate_batch

log = logging.getLogger(__name__)

FEATURE_HEADER = ["u_d1", "u_d2", "n_ie", "p_pcc_mw", "nadir_hz"]


def data_path(name: str) -> Path:
    return Path(str(resources.files("islandsched") / "data" / name))


# --- forecast ------------------------------------------------------------


@dataclass(frozen=True)
class ForecastRow:
    load_mw: float
    wind_raw: float
    price_ct_per_kwh: float


@dataclass(frozen=True)
class Forecast:
    periods: tuple[ForecastRow, ...]

    def __post_init__(self):
        if len(self.periods) != 24:
            raise ValueError(f"forecast needs 24 periods, got {len(self.periods)}")
        for r in self.periods:
            if r.load_mw <= 0 or r.price_ct_per_kwh <= 0 or r.wind_raw < 0:
                raise ValueError("forecast loads and prices must be positive")

    @property
    def load(self) -> np.ndarray:
        return np.array([r.load_mw for r in self.periods])

    @property
    def price(self) -> np.ndarray:
        return np.array([r.price_ct_per_kwh for r in self.periods])

    @property
    def wind_raw(self) -> np.ndarray:
        return np.array([r.wind_raw for r in self.periods])


def load_forecast(path=None) -> Forecast:
    path = data_path("forecast.csv") if path is None else Path(path)
    with open(path, newline="") as fh:
        rows = sorted(csv.DictReader(fh), key=lambda r: int(r["period"]))
    return Forecast(tuple(ForecastRow(float(r["load_mw"]), float(r["wind_raw"]),
                                      float(r["price_ct_per_kwh"])) for r in rows))


def wind_power(wind_raw, rated_kw: float = 400.0, *, v_cut_in: float = 3.0,
               v_rated: float = 9.5, v_cut_out: float = 25.0):
    """Available turbine output in MW for a wind speed in m/s.

    Zero below cut-in and above cut-out, cubic between cut-in and rated,
    flat at rated power above that.
    """
    v = np.asarray(wind_raw, dtype=float)
    if np.any(v < 0):
        raise ValueError("wind speed must be nonnegative")
    rated = rated_kw / 1000.0
    ramp = rated * np.clip((v - v_cut_in) / (v_rated - v_cut_in), 0.0, 1.0) ** 3
    p = np.where((v < v_cut_in) | (v > v_cut_out), 0.0, ramp)
    return float(p) if p.ndim == 0 else p


# --- network -------------------------------------------------------------


@dataclass(frozen=True)
class Line:
    index: int
    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float
    p_max_mw: float


@dataclass
class NetworkModel:
    buses: list[int]
    p_share: dict[int, float]
    q_share: dict[int, float]
    lines: list[Line]
    dsg_bus: list[int]
    wtg_bus: list[int]
    pcc_bus: int = 1
    s_base_mva: float = 10.0
    v_eps: float = 0.05

    def __post_init__(self):
        if len(self.lines) != len(self.buses) - 1:
            raise ValueError("network is not radial: |lines| != |buses| - 1")
        bus_set = set(self.buses)
        to_seen = set()
        for ln in self.lines:
            if ln.from_bus not in bus_set or ln.to_bus not in bus_set:
                raise ValueError(f"line {ln.index} references an unknown bus")
            if ln.to_bus in to_seen:
                raise ValueError(f"bus {ln.to_bus} is the to-bus of two lines")
            to_seen.add(ln.to_bus)
        if self.pcc_bus in to_seen:
            raise ValueError("the PCC bus must be the feeder root")
        # connectivity from the root
        children: dict[int, list[int]] = {b: [] for b in self.buses}
        for ln in self.lines:
            children[ln.from_bus].append(ln.to_bus)
        seen, stack = set(), [self.pcc_bus]
        while stack:
            b = stack.pop()
            seen.add(b)
            stack.extend(children[b])
        if seen != bus_set:
            raise ValueError("network is not connected")

    def bus_load(self, total_mw: float) -> tuple[dict[int, float], dict[int, float]]:
        p = {b: total_mw * self.p_share.get(b, 0.0) for b in self.buses}
        q = {b: total_mw * self.q_share.get(b, 0.0) for b in self.buses}
        return p, q


def load_network(lines_csv=None, buses_csv=None, *, dsg_bus=(1, 15),
                 wtg_bus=(22, 25, 31), pcc_bus: int = 1, v_eps: float = 0.05,
                 s_base_mva: float = 10.0) -> NetworkModel:
    lines_csv = data_path("ieee33_lines.csv") if lines_csv is None else Path(lines_csv)
    buses_csv = data_path("ieee33_buses.csv") if buses_csv is None else Path(buses_csv)
    with open(lines_csv, newline="") as fh:
        lines = [Line(int(r["line"]), int(r["from"]), int(r["to"]), float(r["r_pu"]),
                      float(r["x_pu"]), float(r["p_max_mw"])) for r in csv.DictReader(fh)]
    with open(buses_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    buses = [int(r["bus"]) for r in rows]
    return NetworkModel(
        buses=buses,
        p_share={int(r["bus"]): float(r["p_share"]) for r in rows},
        q_share={int(r["bus"]): float(r["q_share"]) for r in rows},
        lines=lines, dsg_bus=list(dsg_bus), wtg_bus=list(wtg_bus), pcc_bus=pcc_bus,
        s_base_mva=s_base_mva, v_eps=v_eps,
    )


# --- scenarios and dataset ----------------------------------------------


@dataclass(frozen=True)
class Scenario:
    u_d: tuple[int, ...]
    n_ie: int
    p_pcc_mw: float = 0.0

    def __post_init__(self):
        if not any(self.u_d):
            raise ValueError("scenario needs at least one committed DSG")
        if not -2.0 - 1e-12 <= self.p_pcc_mw <= 2.0 + 1e-12:
            raise ValueError("PCC power outside [-2, 2] MW")

    @property
    def features(self) -> list[float]:
        return [*map(float, self.u_d), float(self.n_ie), self.p_pcc_mw]


def enumerate_scenarios(n_dsg: int = 2, n_wtg: int = 3) -> list[tuple[tuple[int, ...], int]]:
    """Every DSG pattern with at least one unit on, crossed with IE counts."""
    if n_dsg < 1:
        raise ValueError("need at least one DSG")
    patterns = [p for p in itertools.product((0, 1), repeat=n_dsg) if any(p)]
    return [(p, n) for p in patterns for n in range(n_wtg + 1)]


@dataclass
class Dataset:
    x: np.ndarray  # (N, n_dsg + 2) features
    y: np.ndarray  # nadir deviation, Hz
    train_idx: np.ndarray
    test_idx: np.ndarray
    feature_names: list[str]
    seed: int = 0
    n_failed: int = 0
    unstable: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __len__(self):
        return len(self.y)

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.train_idx], self.y[self.train_idx]

    @property
    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.test_idx], self.y[self.test_idx]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.feature_names + ["nadir_hz"])
            for xi, yi in zip(self.x, self.y):
                w.writerow([*(f"{int(v)}" for v in xi[:-1]), f"{xi[-1]:.9f}", f"{yi:.9f}"])

    @classmethod
    def from_csv(cls, path, seed: int = 0, train_fraction: float = 0.8) -> "Dataset":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            rows = np.array([[float(v) for v in row] for row in r])
        tr, te = split_indices(len(rows), seed, train_fraction)
        return cls(x=rows[:, :-1], y=rows[:, -1], train_idx=tr, test_idx=te,
                   feature_names=header[:-1], seed=seed)


def split_indices(n: int, seed: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(train_fraction * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def generate_dataset(units: Sequence[DsgUnit], n_pcc_draws: int = 375, seed: int = 0, *,
                     n_wtg: int = 3, wtg: WtgParams = WtgParams(), dt: float = 1e-3,
                     horizon_s: float = 10.0, pcc_range=(-2.0, 2.0),
                     train_fraction: float = 0.8, chunk: int = 4500) -> Dataset:
    """Label every (commitment, IE count) combo at each sampled PCC power.

    Turbines run at rated output.  Rows are ordered by (draw, combo).
    """
    rng = np.random.default_rng(seed)
    draws = rng.uniform(pcc_range[0], pcc_range[1], size=n_pcc_draws)
    combos = enumerate_scenarios(len(units), n_wtg)
    rows = [(u_d, n, p) for p in draws for (u_d, n) in combos]
    wind = np.full(n_wtg, wtg.rated_mw)
    nadir = np.empty(len(rows))
    unstable = np.zeros(len(rows), dtype=bool)
    failed = np.zeros(len(rows), dtype=bool)
    for s in range(0, len(rows), chunk):
        part = rows[s:s + chunk]
        res = simulate_batch(units, [r[0] for r in part], [r[1] for r in part],
                             [r[2] for r in part], wind, wtg=wtg, dt=dt, horizon_s=horizon_s)
        nadir[s:s + len(part)] = res.nadir
        unstable[s:s + len(part)] = res.unstable
        failed[s:s + len(part)] = res.failed
    if failed.any():
        log.warning("%d scenario simulations failed and were excluded", int(failed.sum()))
    keep = ~failed
    x = np.array([[*r[0], r[1], r[2]] for r in rows], dtype=float)[keep]
    names = [f"u_d{i + 1}" for i in range(len(units))] + ["n_ie", "p_pcc_mw"]
    tr, te = split_indices(int(keep.sum()), seed, train_fraction)
    return Dataset(x=x, y=nadir[keep], train_idx=tr, test_idx=te, feature_names=names,
                   seed=seed, n_failed=int(failed.sum()), unstable=unstable[keep])
