"""Run configuration: TOML loading, validation and artifact metadata."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import Forecast, NetworkModel, data_path, load_forecast, load_network
from .pspb import DsgUnit, WtgParams

SECTIONS = ("system", "dsg", "wtg", "network", "training", "schedule", "verify")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    raw: dict
    path: Path | None = None

    def __post_init__(self):
        missing = [s for s in SECTIONS if s not in self.raw]
        if missing:
            raise ConfigError(f"config lacks section(s): {', '.join(missing)}")
        if not self.raw["dsg"]:
            raise ConfigError("config defines no DSG units")
        for key in ("forecast",):
            self._resolve(self.raw["system"].get(key, ""))
        for key in ("lines", "buses"):
            self._resolve(self.raw["network"].get(key, ""))
        if len(self.raw["wtg"]["buses"]) != self.raw["wtg"]["count"]:
            raise ConfigError("wtg.buses must list one bus per turbine")

    def _resolve(self, p: str) -> Path | None:
        if not p:
            return None
        q = Path(p)
        if not q.is_absolute() and self.path is not None:
            q = self.path.parent / q
        if not q.exists():
            raise ConfigError(f"referenced file {q} does not exist")
        return q

    # --- sections --------------------------------------------------------

    @property
    def system(self) -> dict:
        return self.raw["system"]

    @property
    def training(self) -> dict:
        return self.raw["training"]

    @property
    def schedule(self) -> dict:
        return self.raw["schedule"]

    @property
    def verify(self) -> dict:
        return self.raw["verify"]

    @property
    def seed(self) -> int:
        return int(self.system["seed"])

    @property
    def dt(self) -> float:
        return float(self.system["dt_s"])

    @property
    def horizon_s(self) -> float:
        return float(self.system["horizon_s"])

    def units(self) -> list[DsgUnit]:
        out = []
        for key in sorted(self.raw["dsg"], key=int):
            d = self.raw["dsg"][key]
            out.append(DsgUnit(d["base_mva"], d["inertia_h"], d["p_min"], d["p_max"],
                               tau_d=d["tau_d"], tau_sm=d["tau_sm"], droop_r=d["droop_r"],
                               cost_marginal=d["cost_marginal"], cost_fixed=d["cost_fixed"],
                               cost_startup=d["cost_startup"], bus=int(d["bus"])))
        return out

    def wtg(self) -> WtgParams:
        w = self.raw["wtg"]
        return WtgParams(rated_kw=w["rated_kw"], ie_gain=w["ie_gain"],
                         deadband=tuple(w["deadband_hz"]), washout_tc=w["washout_tc_s"],
                         speed_kp=w["speed_kp"], speed_ki=w["speed_ki"],
                         current_kp=w["current_kp"], current_ki=w["current_ki"])

    @property
    def n_wtg(self) -> int:
        return int(self.raw["wtg"]["count"])

    def wind_curve(self) -> dict:
        w = self.raw["wtg"]
        return {"v_cut_in": w["v_cut_in"], "v_rated": w["v_rated"], "v_cut_out": w["v_cut_out"]}

    def forecast(self) -> Forecast:
        return load_forecast(self._resolve(self.system.get("forecast", "")))

    def network(self) -> NetworkModel:
        n = self.raw["network"]
        return load_network(self._resolve(n.get("lines", "")), self._resolve(n.get("buses", "")),
                            dsg_bus=tuple(u.bus for u in self.units()),
                            wtg_bus=tuple(self.raw["wtg"]["buses"]), pcc_bus=n["pcc_bus"],
                            v_eps=n["v_eps"], s_base_mva=n["s_base_mva"])

    # --- provenance ------------------------------------------------------

    @property
    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def meta(self, **extra) -> dict:
        return {"config_hash": self.hash, "seed": self.seed, **extra}

    def with_overrides(self, **sections) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        for sec, vals in sections.items():
            raw[sec].update(vals)
        return RunConfig(raw, self.path)


def load_config(path=None, *, seed: int | None = None) -> RunConfig:
    """Parse a TOML run config; ``None`` loads the bundled case study."""
    p = data_path("case_study.toml") if path is None else Path(path)
    try:
        with open(p, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {p} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    # the bundled file's own location is irrelevant for provenance
    cfg = RunConfig(raw, p if path is not None else None)
    if seed is not None:
        cfg = cfg.with_overrides(system={"seed": int(seed)})
    return cfg


def write_meta(artifact, cfg: RunConfig, **extra) -> Path:
    """Sidecar ``<artifact>.meta.json`` carrying the config hash and seed."""
    side = Path(str(artifact) + ".meta.json")
    with open(side, "w") as fh:
        json.dump(cfg.meta(artifact=Path(artifact).name, **extra), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return side
