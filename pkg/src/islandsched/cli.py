"""Command-line driver for the scheduling pipeline.

Exit codes: 0 success, 1 usage, 2 data error, 3 solver limit,
4 verification failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3, 4
SOLVER_LIMITS = ("time-limit", "node-limit", "iteration-limit", "gap-limit")

log = logging.getLogger("islandsched")


class CliError(Exception):
    def __init__(self, code: int, kind: str, msg: str):
        super().__init__(msg)
        self.code = code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def _artifact(path: Path):
    """Write to a temporary name and move into place only on success."""
    tmp = path.with_name(path.name + ".partial")
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _dump_json(path: Path, obj) -> None:
    with _artifact(path) as tmp, open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _round(x, nd=9):
    if isinstance(x, float):
        return None if math.isnan(x) else round(x, nd)
    return x


# --- shared loaders ------------------------------------------------------


def _weights_path(args, cfg) -> Path:
    return Path(args.weights) if getattr(args, "weights", None) else args.out_dir / "weights.json"


def _load_net(path: Path, required: bool, case: int = 3):
    from .surrogate import load_weights
    if not path.exists():
        if required:
            raise CliError(EXIT_DATA, "data", f"surrogate required for case {case} "
                                              f"(no weights at {path})")
        return None, None
    try:
        return load_weights(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_DATA, "data", f"cannot read weights {path}: {exc}") from None


def _problem(cfg, case: int, net=None, bounds=None, **kw):
    from .scheduler import case_problem
    s = cfg.schedule
    opts = dict(case=case, nadir_limit_hz=s["nadir_limit_hz"], alpha=s["alpha"],
                q_limit_frac=s["q_limit_frac"], price_scale=s["price_scale"], mode=s["mode"],
                charge_initial_startup=s["charge_initial_startup"],
                startup_literal=s["startup_literal"], net=net if case == 3 else None,
                bounds=bounds if case == 3 else None)
    opts.update(kw)
    return case_problem(cfg.forecast(), cfg.network(), cfg.units(),
                        rated_kw=cfg.raw["wtg"]["rated_kw"], n_wtg=cfg.n_wtg,
                        wind_curve=cfg.wind_curve(), **opts)


def _solve(cfg, pb):
    from .scheduler import ScheduleSolveError, solve_schedule
    s = cfg.schedule
    try:
        res = solve_schedule(pb, backend=s["backend"], gap=s["gap"],
                             time_limit=s["time_limit_s"], method=s["method"])
    except ScheduleSolveError as exc:
        code = EXIT_SOLVER if exc.status in SOLVER_LIMITS else EXIT_DATA
        raise CliError(code, "solver", str(exc)) from None
    if res.audit:
        raise CliError(EXIT_VERIFY, "verification",
                       f"schedule fails its physics audit: {res.audit[0]}")
    return res


def _schedule(cfg, args, case: int):
    net, bounds = _load_net(_weights_path(args, cfg), required=case == 3, case=case)
    return _problem(cfg, case, net, bounds), net


# --- subcommands ---------------------------------------------------------


def cmd_simulate(args, cfg) -> int:
    from .pspb import SimulationError, simulate_islanding
    from .verify import UflsPlan
    u_d = [int(x) for x in args.u_d.split(",")]
    if len(u_d) != len(cfg.units()):
        raise CliError(EXIT_USAGE, "usage", f"--u-d needs {len(cfg.units())} entries")
    wind = [cfg.wtg().rated_mw] * cfg.n_wtg if args.wind_mw is None else \
        [float(x) for x in args.wind_mw.split(",")]
    ufls = UflsPlan.default(cfg.network().p_share, cfg.verify["ufls_delay_s"]) if args.ufls else None
    try:
        traj = simulate_islanding(cfg.units(), u_d, args.n_ie, args.p_pcc, args.load_mw, wind,
                                  cfg.horizon_s, ufls, wtg=cfg.wtg(), dt=cfg.dt,
                                  t_island=args.t_island)
    except SimulationError as exc:
        raise CliError(EXIT_VERIFY, "simulation", str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_DATA, "data", str(exc)) from None
    out = args.out_dir / "trajectory.csv"
    with _artifact(out) as tmp:
        traj.to_csv(tmp)
    _write_meta(out, cfg)
    from .pspb import extract_nadir
    print(f"nadir {extract_nadir(traj):.6f} Hz -> {out}")
    return EXIT_OK


def cmd_dataset(args, cfg) -> int:
    from .data import generate_dataset
    t = cfg.training
    ds = generate_dataset(cfg.units(), n_pcc_draws=t["n_pcc_draws"], seed=cfg.seed,
                          n_wtg=cfg.n_wtg, wtg=cfg.wtg(), dt=cfg.dt, horizon_s=cfg.horizon_s,
                          pcc_range=tuple(t["pcc_range_mw"]), train_fraction=t["train_fraction"])
    out = args.out_dir / "dataset.csv"
    with _artifact(out) as tmp:
        ds.to_csv(tmp)
    _write_meta(out, cfg, rows=len(ds), failed=ds.n_failed, unstable=int(ds.unstable.sum()),
                train_rows=len(ds.train_idx), test_rows=len(ds.test_idx))
    print(f"{len(ds)} rows ({ds.n_failed} failed, {int(ds.unstable.sum())} unstable) -> {out}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    from .data import Dataset
    from .surrogate import TrainingError, activation_bounds, evaluate, input_box, train_split
    src = Path(args.dataset) if args.dataset else args.out_dir / "dataset.csv"
    if not src.exists():
        raise CliError(EXIT_DATA, "data", f"dataset {src} not found; run 'dataset' first")
    t = cfg.training
    ds = Dataset.from_csv(src, seed=cfg.seed, train_fraction=t["train_fraction"])
    x_tr, y_tr = ds.train
    try:
        tr = train_split(x_tr, y_tr, val_fraction=t["val_fraction"], seed=cfg.seed,
                         hidden=tuple(t["hidden"]), epochs=t["epochs"], lr=t["lr"],
                         patience=t["patience"], feature_names=ds.feature_names)
    except TrainingError as exc:
        raise CliError(EXIT_VERIFY, "training", str(exc)) from None
    net = tr.net
    lo, hi = input_box(net, len(cfg.units()), cfg.n_wtg, tuple(t["pcc_range_mw"]))
    bounds = activation_bounds(net, lo, hi, widen=t["bound_widen"])
    metrics = {k: _round(v) for k, v in evaluate(net, *ds.test).items()}
    out = args.out_dir / "weights.json"
    with _artifact(out) as tmp:
        net.save(tmp, bounds, config_hash=cfg.hash, seed=cfg.seed, epochs=tr.epochs,
                 test_metrics=metrics)
    print(f"trained {tr.epochs} epochs; test mae {metrics['mae_hz']:.4f} Hz, "
          f"max {metrics['max_abs_hz']:.4f} Hz, mean rel {100 * metrics['mean_rel']:.2f}% -> {out}")
    return EXIT_OK


def cmd_encode_check(args, cfg) -> int:
    from .encode import exactness_check
    net, bounds = _load_net(_weights_path(args, cfg), required=True)
    if bounds is None:
        raise CliError(EXIT_DATA, "data", "weights file carries no activation bounds")
    rep = exactness_check(net, bounds, n_trials=cfg.verify["encode_trials"], seed=cfg.seed)
    out = args.out_dir / "encode_check.json"
    _dump_json(out, {**cfg.meta(), "n_trials": rep.n_trials,
                     "max_deviation": _round(rep.max_deviation, 12),
                     "mip_range": [_round(rep.mip_min), _round(rep.mip_max)],
                     "grid_range": [_round(rep.grid_min), _round(rep.grid_max)],
                     "grid_tolerance": _round(rep.grid_tolerance), "passed": rep.passed,
                     "failures": rep.failures})
    print(f"max deviation {rep.max_deviation:.3g}; {'passed' if rep.passed else 'FAILED'} -> {out}")
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_schedule(args, cfg) -> int:
    case = args.case or cfg.schedule["case"]
    pb, _ = _schedule(cfg, args, case)
    res = _solve(cfg, pb)
    csv_out = args.out_dir / f"schedule_case{case}.csv"
    with _artifact(csv_out) as tmp:
        res.to_csv(tmp)
    _write_meta(csv_out, cfg, case=case)
    cost_out = args.out_dir / f"costs_case{case}.json"
    _dump_json(cost_out, {**res.cost_summary(), **cfg.meta()})
    print(f"case {case}: {res.status}, total cost {res.total_cost:.4f} -> {csv_out}")
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    from .scheduler import nadir_sweep, write_sweep
    net, bounds = _load_net(_weights_path(args, cfg), required=True)
    pb = _problem(cfg, 3, net, bounds)
    limits = cfg.schedule["sweep_limits_hz"]
    s = cfg.schedule
    kw = dict(backend=s["backend"], gap=s["gap"], time_limit=s["time_limit_s"], method=s["method"])
    on = nadir_sweep(pb, limits, ie_enabled=True, **kw)
    off = nadir_sweep(pb, limits, ie_enabled=False, **kw)
    bad = [p for p in on + off if p.status in SOLVER_LIMITS]
    out = args.out_dir / "sweep.csv"
    with _artifact(out) as tmp:
        write_sweep(tmp, on, off)
    _write_meta(out, cfg)
    print(f"{len(limits)} limits -> {out}")
    if bad:
        raise CliError(EXIT_SOLVER, "solver", f"{len(bad)} sweep points stopped at a solver limit")
    return EXIT_OK


def _commands(cfg, args, case: int):
    from .verify import ScheduleCommands, read_schedule
    src = args.out_dir / f"schedule_case{case}.csv"
    pb, net = _schedule(cfg, args, case)
    if src.exists():
        return read_schedule(src, case), pb, net
    return ScheduleCommands.of(_solve(cfg, pb)), pb, net


def cmd_verify(args, cfg) -> int:
    from .verify import UflsPlan, simulate_period, verify_schedule, write_svg
    case = args.case or cfg.schedule["case"]
    cmds, pb, net = _commands(cfg, args, case)
    ufls = UflsPlan.default(pb.network.p_share, cfg.verify["ufls_delay_s"]) if args.ufls else None
    periods = [args.period] if args.period else None
    try:
        rep = verify_schedule(cmds, net, ufls, problem=pb, periods=periods, wtg=cfg.wtg(),
                              dt=cfg.dt, horizon_s=cfg.horizon_s)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    tag = f"case{case}" + ("_ufls" if args.ufls else "") + (f"_p{args.period}" if args.period else "")
    with _artifact(args.out_dir / f"verify_{tag}.csv") as tmp:
        rep.to_csv(tmp)
    _write_meta(args.out_dir / f"verify_{tag}.csv", cfg, case=case)
    _dump_json(args.out_dir / f"verify_{tag}.json", {**rep.to_dict(), **cfg.meta()})
    if args.period and cfg.verify["svg"]:
        traj = simulate_period(cmds, pb, args.period, ufls, wtg=cfg.wtg(), dt=cfg.dt,
                               horizon_s=cfg.horizon_s, t_island=cfg.verify["replay_t_island_s"])
        write_svg(args.out_dir / f"verify_{tag}.svg", {"frequency": (traj.t, traj.freq)},
                  title=f"case {case}, islanding in period {args.period}")
    for r in rep.rows:
        stages = ",".join(str(s + 1) for s in r.stages) or "-"
        print(f"periods {_fmt(r.periods):>18}  predicted {r.predicted_hz:8.4f}  simulated "
              f"{r.simulated_hz:8.4f}  error {r.error_pct:6.2f}%" + (f"  stages {stages}" if ufls else ""))
    print(f"mean error {rep.mean_error_pct:.3f}%")
    if rep.failed_periods:
        raise CliError(EXIT_VERIFY, "verification", f"simulation failed in periods {rep.failed_periods}")
    limit = cfg.verify.get("max_mean_error_pct")
    if limit is not None and case == 3 and not math.isnan(rep.mean_error_pct) \
            and rep.mean_error_pct > limit:
        raise CliError(EXIT_VERIFY, "verification",
                       f"mean nadir error {rep.mean_error_pct:.2f}% exceeds {limit}%")
    return EXIT_OK


def _fmt(periods):
    from .verify import format_periods
    return format_periods(periods)


def cmd_replay(args, cfg) -> int:
    from .pspb import extract_nadir
    from .verify import REPLAY_MODES, power_replay, rms_gap, simulate_period, write_svg
    cmds, pb, _ = _commands(cfg, args, 3)
    period = args.period or cfg.verify["replay_period"]
    ref = simulate_period(cmds, pb, period, wtg=cfg.wtg(), dt=cfg.dt, horizon_s=cfg.horizon_s,
                          t_island=cfg.verify["replay_t_island_s"])
    modes = REPLAY_MODES if args.mode == "all" else (args.mode,)
    summary = {**cfg.meta(), "period": period, "n_ie": int(cmds.u_ie[period - 1].sum()),
               "reference_nadir_hz": _round(extract_nadir(ref)), "modes": {}}
    series = {"reference": (ref.t, ref.freq)}
    for m in modes:
        rp = power_replay(ref, m)
        series[m] = (rp.t, rp.freq)
        summary["modes"][m] = {"nadir_hz": _round(extract_nadir(rp)), "rms_gap_hz": _round(rms_gap(rp, ref))}
        print(f"{m:>14}: nadir {extract_nadir(rp):.4f} Hz, rms gap {rms_gap(rp, ref):.2e} Hz")
    out = args.out_dir / f"replay_{args.mode}.csv"
    with _artifact(out) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", *(f"{k}_hz" for k in series)])
        for i in range(len(ref.t)):
            w.writerow([f"{ref.t[i]:.6f}", *(f"{v[1][i]:.9f}" for v in series.values())])
    _write_meta(out, cfg, period=period)
    _dump_json(args.out_dir / f"replay_{args.mode}.json", summary)
    if cfg.verify["svg"]:
        write_svg(args.out_dir / f"replay_{args.mode}.svg", series, title=f"power replay, period {period}")
    return EXIT_OK


def cmd_reproduce(args, cfg) -> int:
    steps = [
        ("dataset", cmd_dataset, {}),
        ("train", cmd_train, {"dataset": None}),
        ("encode-check", cmd_encode_check, {}),
        *((f"schedule case {c}", cmd_schedule, {"case": c}) for c in (1, 2, 3)),
        ("sweep", cmd_sweep, {}),
        ("verify case 3", cmd_verify, {"case": 3, "ufls": False, "period": None}),
        *((f"verify case {c} with UFLS", cmd_verify,
           {"case": c, "ufls": True, "period": cfg.verify["replay_period"]}) for c in (2, 3)),
        ("replay", cmd_replay, {"mode": "all", "period": None}),
    ]
    worst = EXIT_OK
    for name, fn, extra in steps:
        print(f"== {name}")
        ns = argparse.Namespace(**{**vars(args), **extra})
        try:
            code = fn(ns, cfg)
        except CliError as exc:
            if exc.code != EXIT_VERIFY:
                raise
            # keep going so every artifact exists; report at the end
            _fail(exc.code, exc.kind, f"{name}: {exc}")
            code = exc.code
        worst = max(worst, code)
    return worst


def _write_meta(path: Path, cfg, **extra) -> None:
    from .config import write_meta
    write_meta(path, cfg, **extra)


# --- entry point ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML run config (default: bundled case study)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", type=Path, default=Path("out"), help="artifact directory")
    common.add_argument("--threads", type=int, help="BLAS/solver thread count")
    common.add_argument("--weights", help="surrogate weights JSON (default: OUT_DIR/weights.json)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="islandsched", description="Frequency-constrained microgrid scheduling.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="one islanding event -> trajectory CSV")
    s.add_argument("--p-pcc", type=float, default=0.5, help="pre-islanding PCC import, MW")
    s.add_argument("--u-d", default="1,1", help="DSG commitments, comma separated")
    s.add_argument("--n-ie", type=int, default=0)
    s.add_argument("--load-mw", type=float, default=3.0)
    s.add_argument("--wind-mw", help="per-turbine output, comma separated (default: rated)")
    s.add_argument("--t-island", type=float, default=0.0)
    s.add_argument("--ufls", action="store_true")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("dataset", parents=[common], help="generate the labeled scenario set")
    s.set_defaults(fn=cmd_dataset)

    s = sub.add_parser("train", parents=[common], help="fit the nadir surrogate")
    s.add_argument("--dataset", help="dataset CSV (default: OUT_DIR/dataset.csv)")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("encode-check", parents=[common], help="audit the MILP encoding")
    s.set_defaults(fn=cmd_encode_check)

    s = sub.add_parser("schedule", parents=[common], help="solve a day-ahead schedule")
    s.add_argument("--case", type=int, choices=(1, 2, 3))
    s.set_defaults(fn=cmd_schedule)

    s = sub.add_parser("sweep", parents=[common], help="cost versus nadir limit")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("verify", parents=[common], help="re-simulate a schedule")
    s.add_argument("--case", type=int, choices=(1, 2, 3))
    s.add_argument("--ufls", action="store_true", help="enable two-stage load shedding")
    s.add_argument("--period", type=int, help="only this period (1-24)")
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("replay", parents=[common], help="standalone diesel power replay")
    s.add_argument("--mode", default="all",
                   choices=("all", "pcc_only", "pcc_minus_wtg", "dsg_electric"))
    s.add_argument("--period", type=int)
    s.set_defaults(fn=cmd_replay)

    s = sub.add_parser("reproduce", parents=[common], help="run the whole pipeline")
    s.set_defaults(fn=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from .config import ConfigError, load_config
    from .scheduler import ScheduleDataError
    try:
        cfg = load_config(args.config, seed=args.seed)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return args.fn(args, cfg)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except (ConfigError, ScheduleDataError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))


def _fail(code: int, kind: str, msg: str) -> int:
    print(json.dumps({"error": kind, "message": msg, "exit_code": code}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
