import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from islandsched.scheduler import (SCHEDULE_HEADER, SWEEP_HEADER, ScheduleDataError,
                                   ScheduleSolveError, audit_schedule, build_model, nadir_sweep,
                                   case_problem, presolve_thresholds, solve_schedule, write_sweep)
from islandsched.surrogate import Layer, NeuralNet, forward

PERIODS = slice(6, 10)  # a stretch with both high and low wind


def toy_net(offset=0.1):
    """nadir = relu(p + 0.2) - 0.15 relu(n_ie - 0.5) - 0.2 relu(u1 + u2 - 0.5) + offset"""
    w1 = np.array([[0.0, 0.0, 1.0],
                   [0.0, 0.0, 1.0],
                   [0.0, 1.0, 0.0],
                   [1.0, 0.0, 0.0]])
    b1 = np.array([0.2, -0.5, -0.5])
    w2 = np.array([[1.0], [-0.15], [-0.2]])
    return NeuralNet([Layer(w1, b1), Layer(w2, np.array([offset]), "linear")])


def problem(cfg, case, periods=PERIODS, **kw):
    s = cfg.schedule
    pb = case_problem(cfg.forecast(), cfg.network(), cfg.units(), rated_kw=cfg.raw["wtg"]["rated_kw"],
                      n_wtg=cfg.n_wtg, wind_curve=cfg.wind_curve(), case=case,
                      nadir_limit_hz=kw.pop("nadir_limit_hz", 1.0), alpha=s["alpha"],
                      **{"net": toy_net() if case == 3 else None, **kw})
    return replace(pb, load_mw=pb.load_mw[periods], price=pb.price[periods],
                   wind_mw=pb.wind_mw[periods])


@pytest.fixture(scope="module")
def solved(cfg):
    return {c: solve_schedule(problem(cfg, c)) for c in (1, 2, 3)}


def test_schedules_pass_audit(solved):
    for res in solved.values():
        assert res.status == "optimal" and res.audit == []


def test_cost_ordering(solved):
    assert solved[1].total_cost <= solved[2].total_cost + 1e-6
    assert solved[2].total_cost <= solved[3].total_cost + 1e-6


def test_nadir_limit_respected(solved):
    res = solved[3]
    x = np.column_stack([res.u_d, res.n_ie, res.p_pcc])
    pred = forward(toy_net(), x)
    np.testing.assert_allclose(res.nadir_pred, pred, atol=1e-6)
    assert np.all(pred <= 1.0 + 1e-6)
    assert all(math.isnan(v) for v in solved[1].nadir_pred)


def test_ie_only_on_loaded_running_turbines(cfg, solved):
    pb = problem(cfg, 3)
    res = solved[3]
    ready = pb.wind_mw >= pb.alpha * pb.wtg_rated_mw - 1e-9
    assert np.all(res.u_ie <= res.u_w)
    assert np.all(res.u_ie[~ready] == 0)


def test_case2_reserve_covers_import(solved):
    res = solved[2]
    assert np.all(res.p_pcc <= res.r_d.sum(axis=1) + 1e-6)


def test_decomposed_matches_monolithic(cfg):
    pb = problem(cfg, 3, periods=slice(6, 9))
    dec = solve_schedule(pb, method="decomposed")
    mono = solve_schedule(pb, method="monolithic")
    assert dec.objective == pytest.approx(mono.objective, rel=2e-4)
    assert dec.bound <= mono.objective + 1e-6


def test_builtin_backend_agrees(cfg):
    pb = problem(cfg, 2, periods=slice(7, 9))
    a = solve_schedule(pb, backend="builtin")
    b = solve_schedule(pb, backend="highs")
    assert a.objective == pytest.approx(b.objective, rel=1e-6)


def test_presolve_matches_exact(cfg, solved):
    pb = problem(cfg, 3, mode="presolve")
    res = solve_schedule(pb)
    np.testing.assert_array_equal(res.u_d, solved[3].u_d)
    assert res.total_cost == pytest.approx(solved[3].total_cost, rel=5e-3)


def test_presolve_thresholds_toy():
    th = presolve_thresholds(toy_net(), [((1, 0), 0), ((1, 1), 3)], grid_n=4001, limit=1.0)
    # p + 0.2 - 0.1 + 0.1 <= 1 gives p <= 0.8; with IE 3 and both on p + 0.2 - 0.675 + 0.1 <= 1
    assert th[((1, 0), 0)] == pytest.approx(0.8, abs=2e-3)
    assert th[((1, 1), 3)] == pytest.approx(1.375, abs=2e-3)
    assert presolve_thresholds(toy_net(offset=2.0), [((1, 0), 0)])[((1, 0), 0)] is None


def test_missing_surrogate(cfg):
    with pytest.raises(ScheduleDataError, match="surrogate required for case 3"):
        problem(cfg, 3, net=None)


def test_bad_inputs(cfg):
    pb = problem(cfg, 1)
    with pytest.raises(ScheduleDataError):
        replace(pb, price=pb.price[:2])
    with pytest.raises(ScheduleDataError):
        replace(pb, case=4)
    with pytest.raises(ScheduleDataError):
        replace(pb, alpha=0.0)
    with pytest.raises(ScheduleDataError, match="exceeds DSG capacity"):
        build_model(replace(pb, load_mw=pb.load_mw * 10))


def test_infeasible_nadir_limit(cfg):
    with pytest.raises(ScheduleSolveError) as exc:
        solve_schedule(problem(cfg, 3, net=toy_net(offset=2.0)))
    assert exc.value.status == "infeasible"


def test_audit_catches_tampering(cfg, solved):
    pb = problem(cfg, 2)
    res = solved[2]
    bad = replace(res, p_pcc=res.p_pcc + 0.1)
    assert any("imbalance" in line for line in audit_schedule(pb, bad))
    bad = replace(res, u_d=np.zeros_like(res.u_d))
    assert any("no DSG committed" in line for line in audit_schedule(pb, bad))


def test_sweep_monotone(cfg, tmp_path):
    pb = problem(cfg, 3, periods=slice(7, 9))
    limits = [0.6, 0.8, 1.0, 1.5, 3.0]
    on = nadir_sweep(pb, limits, ie_enabled=True)
    off = nadir_sweep(pb, limits, ie_enabled=False)
    cost = lambda pts: [p.cost if math.isfinite(p.cost) else math.inf for p in pts]
    c_on, c_off = cost(on), cost(off)
    assert all(b <= a + 1e-6 for a, b in zip(c_on, c_on[1:]))
    assert all(a <= b + 1e-6 for a, b in zip(c_on, c_off))
    path = tmp_path / "sweep.csv"
    write_sweep(path, on, off)
    rows = list(csv.reader(open(path)))
    assert rows[0] == SWEEP_HEADER and len(rows) == len(limits) + 1


def test_schedule_csv(tmp_path, solved):
    path = tmp_path / "s.csv"
    solved[3].to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == SCHEDULE_HEADER and len(rows) == 1 + len(solved[3].p_pcc)
    total = sum(float(r[-1]) for r in rows[1:])
    assert total == pytest.approx(solved[3].total_cost, rel=1e-6)


def test_case3_binary_count_per_period(cfg):
    from islandsched.surrogate import init_net
    net = init_net([4, 40, 1], np.random.default_rng(0))
    pb = problem(cfg, 3, periods=slice(7, 8), net=net)
    model, _ = build_model(pb)
    assert model.n_binary == 2 + 3 + 3 + 3 + 40


def test_degenerate_zero_price_zero_load(cfg):
    from islandsched.scheduler import ScheduleProblem
    units = cfg.units()
    pb = ScheduleProblem(np.zeros(2), np.zeros(2), np.zeros((2, 3)), np.full(3, 0.4), cfg.network(),
                         units, case=1)
    res = solve_schedule(pb)
    on = res.u_d.sum(axis=1)
    assert np.all(on == 1)
    p_min = np.array([u.p_min for u in units])
    np.testing.assert_allclose(res.p_d.sum(axis=1), (res.u_d * p_min).sum(axis=1), atol=1e-7)
    np.testing.assert_allclose(res.p_pcc, -res.p_d.sum(axis=1), atol=1e-7)
