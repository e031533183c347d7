import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from islandsched.pspb import (F_NOM, DsgUnit, SimulationError, WtgParams, aggregate_dsgs,
                              deadband_input, dfig_residuals, extract_nadir, ie_signal,
                              integrate_dsg, mppt_speed, simulate_batch, simulate_islanding,
                              solve_dfig_algebraic)
from islandsched.ufls import UflsPlan, UflsStage

NO_WIND = [0.0, 0.0, 0.0]
RATED = [0.4, 0.4, 0.4]


@pytest.mark.parametrize("committed,h", [([1, 1], 10 / 3), ([1, 0], 4.0), ([0, 1], 3.0)])
def test_coi_inertia_matches_weighted_average(units, committed, h):
    agg = aggregate_dsgs(units, committed)
    assert agg.h_coi == pytest.approx(h, abs=1e-15)
    assert agg.s_sg == sum(u.base_mva for u, c in zip(units, committed) if c)


def test_aggregate_rejects_empty_commitment(units):
    with pytest.raises(ValueError):
        aggregate_dsgs(units, [0, 0])
    with pytest.raises(ValueError):
        aggregate_dsgs(units, [1])


@pytest.mark.parametrize("bad", [dict(base_mva=0), dict(p_min=2.0), dict(droop_r=0.0)])
def test_dsg_unit_validation(bad):
    kw = dict(base_mva=1.0, inertia_h=4.0, p_min=0.2, p_max=1.0) | bad
    with pytest.raises(ValueError):
        DsgUnit(**kw)


def test_zero_pcc_power_gives_flat_frequency(units):
    tr = simulate_islanding(units, [1, 1], 3, 0.0, 3.0, RATED, horizon_s=3.0)
    assert np.max(np.abs(tr.freq - F_NOM)) < 1e-9
    assert extract_nadir(tr) == 0.0


def test_export_raises_frequency(units):
    tr = simulate_islanding(units, [1, 1], 0, -0.5, 3.0, NO_WIND, horizon_s=2.0)
    assert tr.freq.max() > F_NOM
    assert extract_nadir(tr) == 0.0


def test_steady_state_and_initial_rocof(units):
    cases = [([1, 1], 0.6), ([1, 0], 0.3), ([0, 1], 0.9)]
    res = simulate_batch(units, [c for c, _ in cases], [0] * 3, [dp for _, dp in cases], NO_WIND,
                         horizon_s=20.0, record=True)
    for (committed, dp), tr in zip(cases, res.trajectories):
        agg = aggregate_dsgs(units, committed)
        d_pe = dp / agg.s_sg
        assert F_NOM - tr.freq[-1] == pytest.approx(F_NOM * agg.droop_r * d_pe, rel=1e-3)
        rocof = (tr.freq[1] - tr.freq[0]) / tr.dt
        assert rocof == pytest.approx(-F_NOM * d_pe / (2 * agg.h_coi), rel=5e-3)


def test_inertia_emulation_reduces_nadir(units):
    res = simulate_batch(units, [[1, 1]] * 4, [0, 1, 2, 3], [0.8] * 4, RATED, horizon_s=4.0)
    assert all(b < a for a, b in zip(res.nadir, res.nadir[1:]))


def test_deadband_blocks_inertia_emulation_for_small_events(units):
    # the excursion never leaves the band, so IE must not act at all
    res = simulate_batch(units, [[1, 1]] * 2, [0, 3], [0.02] * 2, RATED, horizon_s=3.0, record=True)
    a, b = res.trajectories
    assert extract_nadir(a) < 0.15
    np.testing.assert_allclose(a.freq, b.freq, atol=1e-12)


def test_batch_matches_single_runs(units):
    cases = [([1, 1], 0, 0.5), ([1, 0], 2, 0.3), ([0, 1], 3, -0.4)]
    res = simulate_batch(units, [c[0] for c in cases], [c[1] for c in cases],
                         [c[2] for c in cases], RATED, horizon_s=2.0)
    for b, (c, n, p) in enumerate(cases):
        single = extract_nadir(simulate_islanding(units, c, n, p, 3.0, RATED, horizon_s=2.0))
        assert res.nadir[b] == pytest.approx(single, abs=1e-12)
    assert not res.failed.any()


def test_batch_input_validation(units):
    with pytest.raises(ValueError):
        simulate_batch(units, [[1, 1]], [0, 1], [0.1], RATED)
    with pytest.raises(ValueError):
        simulate_batch(units, [[1, 1]], [3], [0.1], [0.4, 0.0, 0.0])


def test_dfig_algebraic_residuals_vanish():
    p = WtgParams()
    alg = solve_dfig_algebraic(p, 1.0, 1.1, 0.02 + 0.05j)
    assert np.max(np.abs(dfig_residuals(alg, p, 1.0, 1.1))) < 1e-12


def test_simulation_keeps_machine_algebra_consistent(units):
    tr = simulate_islanding(units, [1, 1], 3, 0.6, 3.0, RATED, check_residuals=True, horizon_s=2.0)
    assert tr.max_residual < 1e-9


def test_turbines_start_at_their_scheduled_output(units):
    tr = simulate_islanding(units, [1, 1], 0, 0.3, 3.0, [0.4, 0.25, 0.0], horizon_s=0.01)
    assert tr.p_wtg[0] == pytest.approx(0.65, abs=1e-9)


def test_power_balance_holds_along_trajectory(units):
    tr = simulate_islanding(units, [1, 1], 2, 0.6, 3.0, RATED, t_island=0.5, horizon_s=2.0)
    n0 = int(round(tr.t_island / tr.dt))
    # diesel picks up what the PCC and turbines no longer supply
    lhs = tr.p_dsg[n0 + 1:] - tr.p_dsg[0]
    rhs = 0.6 - (tr.p_wtg[n0 + 1:] - tr.p_wtg[0])
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
    assert np.all(tr.freq[:n0 + 1] == F_NOM)


def test_integrate_dsg_reproduces_no_wind_run(units):
    tr = simulate_islanding(units, [1, 1], 0, 0.7, 3.0, NO_WIND, t_island=0.2, horizon_s=3.0)
    f = integrate_dsg(tr.dsg, tr.d_pe, tr.dt, start=int(round(0.2 / tr.dt)))
    assert np.sqrt(np.mean((f - tr.freq) ** 2)) < 1e-9


def test_mppt_speed_curve():
    assert mppt_speed(0.0) == pytest.approx(0.51)
    assert mppt_speed(1.0) == pytest.approx(1.2)
    assert mppt_speed(0.5) == pytest.approx(-0.67 * 0.25 + 0.71 + 0.51)
    with pytest.raises(ValueError):
        mppt_speed(-0.1)


def test_deadband_input():
    db = (59.85, 65.0)
    assert deadband_input(60.0, db) == 0.0
    assert deadband_input(66.0, db) == 0.0
    assert deadband_input(59.5, db) == pytest.approx(-0.35)


def test_ie_signal_washes_out_a_held_step():
    p = WtgParams()
    cmd, x = ie_signal(59.5, 0.0, 1e-3, p)
    assert cmd > 0
    for _ in range(200):
        cmd, x = ie_signal(59.5, x, 1e-3, p)
    assert abs(cmd) < 1e-6
    assert ie_signal(60.0, 0.0, 1e-3, p)[0] == 0.0
    with pytest.raises(ValueError):
        ie_signal(60.0, 0.0, 0.0, p)


def test_wtg_params_validate_deadband():
    with pytest.raises(ValueError):
        WtgParams(deadband=(60.5, 65.0))


@settings(max_examples=10, deadline=None)
@given(dp=st.lists(st.floats(0.05, 1.5), min_size=6, max_size=6), n_ie=st.integers(0, 3))
def test_nadir_monotone_in_disturbance(units, dp, n_ie):
    dp = sorted(dp)
    res = simulate_batch(units, [[1, 1]] * 6, [n_ie] * 6, dp, RATED, horizon_s=2.0)
    assert np.all(np.diff(res.nadir) >= -1e-9)


def test_ufls_sheds_in_stage_order(units):
    plan = UflsPlan((UflsStage(0.5, 0.05, (1,)), UflsStage(0.7, 0.05, (2,))), {1: 0.1, 2: 0.1})
    tr = simulate_islanding(units, [1, 0], 0, 0.8, 3.0, NO_WIND, ufls=plan, horizon_s=3.0)
    assert tr.stages_triggered == [0, 1]
    assert tr.stage_times[0] <= tr.stage_times[1]
    no = simulate_islanding(units, [1, 0], 0, 0.8, 3.0, NO_WIND, horizon_s=3.0)
    assert extract_nadir(tr) < extract_nadir(no)
    assert tr.p_shed[-1] == pytest.approx(0.6)


def test_trajectory_csv(tmp_path, units):
    tr = simulate_islanding(units, [1, 1], 0, 0.0, 3.0, RATED, horizon_s=0.01)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t_s,freq_hz,p_dsg_mw,p_wtg_mw,p_pcc_mw"
    assert len(lines) == 12
    assert all(l.split(",")[1] == "60.000000" for l in lines[1:])


def test_frozen_steady_state_value(units):
    res = simulate_batch(units, [[1, 1]], [0], [0.6], NO_WIND, horizon_s=20.0, record=True)
    assert F_NOM - res.trajectories[0].freq[-1] == pytest.approx(0.600, abs=6e-3)


def test_collapse_is_flagged(units):
    res = simulate_batch(units, [[1, 0], [1, 1]], [0, 0], [1.9, 0.6], NO_WIND, horizon_s=10.0)
    assert res.nadir[0] > 5.0 and res.unstable[0]
    assert not res.unstable[1] and not res.failed.any()


def test_mppt_frozen_values():
    assert mppt_speed(0.5) == pytest.approx(1.0525, abs=1e-12)
    assert mppt_speed(1.3) == 1.2


def test_ie_signal_ramp_response():
    # a steady ramp through a washout settles at gain times the ramp rate
    p = WtgParams()
    dt, rate = 1e-4, -0.5
    x, f = 0.0, p.deadband[0]
    for _ in range(int(0.2 / dt)):
        f += rate * dt
        cmd, x = ie_signal(f, x, dt, p)
    assert cmd == pytest.approx(p.ie_gain * 0.5, rel=1e-2)
