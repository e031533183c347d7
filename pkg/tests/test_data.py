import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from islandsched.data import (Dataset, Forecast, ForecastRow, Line, NetworkModel, Scenario,
                              enumerate_scenarios, generate_dataset, load_forecast, load_network,
                              split_indices, wind_power)


PUBLISHED = [
    (2.210, 12.3, 8.65), (2.197, 11.8, 8.11), (2.249, 12.2, 8.25), (2.210, 10.4, 8.10),
    (2.275, 10.5, 8.14), (2.405, 10.3, 8.13), (2.600, 9.3, 8.34), (3.159, 9.7, 9.35),
    (3.302, 8.5, 12.00), (3.380, 9.2, 9.19), (3.471, 8.7, 12.30), (3.367, 7.9, 20.70),
    (3.367, 9.1, 26.82), (3.315, 10.2, 27.35), (3.406, 11.3, 13.81), (3.445, 12.0, 17.31),
    (3.315, 11.7, 16.42), (3.289, 11.5, 9.83), (3.250, 9.4, 8.63), (3.315, 9.6, 8.87),
    (3.380, 10.1, 8.35), (3.224, 11.3, 16.44), (2.960, 12.2, 16.19), (2.392, 11.7, 8.87),
]


def test_forecast_matches_published_table():
    fc = load_forecast()
    assert [(r.load_mw, r.wind_raw, r.price_ct_per_kwh) for r in fc.periods] == PUBLISHED


def test_forecast_validation():
    with pytest.raises(ValueError):
        Forecast((ForecastRow(1.0, 5.0, 8.0),) * 23)
    with pytest.raises(ValueError):
        Forecast((ForecastRow(-1.0, 5.0, 8.0),) * 24)


def test_wind_curve():
    assert wind_power(2.0) == 0.0
    assert wind_power(30.0) == 0.0
    assert wind_power(9.5) == pytest.approx(0.4)
    assert wind_power(12.0) == pytest.approx(0.4)
    assert wind_power(6.25) == pytest.approx(0.4 * 0.125)
    with pytest.raises(ValueError):
        wind_power(-1.0)


@given(st.floats(0, 30), st.floats(0, 30))
def test_wind_curve_monotone_below_cut_out(a, b):
    lo, hi = sorted((a, b))
    if hi <= 25.0:
        assert wind_power(lo) <= wind_power(hi) + 1e-15


def test_network_is_33_bus_radial():
    nw = load_network()
    assert len(nw.buses) == 33 and len(nw.lines) == 32
    assert sum(nw.p_share.values()) == pytest.approx(1.0)
    assert nw.dsg_bus == [1, 15] and nw.wtg_bus == [22, 25, 31]
    p, q = nw.bus_load(3.0)
    assert sum(p.values()) == pytest.approx(3.0)


def test_network_rejects_loops_and_islands():
    lines = [Line(1, 1, 2, 0.01, 0.01, 1.0), Line(2, 3, 2, 0.01, 0.01, 1.0)]
    with pytest.raises(ValueError):
        NetworkModel([1, 2, 3], {}, {}, lines, [1], [2])
    lines = [Line(1, 1, 2, 0.01, 0.01, 1.0), Line(2, 1, 4, 0.01, 0.01, 1.0)]
    with pytest.raises(ValueError):
        NetworkModel([1, 2, 3], {}, {}, lines, [1], [2])


def test_scenarios_enumeration():
    combos = enumerate_scenarios(2, 3)
    assert len(combos) == 12
    assert all(any(u) for u, _ in combos)
    assert {n for _, n in combos} == {0, 1, 2, 3}
    with pytest.raises(ValueError):
        enumerate_scenarios(0)


def test_scenario_validation():
    assert Scenario((1, 0), 2, 0.5).features == [1.0, 0.0, 2.0, 0.5]
    with pytest.raises(ValueError):
        Scenario((0, 0), 0, 0.5)
    with pytest.raises(ValueError):
        Scenario((1, 1), 0, 2.5)


@settings(max_examples=30)
@given(st.integers(1, 500), st.integers(0, 2**31))
def test_split_is_a_partition(n, seed):
    tr, te = split_indices(n, seed)
    assert len(tr) == round(0.8 * n)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(n))


def test_small_dataset_roundtrip(tmp_path, units):
    ds = generate_dataset(units, n_pcc_draws=3, seed=5, horizon_s=2.0)
    assert len(ds) == 36 and ds.n_failed == 0
    assert ds.feature_names == ["u_d1", "u_d2", "n_ie", "p_pcc_mw"]
    # rows are ordered (draw, combo): each block of 12 shares one PCC draw
    assert np.all(ds.x[:12, 3] == ds.x[0, 3])
    assert np.all((ds.x[:, 3] >= -2) & (ds.x[:, 3] <= 2))
    assert np.all(ds.y >= 0)
    ds.to_csv(tmp_path / "d.csv")
    back = Dataset.from_csv(tmp_path / "d.csv", seed=5)
    np.testing.assert_allclose(back.x, ds.x, atol=1e-9)
    np.testing.assert_allclose(back.y, ds.y, atol=1e-9)
    np.testing.assert_array_equal(back.test_idx, ds.test_idx)
    again = generate_dataset(units, n_pcc_draws=3, seed=5, horizon_s=2.0)
    np.testing.assert_array_equal(again.y, ds.y)


def test_wind_curve_documented_example():
    # the curve's own example uses an 11 m/s rated speed
    assert wind_power(7.0, v_rated=11.0) == pytest.approx(0.05)
    assert wind_power(12.3, v_rated=11.0) == pytest.approx(0.4)
    assert wind_power(12.3) == pytest.approx(0.4)
