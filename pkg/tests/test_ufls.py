import pytest

from islandsched.ufls import UflsPlan, UflsStage, stage_order_ok


def test_default_plan_layout():
    plan = UflsPlan.default({b: 0.01 * b for b in range(1, 34)})
    assert [s.threshold_hz for s in plan.stages] == [1.0, 1.2]
    assert plan.stages[0].shed_buses == (9, 10, 11)
    assert plan.stages[1].shed_buses == (12, 13, 14)
    assert plan.stages[0].delay_s == pytest.approx(14 / 60)
    assert plan.shed_fractions() == pytest.approx([0.30, 0.39])
    assert plan.shed_mw(2.0) == pytest.approx([0.60, 0.78])


def test_thresholds_must_increase():
    with pytest.raises(ValueError):
        UflsPlan((UflsStage(1.2, 0.1, (1,)), UflsStage(1.0, 0.1, (2,))))
    with pytest.raises(ValueError):
        UflsPlan((UflsStage(1.0, -0.1, (1,)),))


def test_plan_without_shares_cannot_size_sheds():
    with pytest.raises(ValueError):
        UflsPlan.default().shed_fractions()


@pytest.mark.parametrize("times,ok", [
    ([None, None], True), ([0.3, None], True), ([0.3, 0.5], True), ([0.3, 0.3], True),
    ([None, 0.4], False), ([0.5, 0.3], False),
])
def test_stage_order(times, ok):
    assert stage_order_ok(times) is ok
