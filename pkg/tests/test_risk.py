import math

import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from pedsafe.context import Motion
from pedsafe.risk import (Action, NoVehicles, PedestrianRiskState, ReactionModel, RiskConfig, VehicleKinematics,
                          ZeroSpeed, collision_probability, decide, decide_standalone, reaction_exceedance,
                          resistance_force, skid_distance, skid_time, time_to_cross_ped, user_warning_time)

from oracles import lognormal_sf


def car(speed=10.0, t_c=5.0, **kw):
    return VehicleKinematics("car", speed, t_c, **kw)


def test_time_to_cross():
    assert time_to_cross_ped(0.0, 1.0) == 0.0
    assert time_to_cross_ped(10.0, 2.0) == 5.0
    with pytest.raises(ZeroSpeed):
        time_to_cross_ped(10.0, 0.0)


def test_user_warning_time():
    assert user_warning_time([5, 8], 3) == 2
    assert user_warning_time([5], 5) == 0
    assert user_warning_time([4], 7) == -3
    with pytest.raises(NoVehicles):
        user_warning_time([], 1)


def test_resistance_force_examples():
    assert resistance_force(car(), 0.0) == pytest.approx(10987.2, abs=0.01)
    assert resistance_force(car(), 10.0) == pytest.approx(11028.71, abs=0.01)
    assert resistance_force(car(mass=0.0), 10.0) == pytest.approx(0.5 * 1.23 * 2.7 * 0.25 * 100)


def test_skid_examples():
    assert skid_distance(car()) == pytest.approx(6.347, abs=1e-3)
    assert skid_time(car()) == pytest.approx(0.6347, abs=1e-4)
    assert skid_time(car(speed=1e-6)) < 1e-6
    with pytest.raises(ZeroSpeed):
        skid_time(car(speed=0.0))


def test_mass_cancels_without_drag():
    a = car(drag=0.0)
    b = car(drag=0.0, mass=2800.0)
    assert skid_time(a) == pytest.approx(skid_time(b), rel=1e-12)


@settings(max_examples=100)
@given(st.floats(0.5, 40), st.floats(500, 4000), st.floats(1, 4), st.floats(0.1, 0.5),
       st.floats(0.3, 1.0), st.floats(0, 500))
def test_skid_time_closed_form(v, m, area, cd, mu, f0):
    k = VehicleKinematics("c", v, 1.0, mass=m, area=area, drag=cd, mu_k=mu, f0=f0)
    f = mu * m * 9.81 + 1.23 * area * cd * v * v / 2 + f0
    assert skid_time(k) == pytest.approx(m * v / (2 * f), rel=1e-9)


def test_reaction_exceedance_examples():
    assert reaction_exceedance(math.exp(1.14)) == pytest.approx(0.5, abs=1e-12)
    assert reaction_exceedance(0.0) == 1.0
    assert reaction_exceedance(-3.0) == 1.0
    assert reaction_exceedance(math.exp(1.46)) == pytest.approx(0.15866, abs=1e-5)


@pytest.mark.parametrize("x", [0.5, 2.0, 3.1, 4.3, 8.0])
def test_exceedance_matches_numeric_integration(x):
    assert reaction_exceedance(x) == pytest.approx(lognormal_sf(x, 1.14, 0.32), abs=1e-6)


@pytest.mark.parametrize("x", [0.5, 1.5, 3.0, 5.0, 12.0])
def test_density_and_exceedance_consistent(x):
    rm = ReactionModel()
    cdf, _ = integrate.quad(rm.density, 0, x, limit=200)
    assert reaction_exceedance(x, rm) + cdf == pytest.approx(1.0, abs=1e-6)
    assert reaction_exceedance(x, rm) == pytest.approx(stats.lognorm.sf(x, 0.32, scale=math.exp(1.14)), abs=1e-12)


def test_collision_probability_examples():
    assert collision_probability(math.exp(1.14) + 0.5, 0.3, 0.2) == pytest.approx(0.5, abs=1e-9)
    assert collision_probability(1.0, 0.5, 0.5) == 1.0
    assert collision_probability(10.0, 0.0, 0.0) < 0.001


grid = st.floats(-5, 20)


@given(grid, grid, st.floats(0, 2), st.floats(0, 2))
def test_collision_probability_monotone(w1, w2, delay, skid):
    lo, hi = sorted((w1, w2))
    assert collision_probability(hi, delay, skid) <= collision_probability(lo, delay, skid)
    assert collision_probability(w1, delay, skid) <= collision_probability(w1, delay + 0.1, skid)
    assert collision_probability(w1, delay, skid) <= collision_probability(w1, delay, skid + 0.1)


def ped(viewing=True, motion=Motion.WALKING, d_p=4.0, ignored=0):
    return PedestrianRiskState(d_p, motion, viewing, 1.4, ignored)


def test_decide_not_viewing():
    assert decide(ped(viewing=False), [car()], 0.04).action is Action.NONE


def test_decide_stationary():
    assert decide(ped(motion=Motion.STATIONARY), [car()], 0.04).action is Action.NONE


def test_decide_alerts_pedestrian_then_driver():
    # d_p 4 m at 2 m/s -> t_p 2 s; t_c 5 s -> t_warning 3 s.
    cfg = RiskConfig(threshold=0.5)
    d = decide(ped(), [car(t_c=5.0)], 0.04, cfg=cfg)
    expected = collision_probability(3.0, 0.04, skid_time(car()))
    assert d.action is Action.ALERT_PEDESTRIAN
    assert d.t_warning == pytest.approx(3.0)
    assert d.probability == pytest.approx(expected)
    assert expected > 0.5
    assert decide(ped(ignored=3), [car(t_c=5.0)], 0.04, cfg=cfg).action is Action.ALERT_DRIVER


def test_decide_below_threshold_reports_probability():
    d = decide(ped(), [car(t_c=20.0)], 0.04)
    assert d.action is Action.NONE and d.probability < 0.5 and d.t_warning == pytest.approx(18.0)


def test_decide_margin_rule():
    # t_p = 50 s, vehicles gone long before.
    assert decide(ped(d_p=100.0), [car(t_c=3.0)], 0.04).probability is None


def test_decide_uses_earliest_vehicle():
    a = VehicleKinematics("a", 10.0, 9.0)
    b = VehicleKinematics("b", 10.0, 4.0)
    d = decide(ped(), [a, b], 0.04, cfg=RiskConfig(threshold=0.0))
    assert d.vehicle == "b" and d.t_warning == pytest.approx(2.0)


def test_decide_without_vehicles():
    assert decide(ped(), [], 0.04).action is Action.NONE


@given(st.sampled_from([1, 2, 3]), st.booleans(), st.booleans(), st.booleans(), st.booleans())
def test_standalone_levels_nested(level, in_zone, screen, viewing, toward):
    alerts = {lv: decide_standalone(lv, in_zone, screen, viewing, toward).action is Action.ALERT_PEDESTRIAN
              for lv in (1, 2, 3)}
    assert alerts[1] <= alerts[2] <= alerts[3]


def test_standalone_examples():
    assert decide_standalone(3, True, True, False, False).action is Action.ALERT_PEDESTRIAN
    assert decide_standalone(2, True, True, False, False).action is Action.NONE
    assert decide_standalone(1, True, True, True, False).action is Action.NONE
    assert decide_standalone(1, True, True, True, True).action is Action.ALERT_PEDESTRIAN
    with pytest.raises(ValueError):
        decide_standalone(4, True, True, True, True)
