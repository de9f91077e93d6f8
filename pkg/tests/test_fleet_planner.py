import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadsim.fleet_planner import (
    FleetScenario,
    InfeasibleError,
    ScenarioError,
    Signal,
    VehicleSpec,
    assign_windows,
    benchmark_controller,
    compare,
    green_at,
    plan_fleet,
    plan_vehicle,
    reach_interval,
    write_plans_csv,
)

from oracles import euler_positions, first_crossing, grid_profiles

ALWAYS = Signal(300.0, 60.0, ((0.0, 60.0),))


def scenario(vehicles, signals=(), **kw):
    kw.setdefault("horizon_steps", 120)
    return FleetScenario(tuple(VehicleSpec(*v) if isinstance(v, tuple) else v for v in vehicles), tuple(signals), **kw)


def car(position, speed=12.0, **kw):
    return VehicleSpec(position, speed, **kw)


def crossings_green(sc, plans):
    return all(green_at(sc.signals[i], t) for p in plans for i, t in p.crossing_times.items())


# signals -----------------------------------------------------------------

def test_green_at_examples():
    sig = Signal(100.0, 60.0, ((0.0, 30.0),))
    assert green_at(sig, 0.0)
    assert not green_at(sig, 30.0)
    assert green_at(sig, 61.0)


@given(st.floats(0, 1e4), st.floats(0, 59), st.integers(0, 50))
def test_green_at_is_periodic(t, phase, k):
    sig = Signal(100.0, 60.0, ((5.0, 20.0), (40.0, 55.0)), phase)
    u = (t - phase) % 60.0
    assert green_at(sig, t) == (5 <= u < 20 or 40 <= u < 55)


# reachability and windows --------------------------------------------------

REACH = scenario([car(0.0, 10.0, v_max=15.0, a_min=-3.0, a_max=2.0, v_ref=10.0)],
                 [Signal(150.0, 30.0, ((0.0, 10.0),))], dt=1.0)


def test_reach_interval_matches_extreme_profiles():
    spec = REACH.vehicles[0]
    lo, hi = reach_interval(0.0, 10.0, spec, 150.0, 1.0, 1.0)
    fast, slow, v_f, v_s = [], [], 10.0, 10.0
    for _ in range(400):
        a = min(2.0, 15.0 - v_f)
        fast.append(a)
        v_f += a
        b = max(-3.0, 1.0 - v_s)
        slow.append(b)
        v_s += b
    assert lo == pytest.approx(first_crossing(euler_positions(0, 10, fast, 1.0)[0], 150.0, 1.0), abs=1e-12)
    assert hi == pytest.approx(first_crossing(euler_positions(0, 10, slow, 1.0)[0], 150.0, 1.0), abs=1e-12)


def test_reach_interval_contains_every_grid_crossing():
    spec = REACH.vehicles[0]
    lo, hi = reach_interval(0.0, 10.0, spec, 150.0, 1.0, 1.0)
    times = []
    for seq in grid_profiles(10.0, np.linspace(-3, 2, 5), 7, 1.0, 15.0, 1.0):
        # hold the final speed until the line is passed
        tail = np.zeros(200)
        s, _ = euler_positions(0.0, 10.0, np.concatenate([seq, tail]), 1.0)
        times.append(first_crossing(s, 150.0, 1.0))
    assert lo - 1e-9 <= min(times) and max(times) <= hi + 1e-9


def test_first_intersecting_window_is_selected():
    (w,) = assign_windows(REACH, 0)
    lo, hi = w.reach_lo, w.reach_hi
    k = 0
    while not (30 * k <= hi and 30 * k + 10 > lo):
        k += 1
    assert (w.start, w.end) == (30.0 * k, 30.0 * k + 10)


def test_narrow_window_is_found_exactly():
    lo, hi = reach_interval(0.0, 10.0, REACH.vehicles[0], 150.0, 1.0, 1.0)
    start = lo + 0.37 * (hi - lo)
    sig = Signal(150.0, 1000.0, ((start, start + 1e-6),))
    sc = scenario(REACH.vehicles, [sig], dt=1.0)
    (w,) = assign_windows(sc, 0)
    assert w.start == pytest.approx(start)


def test_always_green_selects_window_zero():
    (w,) = assign_windows(scenario([car(0.0)], [ALWAYS], dt=0.5), 0)
    assert w.window_index == 0 and math.isinf(w.end)


def test_unreachable_window_is_infeasible():
    # the only green opens after the slowest legal arrival
    sig = Signal(50.0, 10_000.0, ((5000.0, 5001.0),))
    with pytest.raises(InfeasibleError):
        assign_windows(scenario([car(0.0)], [sig]), 0)


# profile optimization ------------------------------------------------------

def test_no_signals_gives_zero_accel():
    p = plan_vehicle(scenario([car(0.0)], dt=0.5, horizon_steps=40), 0)
    assert np.allclose(p.accels, 0, atol=1e-7) and p.cost == pytest.approx(0, abs=1e-10)


def test_always_green_gives_constant_profile():
    p = plan_vehicle(scenario([car(0.0)], [ALWAYS], dt=0.5), 0)
    assert np.allclose(p.speeds, 12.0, atol=1e-7)


def test_delayed_arrival_beats_coarse_grid():
    v_ref, dt, K, line, t_open = 10.0, 1.0, 6, 40.0, 5.0
    sig = Signal(line, 200.0, ((t_open, 150.0),))
    sc = scenario([car(0.0, v_ref, v_ref=v_ref)], [sig], dt=dt, horizon_steps=K)
    plan = plan_vehicle(sc, 0)
    assert plan.speeds.min() < v_ref  # slows for the light
    best = math.inf
    t_lo = t_open + 0.5 * dt
    for seq in grid_profiles(v_ref, np.linspace(-3, 2, 5), K, dt, 16.0, 1.0):
        s, v = euler_positions(0.0, v_ref, seq, dt)
        k = int(t_lo // dt)
        pos = s[k] + v[k] * (t_lo - k * dt)
        if pos > line - 1e-3:
            continue
        best = min(best, np.sum((v[1:] - v_ref) ** 2) + 0.5 * np.sum(seq**2))
    assert math.isfinite(best)
    assert plan.cost <= best + 1e-9


# fleets --------------------------------------------------------------------

def test_single_vehicle_always_green_fleet():
    (p,) = plan_fleet(scenario([car(0.0)], [ALWAYS]))
    assert not p.infeasible and np.allclose(p.speeds, 12.0, atol=1e-7)


def test_follower_is_translated_leader():
    sc = scenario([car(0.0), car(-10.0)], [ALWAYS], d_min=10.0)
    lead, follow = plan_fleet(sc)
    assert not follow.infeasible
    assert np.allclose(lead.positions - follow.positions, 10.0, atol=1e-6)
    assert np.allclose(follow.speeds, lead.speeds, atol=1e-6)


def test_corridor_invariants(scenarios_dir):
    sc = FleetScenario.load(scenarios_dir / "corridor.json")
    plans = plan_fleet(sc)
    assert not any(p.infeasible for p in plans)
    assert sum(len(p.crossing_times) for p in plans) == 6 and crossings_green(sc, plans)
    assert min(p.speeds.min() for p in plans) >= sc.v_floor - 1e-9
    for p in plans:
        assert p.replay_error() <= 1e-9
    by_id = {p.vehicle_id: p for p in plans}
    for vid, leader in sc.leaders().items():
        if leader is not None:
            assert np.min(by_id[leader].positions - by_id[vid].positions) >= sc.d_min - 1e-6
    bench = benchmark_controller(sc)
    assert sum(p.energy for p in plans) <= sum(p.energy for p in bench)


@settings(max_examples=8)
@given(st.floats(-60, -20), st.floats(8, 14), st.floats(0, 39), st.floats(10, 25))
def test_random_two_vehicle_corridors(gap, speed, phase, green):
    sc = scenario([car(0.0, speed), car(gap, speed)], [Signal(150.0, 40.0, ((0.0, green),), phase)],
                  dt=0.5, horizon_steps=100)
    plans = plan_fleet(sc)
    for p in plans:
        assert p.replay_error() <= 1e-9
        assert np.all(p.speeds >= 0) and np.all(p.speeds <= 16 + 1e-9)
        if not p.infeasible:
            assert crossings_green(sc, [p]) and p.speeds.min() > 0
    if not plans[1].infeasible:
        assert np.min(plans[0].positions - plans[1].positions) >= sc.d_min - 1e-6


# benchmark -----------------------------------------------------------------

def test_benchmark_always_green_is_constant():
    for p in benchmark_controller(scenario([car(0.0), car(-30.0)], [ALWAYS])):
        assert np.all(p.speeds == 12.0) and np.all(p.accels == 0.0)


def test_benchmark_waits_at_red():
    # braking at 2 m/s^2 from 10 m/s brings the car to rest at the line near t = 12.5 s
    sig = Signal(100.0, 100.0, ((18.0, 60.0),))
    (p,) = benchmark_controller(scenario([car(0.0, 10.0, v_ref=10.0)], [sig], dt=0.5, horizon_steps=80))
    stopped = p.speeds == 0.0
    assert stopped.sum() * 0.5 >= 5.0
    assert np.all(p.positions[stopped] <= 100.0) and np.all(p.positions[stopped] >= 99.9)
    assert p.stops == 1 and green_at(sig, p.crossing_times[0])


def test_benchmark_stops_when_red_starts_on_arrival():
    # cruising arrival is exactly t = 10, where [0, 10) has just closed
    sig = Signal(100.0, 60.0, ((0.0, 10.0),))
    (p,) = benchmark_controller(scenario([car(0.0, 10.0, v_ref=10.0)], [sig], dt=0.5, horizon_steps=80))
    assert p.stops >= 1


def test_benchmark_replays_exactly(scenarios_dir):
    for p in benchmark_controller(FleetScenario.load(scenarios_dir / "corridor.json")):
        assert p.replay_error() <= 1e-9


# scenario io ---------------------------------------------------------------

@pytest.mark.parametrize("doc,match", [
    ({"dt": 0}, "dt"),
    ({"d_min": -1}, "d_min"),
    ({"vehicles": [{"position": 0, "speed": 20}]}, "speed"),
    ({"vehicles": [{"position": 0, "speed": 5, "v_ref": 30}]}, "v_ref"),
    ({"signals": [{"position": 10, "cycle": 30, "greens": [[0, 40]]}]}, "green"),
    ({"signals": [{"position": 10, "cycle": 30, "greens": [[0, 5]]},
                  {"position": 5, "cycle": 30, "greens": [[0, 5]]}]}, "increasing"),
    ({"vehicles": [{"pos": 0}]}, "malformed"),
])
def test_invalid_scenarios(doc, match):
    with pytest.raises(ScenarioError, match=match):
        FleetScenario.from_dict(doc)


def test_malformed_json_reports_location(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dt": 0.5,\n "vehicles": [}')
    with pytest.raises(ScenarioError, match="line 2 column"):
        FleetScenario.load(bad)
    with pytest.raises(ScenarioError):
        FleetScenario.load(tmp_path / "missing.json")


def test_round_trip_and_hash(scenarios_dir):
    sc = FleetScenario.load(scenarios_dir / "corridor.json")
    again = FleetScenario.from_dict(json.loads(sc.canonical_json()))
    assert again == sc and again.config_hash() == sc.config_hash()


def test_plans_csv_and_comparison(tmp_path, scenarios_dir):
    sc = FleetScenario.load(scenarios_dir / "always_green.json")
    mpc, bench = plan_fleet(sc), benchmark_controller(sc)
    path = write_plans_csv(mpc, tmp_path / "p.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "vehicle_id", "pos", "speed", "accel"]
    assert len(rows) == 1 + sum(p.speeds.size for p in mpc)
    report = compare(sc, mpc, bench)
    assert report["totals"]["mpc"]["stops"] == 0 and report["config_hash"] == sc.config_hash()
