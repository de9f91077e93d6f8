import numpy as np
import pytest
from hypothesis import given, strategies as st

from quadsim.kinematics import PowerModel, count_stops, crossing_time, energy_proxy, euler_step, integrate


def test_euler_position_uses_pre_step_speed():
    s, v = 0.0, 0.0
    for _ in range(3):
        s, v = euler_step(s, v, 1.0, 1.0)
    assert (s, v) == (3.0, 3.0)


def test_integrate_matches_hand_loop():
    accels = [1.0, -0.5, 2.0, 0.0]
    s, v = integrate(5.0, 2.0, accels, 0.5)
    ref_s, ref_v = [5.0], [2.0]
    for a in accels:
        ref_s.append(ref_s[-1] + ref_v[-1] * 0.5)
        ref_v.append(ref_v[-1] + a * 0.5)
    assert np.array_equal(s, ref_s) and np.array_equal(v, ref_v)


def test_crossing_time_interpolates_inside_step():
    # positions 0, 10, 20: the line at 15 is passed halfway through the second step
    assert crossing_time([0.0, 10.0, 20.0], 15.0, 1.0) == pytest.approx(1.5)
    # touching the line is not crossing it
    assert crossing_time([0.0, 10.0, 10.0], 10.0, 1.0) is None


@given(st.lists(st.floats(0.1, 20.0), min_size=2, max_size=30), st.floats(0.0, 50.0))
def test_crossing_time_reproduces_linear_position(speeds, line):
    dt = 0.5
    s, _ = integrate(0.0, speeds[0], np.diff(speeds) / dt, dt)
    t = crossing_time(s, line, dt)
    if t is None:
        assert s.max() <= line
    else:
        k = int(np.floor(t / dt))
        k = min(k, s.size - 2)
        pos = s[k] + (s[k + 1] - s[k]) * (t / dt - k)
        assert pos == pytest.approx(line, abs=1e-9)


def test_count_stops_counts_zero_speed_episodes():
    assert count_stops([5, 0, 0, 3, 0, 2]) == 2
    assert count_stops([1e-13, 1.0]) == 0
    assert count_stops([]) == 0


def test_energy_proxy_ignores_braking():
    speeds = np.array([10.0, 11.0, 10.0, 10.0])
    accels = np.array([2.0, -2.0, 0.0])
    assert energy_proxy(speeds, accels, 0.5) == pytest.approx(2.0 * 10.0 * 0.5)


def test_power_model_formula():
    m = PowerModel(mass=1000.0, c0=1.0, c1=0.1, c2=0.001)
    assert float(m.power(10.0, 1.0)) == pytest.approx(10.0 + 1.0 + 1.0 + 1.0)
