"""Longitudinal point-mass kinematics shared by the planner and the world."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# speeds this close to zero after an update are snapped to exactly zero
SPEED_SNAP = 1e-12


@dataclass(frozen=True)
class PowerModel:
    """Tractive power proxy in kW: m*a*v + c0 + c1*v + c2*v^3.

    Defaults describe a 1.5 t passenger car: 0.5 kW auxiliaries, rolling
    resistance ~0.147 kW per m/s, aerodynamic term 0.5*rho*CdA/1000.
    """

    mass: float = 1500.0
    c0: float = 0.5
    c1: float = 0.147
    c2: float = 4.2e-4

    def power(self, v, a):
        v = np.asarray(v, dtype=float)
        a = np.asarray(a, dtype=float)
        return self.mass * a * v / 1000.0 + self.c0 + self.c1 * v + self.c2 * v**3


def euler_step(s: float, v: float, a: float, dt: float, v_max: float = np.inf) -> tuple[float, float]:
    """Explicit Euler: position advances with the pre-step speed."""
    s_next = s + v * dt
    v_next = v + a * dt
    if abs(v_next) < SPEED_SNAP:
        v_next = 0.0
    v_next = min(max(v_next, 0.0), v_max)
    return s_next, v_next


def integrate(s0: float, v0: float, accels, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Positions and speeds (length K+1) induced by K accelerations, no clamping."""
    accels = np.asarray(accels, dtype=float)
    n = accels.size
    s = np.empty(n + 1)
    v = np.empty(n + 1)
    s[0], v[0] = s0, v0
    for k in range(n):
        s[k + 1] = s[k] + v[k] * dt
        v[k + 1] = v[k] + accels[k] * dt
    return s, v


def energy_proxy(speeds, accels, dt: float) -> float:
    """Tractive work surrogate: sum of max(0, a_k) * v_k * dt."""
    speeds = np.asarray(speeds, dtype=float)[: len(accels)]
    return float(np.sum(np.maximum(0.0, np.asarray(accels, dtype=float)) * speeds) * dt)


def crossing_time(positions, line: float, dt: float) -> float | None:
    """First time the position strictly exceeds ``line``, interpolated within the step.

    Under explicit Euler the position moves linearly inside a step at the
    pre-step speed, so linear interpolation is exact.
    """
    positions = np.asarray(positions, dtype=float)
    above = np.flatnonzero(positions > line)
    if above.size == 0:
        return None
    k1 = int(above[0])
    if k1 == 0:
        return 0.0
    k = k1 - 1
    ds = positions[k1] - positions[k]
    return float((k + (line - positions[k]) / ds) * dt)


def count_stops(speeds) -> int:
    """Number of distinct episodes during which speed is exactly zero."""
    zero = np.asarray(speeds) == 0.0
    if zero.size == 0:
        return 0
    starts = zero & ~np.concatenate(([False], zero[:-1]))
    return int(starts.sum())
