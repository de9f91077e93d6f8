"""Speed planning for a fleet on a signalized corridor.

Two layers: a discrete choice of which green window each vehicle targets at
each signal, then a continuous speed-profile optimization that meets those
windows without ever stopping. A stop-at-red benchmark controller is
provided for comparison and as the fallback when a plan is infeasible.

Kinematics are explicit Euler with the position advancing on the pre-step
speed: s[k+1] = s[k] + v[k]*dt, v[k+1] = v[k] + a[k]*dt.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .kinematics import PowerModel, count_stops, crossing_time, energy_proxy, integrate
from .qp import solve_qp

FEAS_TOL = 1e-9
HEADWAY_TOL = 1e-6
# constraint tightening handed to the optimizer so the exact checks pass
ACCEL_SLACK = 1e-6
POSITION_SLACK = 1e-3


class ScenarioError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class VehicleSpec:
    position: float
    speed: float
    v_max: float = 16.0
    a_min: float = -3.0
    a_max: float = 2.0
    v_ref: float = 12.0

    def validate(self):
        if not self.v_max > 0:
            raise ScenarioError("v_max must be positive")
        if not self.a_min < 0 < self.a_max:
            raise ScenarioError("need a_min < 0 < a_max")
        if not 0 < self.v_ref <= self.v_max:
            raise ScenarioError("need 0 < v_ref <= v_max")
        if not 0 <= self.speed <= self.v_max:
            raise ScenarioError("initial speed outside [0, v_max]")


@dataclass(frozen=True)
class Signal:
    """Fixed-time signal; ``greens`` are [start, end) offsets within one cycle."""

    position: float
    cycle: float
    greens: tuple[tuple[float, float], ...]
    phase: float = 0.0

    def validate(self):
        if not self.cycle > 0:
            raise ScenarioError("signal cycle must be positive")
        if not self.greens:
            raise ScenarioError("signal needs at least one green window")
        prev_end = -math.inf
        for start, end in self.greens:
            if not (0 <= start < end <= self.cycle):
                raise ScenarioError(f"green window [{start}, {end}) must lie in [0, {self.cycle}]")
            if start < prev_end:
                raise ScenarioError("green windows must be sorted and disjoint")
            prev_end = end

    @property
    def always_green(self) -> bool:
        return len(self.greens) == 1 and self.greens[0] == (0.0, self.cycle)

    def window(self, m: int, w: int) -> tuple[float, float]:
        """Absolute [start, end) of green window ``w`` in cycle ``m``."""
        base = self.phase + m * self.cycle
        start, end = self.greens[w]
        return base + start, base + end

    def windows_from(self, t: float):
        """Window instances (m, w, start, end) in time order, starting with the one live at or after ``t``."""
        m = math.floor((t - self.phase) / self.cycle) - 1
        while True:
            for w in range(len(self.greens)):
                start, end = self.window(m, w)
                if end > t:
                    yield m, w, start, end
            m += 1


def green_at(signal: Signal, t: float) -> bool:
    """True iff ((t - phase) mod cycle) falls in a green window (half-open)."""
    u = (t - signal.phase) % signal.cycle
    return any(start <= u < end for start, end in signal.greens)


@dataclass(frozen=True)
class FleetScenario:
    vehicles: tuple[VehicleSpec, ...]
    signals: tuple[Signal, ...]
    dt: float = 0.5
    horizon_steps: int = 160
    d_min: float = 10.0
    w_v: float = 1.0
    w_a: float = 0.5
    v_floor: float = 1.0
    comfort_decel: float = 2.0
    stop_buffer: float = 0.01
    replan_interval: int = 10
    power: PowerModel = field(default_factory=PowerModel)
    world: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        object.__setattr__(self, "signals", tuple(self.signals))
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")
        if self.horizon_steps < 1:
            raise ScenarioError("horizon_steps must be >= 1")
        if not self.d_min > 0:
            raise ScenarioError("d_min must be positive")
        if not self.v_floor > 0:
            raise ScenarioError("v_floor must be positive")
        if not self.comfort_decel > 0:
            raise ScenarioError("comfort_decel must be positive")
        if self.replan_interval < 1:
            raise ScenarioError("replan_interval must be >= 1")
        for v in self.vehicles:
            v.validate()
            if self.v_floor > v.v_max:
                raise ScenarioError("v_floor exceeds a vehicle's v_max")
        for s in self.signals:
            s.validate()
        positions = [s.position for s in self.signals]
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ScenarioError("signal positions must be strictly increasing")

    # ordering -----------------------------------------------------------

    def front_to_back(self) -> list[int]:
        """Vehicle ids sorted by decreasing initial position (lower id first on ties)."""
        return sorted(range(len(self.vehicles)), key=lambda i: (-self.vehicles[i].position, i))

    def leaders(self) -> dict[int, int | None]:
        order = self.front_to_back()
        return {vid: (order[k - 1] if k else None) for k, vid in enumerate(order)}

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dt": self.dt,
            "horizon_steps": self.horizon_steps,
            "d_min": self.d_min,
            "weights": {"w_v": self.w_v, "w_a": self.w_a},
            "v_floor": self.v_floor,
            "comfort_decel": self.comfort_decel,
            "stop_buffer": self.stop_buffer,
            "replan_interval": self.replan_interval,
            "power": asdict(self.power),
            "world": self.world,
            "vehicles": [asdict(v) for v in self.vehicles],
            "signals": [
                {"position": s.position, "cycle": s.cycle, "greens": [list(g) for g in s.greens], "phase": s.phase}
                for s in self.signals
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FleetScenario":
        try:
            weights = doc.get("weights", {})
            vehicles = [VehicleSpec(**v) for v in doc.get("vehicles", [])]
            signals = [
                Signal(
                    float(s["position"]),
                    float(s["cycle"]),
                    tuple((float(a), float(b)) for a, b in s["greens"]),
                    float(s.get("phase", 0.0)),
                )
                for s in doc.get("signals", [])
            ]
            return cls(
                vehicles=tuple(vehicles),
                signals=tuple(signals),
                dt=float(doc.get("dt", 0.5)),
                horizon_steps=int(doc.get("horizon_steps", 160)),
                d_min=float(doc.get("d_min", 10.0)),
                w_v=float(weights.get("w_v", 1.0)),
                w_a=float(weights.get("w_a", 0.5)),
                v_floor=float(doc.get("v_floor", 1.0)),
                comfort_decel=float(doc.get("comfort_decel", 2.0)),
                stop_buffer=float(doc.get("stop_buffer", 0.01)),
                replan_interval=int(doc.get("replan_interval", 10)),
                power=PowerModel(**doc.get("power", {})),
                world=dict(doc.get("world", {})),
                name=str(doc.get("name", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"malformed scenario: {exc}") from exc

    @classmethod
    def load(cls, path) -> "FleetScenario":
        """Read a scenario JSON file.

        Raises:
            ScenarioError: unreadable file, invalid JSON (with line/column) or bad values.
        """
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ScenarioError(f"{path}: scenario must be a JSON object")
        return cls.from_dict(doc)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


# --------------------------------------------------------------------------
# plans


@dataclass
class SpeedPlan:
    vehicle_id: int
    dt: float
    accels: np.ndarray
    speeds: np.ndarray
    positions: np.ndarray
    t0: float = 0.0
    crossing_times: dict = field(default_factory=dict)
    windows: list = field(default_factory=list)
    infeasible: bool = False
    controller: str = "mpc"
    cost: float = float("nan")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.speeds.size) * self.dt

    @property
    def stops(self) -> int:
        return count_stops(self.speeds)

    @property
    def energy(self) -> float:
        return energy_proxy(self.speeds, self.accels, self.dt)

    def replay_error(self) -> float:
        """Max deviation between the stored sequences and a fresh integration of the accels."""
        s, v = integrate(self.positions[0], self.speeds[0], self.accels, self.dt)
        return float(max(np.max(np.abs(s - self.positions)), np.max(np.abs(v - self.speeds))))

    def summary(self) -> dict:
        return {
            "vehicle_id": self.vehicle_id,
            "controller": self.controller,
            "infeasible": self.infeasible,
            "stops": self.stops,
            "min_speed": float(self.speeds.min()),
            "energy_proxy": self.energy,
            "crossing_times": {str(k): v for k, v in sorted(self.crossing_times.items())},
        }


def _crossings(scenario: FleetScenario, positions, t0: float) -> dict:
    out = {}
    for i, sig in enumerate(scenario.signals):
        if positions[0] > sig.position:
            continue
        t = crossing_time(positions, sig.position, scenario.dt)
        out[i] = None if t is None else t0 + t
    return out


def _make_plan(scenario, vid, s0, v0, accels, t0, controller, **kw) -> SpeedPlan:
    s, v = integrate(s0, v0, accels, scenario.dt)
    v[np.abs(v) < 1e-12] = 0.0
    return SpeedPlan(
        vehicle_id=vid,
        dt=scenario.dt,
        accels=np.asarray(accels, dtype=float),
        speeds=v,
        positions=s,
        t0=t0,
        crossing_times=_crossings(scenario, s, t0),
        controller=controller,
        **kw,
    )


def write_plans_csv(plans: Sequence[SpeedPlan], path) -> Path:
    """Rows (t, vehicle_id, pos, speed, accel); the last sample of each plan has no accel."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "vehicle_id", "pos", "speed", "accel"])
        for plan in plans:
            for k in range(plan.speeds.size):
                a = plan.accels[k] if k < plan.accels.size else 0.0
                w.writerow([repr(float(plan.t0 + k * plan.dt)), plan.vehicle_id, repr(float(plan.positions[k])),
                            repr(float(plan.speeds[k])), repr(float(a))])
    return path


# --------------------------------------------------------------------------
# reachability and window assignment


def _extreme_positions(s0, v0, spec: VehicleSpec, dt, v_floor, n_steps, fastest: bool):
    s = np.empty(n_steps + 1)
    s[0] = s0
    v = v0
    for k in range(n_steps):
        s[k + 1] = s[k] + v * dt
        target = spec.v_max if fastest else v_floor
        a = min(spec.a_max, max(spec.a_min, (target - v) / dt))
        v = v + a * dt
    return s


def reach_interval(s0, v0, spec: VehicleSpec, line: float, dt: float, v_floor: float) -> tuple[float, float]:
    """Earliest and latest crossing times (relative) of ``line`` under the speed/accel bounds.

    The max-acceleration profile bounds every admissible position sequence
    from above and the slow-down-to-floor profile from below, so the two
    crossing times bracket every feasible crossing.
    """
    dist = line - s0
    if dist < 0:
        return 0.0, 0.0
    n = int(math.ceil(dist / (v_floor * dt))) + int(math.ceil(max(0.0, v_floor - v0) / (spec.a_max * dt))) + 4
    fast = _extreme_positions(s0, v0, spec, dt, v_floor, n, True)
    slow = _extreme_positions(s0, v0, spec, dt, v_floor, n, False)
    return crossing_time(fast, line, dt), crossing_time(slow, line, dt)


@dataclass(frozen=True)
class WindowAssignment:
    signal: int
    cycle_index: int
    window_index: int
    start: float
    end: float
    reach_lo: float
    reach_hi: float


def assign_windows(
    scenario: FleetScenario,
    vehicle: int,
    margin: float = 0.0,
    t0: float = 0.0,
    state: tuple[float, float] | None = None,
    not_before: dict | None = None,
    skip: dict | None = None,
) -> list[WindowAssignment]:
    """Pick, signal by signal, the earliest green window the vehicle can reach.

    ``not_before`` maps signal index to an absolute lower bound on the
    crossing time (the leader's crossing); ``skip`` maps signal index to the
    number of otherwise-eligible windows to pass over.

    Raises:
        InfeasibleError: no reachable green window for some signal.
    """
    spec = scenario.vehicles[vehicle]
    s0, v0 = state if state is not None else (spec.position, spec.speed)
    not_before = not_before or {}
    skip = skip or {}
    out = []
    prev = None
    for i, sig in enumerate(scenario.signals):
        if sig.position < s0:
            continue
        lo, hi = reach_interval(s0, v0, spec, sig.position, scenario.dt, scenario.v_floor)
        lo, hi = t0 + lo, t0 + hi
        if prev is not None:
            gap = sig.position - scenario.signals[prev.signal].position
            lo = max(lo, max(prev.start + margin, prev.reach_lo) + gap / spec.v_max)
            hi = min(hi, min(prev.end - margin, prev.reach_hi) + gap / scenario.v_floor)
        lo = max(lo, not_before.get(i, -math.inf))
        if lo > hi:
            raise InfeasibleError(f"signal {i}: empty reachability interval for vehicle {vehicle}")
        if sig.always_green:
            # every instant is green: nothing to target, the window is unbounded
            m = math.floor((lo - sig.phase) / sig.cycle)
            chosen = WindowAssignment(i, m, 0, -math.inf, math.inf, lo, hi)
            out.append(chosen)
            prev = chosen
            continue
        chosen = None
        to_skip = skip.get(i, 0)
        for m, w, start, end in sig.windows_from(lo):
            if start > hi:
                break
            a, b = start + margin, end - margin
            ok = (a <= hi and b >= lo and a <= b) if margin > 0 else (start <= hi and end > lo)
            if ok:
                if to_skip:
                    to_skip -= 1
                    continue
                chosen = WindowAssignment(i, m, w, start, end, max(lo, a), min(hi, b))
                break
        if chosen is None:
            raise InfeasibleError(f"signal {i}: no reachable green window for vehicle {vehicle}")
        out.append(chosen)
        prev = chosen
    return out


# --------------------------------------------------------------------------
# single-vehicle profile optimization


def _position_row(tau: float, K: int, dt: float, s0: float, v0: float):
    """Position at relative time tau as (coeffs on v_1..v_K, constant)."""
    tau = min(max(tau, 0.0), K * dt)
    k = min(int(math.floor(tau / dt)), K - 1) if tau < K * dt else K - 1
    row = np.zeros(K)
    const = s0 + v0 * min(tau, dt)
    if k >= 1:
        row[: k - 1] = dt
        row[k - 1] = tau - k * dt
    return row, const


def _position_matrix(K, dt, s0, v0):
    """Positions s_1..s_K as P @ x + q."""
    P = np.zeros((K, K))
    for k in range(2, K + 1):
        P[k - 1, : k - 1] = dt
    q = np.full(K, s0 + v0 * dt)
    return P, q


def plan_profile(
    scenario: FleetScenario,
    vehicle: int,
    windows: Sequence[WindowAssignment],
    leader_positions: np.ndarray | None = None,
    t0: float = 0.0,
    state: tuple[float, float] | None = None,
    steps: int | None = None,
    warm_start: np.ndarray | None = None,
) -> SpeedPlan:
    """Minimum-cost no-stop speed profile meeting the assigned green windows.

    Cost: sum_k w_v (v_k - v_ref)^2 + w_a a_k^2 over the plan. Hard
    constraints: accel bounds, v_k in [v_floor, v_max], each targeted
    crossing at least dt/2 inside its window, and, when
    ``leader_positions`` is given, headway >= d_min at every step.

    Raises:
        InfeasibleError: the optimizer cannot satisfy every hard constraint.
    """
    spec = scenario.vehicles[vehicle]
    s0, v0 = state if state is not None else (spec.position, spec.speed)
    dt = scenario.dt
    K = steps or scenario.horizon_steps
    margin = 0.5 * dt

    # decision variables are the speeds v_1..v_K
    D = np.eye(K) - np.eye(K, k=-1)
    e1 = np.zeros(K)
    e1[0] = v0
    wa = scenario.w_a / dt**2
    H = 2.0 * scenario.w_v * np.eye(K) + 2.0 * wa * D.T @ D
    c = -2.0 * scenario.w_v * spec.v_ref * np.ones(K) - 2.0 * wa * D.T @ e1

    k_idx = np.arange(1, K + 1)
    lb = np.minimum(scenario.v_floor, v0 + spec.a_max * dt * k_idx - 1e-9)
    lb = np.maximum(lb, 0.0)
    ub = np.full(K, spec.v_max)

    rows, rhs = [D, -D], [dt * (spec.a_max - ACCEL_SLACK) + e1, -dt * (spec.a_min + ACCEL_SLACK) - e1]
    T = K * dt
    for wa_ in windows:
        line = scenario.signals[wa_.signal].position
        if s0 > line:
            continue
        tau_lo = wa_.start + margin - t0
        tau_hi = wa_.end - margin - t0
        if tau_lo > 0:
            row, const = _position_row(min(tau_lo, T), K, dt, s0, v0)
            rows.append(row[None, :])
            rhs.append(np.array([line - POSITION_SLACK - const]))
        if tau_hi <= T:
            if tau_hi <= 0:
                raise InfeasibleError(f"window for signal {wa_.signal} already closed")
            row, const = _position_row(tau_hi, K, dt, s0, v0)
            rows.append(-row[None, :])
            rhs.append(np.array([const - line - POSITION_SLACK]))
    G0 = np.vstack(rows)
    h0 = np.concatenate(rhs)
    if warm_start is not None and len(warm_start) >= K:
        x = np.clip(np.asarray(warm_start[:K], dtype=float), lb, ub)
    else:
        x = np.clip(np.full(K, spec.v_ref), lb, ub)

    if leader_positions is None:
        x = solve_qp(H, c, lb, ub, G0, h0, x0=x).x
    else:
        # headway rows are added lazily: only steps that bind enter the QP
        P, q = _position_matrix(K, dt, s0, v0)
        lead = np.asarray(leader_positions, dtype=float)[1 : K + 1]
        # no extra tightening: solver feasibility (~1e-8) is far inside HEADWAY_TOL
        limit = lead - scenario.d_min - q
        if limit[0] < -HEADWAY_TOL:
            raise InfeasibleError("headway violated on the first step")
        active = np.zeros(K, dtype=bool)
        for _ in range(12):
            sel = np.flatnonzero(active)
            G = np.vstack([G0, P[sel]])
            h = np.concatenate([h0, limit[sel]])
            x = solve_qp(H, c, lb, ub, G, h, x0=x).x
            over = (P @ x - limit > 0.0) & ~active
            over[0] = False
            if not over.any():
                break
            grow = over.copy()
            grow[1:] |= over[:-1]
            grow[:-1] |= over[1:]
            active |= grow
            active[0] = False

    accels = (x - np.concatenate(([v0], x[:-1]))) / dt
    accels = np.clip(accels, spec.a_min, spec.a_max)
    plan = _make_plan(scenario, vehicle, s0, v0, accels, t0, "mpc", windows=list(windows))
    plan.cost = profile_cost(scenario, spec, plan.speeds, plan.accels)
    problems = check_plan(scenario, plan, windows, leader_positions)
    if problems:
        raise InfeasibleError(f"vehicle {vehicle}: " + "; ".join(problems))
    return plan


def profile_cost(scenario: FleetScenario, spec: VehicleSpec, speeds, accels) -> float:
    speeds = np.asarray(speeds, dtype=float)
    accels = np.asarray(accels, dtype=float)
    return float(scenario.w_v * np.sum((speeds[1:] - spec.v_ref) ** 2) + scenario.w_a * np.sum(accels**2))


def check_plan(scenario: FleetScenario, plan: SpeedPlan, windows=(), leader_positions=None) -> list[str]:
    """Hard-constraint audit of a planned profile; empty when feasible."""
    spec = scenario.vehicles[plan.vehicle_id]
    problems = []
    dt = scenario.dt
    if np.any(plan.accels < spec.a_min - FEAS_TOL) or np.any(plan.accels > spec.a_max + FEAS_TOL):
        problems.append("accel bounds")
    v = plan.speeds[1:]
    k_idx = np.arange(1, v.size + 1)
    floor = np.minimum(scenario.v_floor, plan.speeds[0] + spec.a_max * dt * k_idx) - 1e-9
    if np.any(v < floor - FEAS_TOL) or np.any(v > spec.v_max + FEAS_TOL):
        problems.append("speed bounds")
    T = plan.t0 + (plan.speeds.size - 1) * dt
    for wa in windows:
        t = plan.crossing_times.get(wa.signal)
        lo, hi = wa.start + 0.5 * dt, wa.end - 0.5 * dt
        if t is None:
            if hi <= T:
                problems.append(f"signal {wa.signal} not crossed")
        elif not (lo - 1e-9 <= t <= hi + 1e-9):
            problems.append(f"signal {wa.signal} crossed at {t:.3f} outside [{lo:.3f}, {hi:.3f}]")
    if leader_positions is not None:
        n = min(len(leader_positions), plan.positions.size)
        gap = np.asarray(leader_positions[:n]) - plan.positions[:n]
        if np.any(gap < scenario.d_min - HEADWAY_TOL):
            problems.append("headway")
    return problems


# --------------------------------------------------------------------------
# fleet


def _window_attempts(n_signals: int, depth: int = 2):
    """Skip patterns in increasing total-skip order: {}, {0:1}, {1:1}, {0:1,1:1}, ..."""
    from itertools import product

    combos = sorted(product(range(depth + 1), repeat=n_signals), key=lambda c: (sum(c), c[::-1]))
    for combo in combos:
        yield {i: k for i, k in enumerate(combo) if k}


def plan_vehicle(
    scenario: FleetScenario,
    vehicle: int,
    leader_plan: SpeedPlan | None = None,
    t0: float = 0.0,
    state: tuple[float, float] | None = None,
    warm_start=None,
) -> SpeedPlan:
    """Window assignment plus profile optimization, retrying later windows on failure."""
    margin = 0.5 * scenario.dt
    leader_pos = leader_plan.positions if leader_plan is not None else None
    not_before = {}
    if leader_plan is not None:
        # the follower cannot reach a line before its leader is d_min beyond it
        for i, sig in enumerate(scenario.signals):
            t = crossing_time(leader_plan.positions, sig.position + scenario.d_min, scenario.dt)
            if t is not None:
                not_before[i] = leader_plan.t0 + t
    last_error = None
    n_sig = len(scenario.signals)
    for skip in _window_attempts(n_sig, depth=2 if n_sig <= 3 else 1):
        try:
            windows = assign_windows(scenario, vehicle, margin, t0, state, not_before, skip)
            return plan_profile(scenario, vehicle, windows, leader_pos, t0, state, warm_start=warm_start)
        except InfeasibleError as exc:
            last_error = exc
    raise InfeasibleError(str(last_error))


def plan_fleet(scenario: FleetScenario) -> list[SpeedPlan]:
    """Plan every vehicle front-to-back; followers respect their leader's committed plan.

    A vehicle whose plan is infeasible gets the benchmark profile instead and
    is flagged ``infeasible``.
    """
    plans: dict[int, SpeedPlan] = {}
    leaders = scenario.leaders()
    for vid in scenario.front_to_back():
        leader = plans.get(leaders[vid]) if leaders[vid] is not None else None
        try:
            plans[vid] = plan_vehicle(scenario, vid, leader)
        except InfeasibleError:
            plan = simulate_benchmark(scenario, vid, leader)
            plan.infeasible = True
            plans[vid] = plan
    return [plans[i] for i in range(len(scenario.vehicles))]


# --------------------------------------------------------------------------
# stop-at-red benchmark


def _stop_speed(gap: float, b: float, dt: float) -> float:
    """Largest speed from which Euler braking at ``b`` stops within ``gap``."""
    if gap <= 0:
        return 0.0
    return b * (-0.5 * dt + math.sqrt(0.25 * dt * dt + 2.0 * gap / b))


def _stop_distance(v: float, b: float, dt: float) -> float:
    return v * v / (2.0 * b) + 0.5 * v * dt


def tracking_crossing(spec: VehicleSpec, s: float, v: float, line: float, dt: float, max_steps: int = 100_000):
    """Relative time at which the v_ref-tracking law crosses ``line`` (inf if it never does)."""
    for k in range(max_steps):
        s_next = s + v * dt
        if s_next > line:
            return k * dt + (line - s) / v
        a = min(spec.a_max, max(spec.a_min, (spec.v_ref - v) / dt))
        v = max(0.0, v + a * dt)
        s = s_next
    return math.inf


def benchmark_accel(
    scenario: FleetScenario,
    vehicle: int,
    s: float,
    v: float,
    t: float,
    leader: tuple[float, float] | None = None,
) -> float:
    """One tick of the stop-at-red controller.

    Tracks v_ref. If the next signal would be red when the tracking law
    reaches it, brakes at the comfortable rate to stop at the line and waits
    there with zero speed until the light is green. A red that can no longer
    be stopped for even under full braking is run. The leader acts as a
    moving stop line.
    """
    spec = scenario.vehicles[vehicle]
    dt = scenario.dt
    b = scenario.comfort_decel
    v_next = v + min(spec.a_max * dt, max(spec.a_min * dt, spec.v_ref - v))
    s_next = s + v * dt
    v_floor_next = max(0.0, v + spec.a_min * dt)

    limits = []
    ahead = [sig for sig in scenario.signals if sig.position >= s]
    if ahead:
        sig = ahead[0]
        stop_at = sig.position - scenario.stop_buffer
        if v == 0.0 and s >= stop_at - 1e-6:
            must_stop = not green_at(sig, t)
        else:
            must_stop = not green_at(sig, t + tracking_crossing(spec, s, v, sig.position, dt))
        gap = stop_at - s_next
        if must_stop and gap >= 0:
            hard = min(_stop_speed(gap, -spec.a_min, dt), gap / dt)
            if v_floor_next <= hard + 1e-12:
                limits.append(min(_stop_speed(gap, b, dt), gap / dt))
    if leader is not None:
        s_l, v_l = leader
        lead = scenario.vehicles[scenario.leaders()[vehicle]] if scenario.leaders()[vehicle] is not None else spec
        v_l_next = max(0.0, v_l + lead.a_min * dt)
        slack = s_l + v_l * dt - scenario.d_min - s_next
        reach = slack + _stop_distance(v_l_next, b, dt)
        limits.append(max(0.0, min(_stop_speed(reach, b, dt), slack / dt + v_l_next)))
    if limits:
        v_next = min(v_next, min(limits))
    v_next = max(v_next, 0.0)
    a = (v_next - v) / dt
    return min(spec.a_max, max(spec.a_min, a))


def simulate_benchmark(
    scenario: FleetScenario,
    vehicle: int,
    leader_plan: SpeedPlan | None = None,
    t0: float = 0.0,
    state: tuple[float, float] | None = None,
    steps: int | None = None,
) -> SpeedPlan:
    spec = scenario.vehicles[vehicle]
    s, v = state if state is not None else (spec.position, spec.speed)
    s0, v0 = s, v
    K = steps or scenario.horizon_steps
    dt = scenario.dt
    accels = np.empty(K)
    for k in range(K):
        leader = None
        if leader_plan is not None:
            leader = (leader_plan.positions[k], leader_plan.speeds[k])
        a = benchmark_accel(scenario, vehicle, s, v, t0 + k * dt, leader)
        accels[k] = a
        s = s + v * dt
        v = v + a * dt
        if abs(v) < 1e-12:
            v = 0.0
    plan = _make_plan(scenario, vehicle, s0, v0, accels, t0, "benchmark")
    plan.cost = profile_cost(scenario, spec, plan.speeds, plan.accels)
    return plan


def benchmark_controller(scenario: FleetScenario) -> list[SpeedPlan]:
    """Stop-at-red profiles for every vehicle, simulated front-to-back."""
    plans: dict[int, SpeedPlan] = {}
    leaders = scenario.leaders()
    for vid in scenario.front_to_back():
        leader = plans.get(leaders[vid]) if leaders[vid] is not None else None
        plans[vid] = simulate_benchmark(scenario, vid, leader)
    return [plans[i] for i in range(len(scenario.vehicles))]


def compare(scenario: FleetScenario, mpc: Sequence[SpeedPlan], bench: Sequence[SpeedPlan]) -> dict:
    """Per-vehicle stop counts, minimum speeds and energy proxies for both controllers."""
    out = {"scenario": scenario.name, "config_hash": scenario.config_hash(), "vehicles": []}
    for p_m, p_b in zip(mpc, bench):
        out["vehicles"].append({"vehicle_id": p_m.vehicle_id, "mpc": p_m.summary(), "benchmark": p_b.summary()})
    out["totals"] = {
        "mpc": {
            "stops": sum(p.stops for p in mpc),
            "min_speed": float(min(p.speeds.min() for p in mpc)) if mpc else None,
            "energy_proxy": float(sum(p.energy for p in mpc)),
            "infeasible": [p.vehicle_id for p in mpc if p.infeasible],
        },
        "benchmark": {
            "stops": sum(p.stops for p in bench),
            "min_speed": float(min(p.speeds.min() for p in bench)) if bench else None,
            "energy_proxy": float(sum(p.energy for p in bench)),
        },
    }
    return out
