"""Discrete-time world: real vehicles plus their descriptive, predictive and
prescriptive agents, coupled through an in-process message bus.

Every tick runs the same five stages in order:

1. perception: each real vehicle publishes a state snapshot;
2. prediction: each predictive agent forecasts power demand for its vehicle;
3. decision: the planner proposes the next accel and the prescriptive agent
   gates it;
4. control: the accepted accel, or the benchmark controller's accel when the
   gate rejects, is integrated;
5. description: the descriptive agent records the *previous* tick's
   observation, so it runs one tick behind control.

The planner replans every ``replan_interval`` ticks from the realized state.
Models used by the gate are refit at the same cadence from the descriptive
record.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .descriptive_agent import InductionModel, PolicyModel, consistency, fit, fit_induction
from .fleet_planner import (
    FleetScenario,
    InfeasibleError,
    SpeedPlan,
    benchmark_accel,
    green_at,
    plan_vehicle,
)
from .fuzzy_encoder import FemBundle, MembershipFamily, fem_predict, make_family, train_bundle
from .kinematics import count_stops, crossing_time, energy_proxy
from .predictive_agent import FemForecaster, Persistence, PredictiveMember, evaluate_ensemble, rmse
from .prescriptive_agent import (
    ActionGrid,
    CandidateActionSet,
    GateDecision,
    MotionContext,
    SafetyEnvelope,
    calibrate,
    gate,
    select_action,
)
from .trace_model import ScalarTrace, StateActionTrajectory, drive_cycle_power

STAGES = ("perception", "prediction", "decision", "control", "description")
SENDERS = ("real", "descriptive", "predictive", "prescriptive", "planner")


@dataclass
class VehicleState:
    id: int
    position: float
    speed: float
    accel: float = 0.0
    power_demand: float = 0.0

    def snapshot(self) -> dict:
        return {
            "position": self.position,
            "speed": self.speed,
            "accel": self.accel,
            "power": self.power_demand,
        }


@dataclass(frozen=True)
class BusMessage:
    tick: int
    stage: str
    sender: str
    recipient: str
    vehicle: int
    payload: dict

    def __post_init__(self):
        if self.sender not in SENDERS or self.recipient not in SENDERS:
            raise ValueError(f"unknown bus endpoint {self.sender!r} -> {self.recipient!r}")

    def to_record(self) -> dict:
        return {
            "kind": "message",
            "tick": self.tick,
            "stage": self.stage,
            "sender": self.sender,
            "recipient": self.recipient,
            "vehicle": self.vehicle,
            "payload": self.payload,
        }


class MessageBus:
    """Lossless in-process bus; messages are delivered within the tick they are sent."""

    def __init__(self):
        self._queue: list[BusMessage] = []

    def send(self, msg: BusMessage):
        self._queue.append(msg)

    def receive(self, recipient: str, vehicle: int, tick: int) -> list[BusMessage]:
        got = [m for m in self._queue if m.recipient == recipient and m.vehicle == vehicle]
        for m in got:
            if m.tick > tick:
                raise RuntimeError("message consumed before it was sent")
        self._queue = [m for m in self._queue if not (m.recipient == recipient and m.vehicle == vehicle)]
        return got


@dataclass
class QuadrupletLog:
    """Append-only record of a run: states, bus messages, gate decisions, controls."""

    seed: int
    config_hash: str
    scenario_name: str
    dt: float
    n_vehicles: int
    records: list = field(default_factory=list)

    def append(self, record: dict):
        self.records.append(record)

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]

    @property
    def n_ticks(self) -> int:
        return sum(1 for r in self.records if r["kind"] == "state" and r["vehicle"] == 0) - 1 if self.n_vehicles else 0

    def trajectory(self, vehicle: int) -> dict[str, np.ndarray]:
        """Realized positions/speeds (ticks 0..n), executed accels and power (ticks 0..n-1)."""
        states = [r for r in self.records if r["kind"] == "state" and r["vehicle"] == vehicle]
        controls = [r for r in self.records if r["kind"] == "control" and r["vehicle"] == vehicle]
        return {
            "position": np.array([r["position"] for r in states]),
            "speed": np.array([r["speed"] for r in states]),
            "accel": np.array([r["accel"] for r in controls]),
            "power": np.array([r["power"] for r in states]),
            "source": [r["source"] for r in controls],
        }

    def to_jsonl(self) -> str:
        head = {"kind": "header", "seed": self.seed, "config_hash": self.config_hash,
                "scenario": self.scenario_name, "dt": self.dt, "n_vehicles": self.n_vehicles}
        lines = [json.dumps(head, sort_keys=True)]
        lines.extend(json.dumps(r, sort_keys=True) for r in self.records)
        return "\n".join(lines) + "\n"

    def summary(self, scenario: FleetScenario | None = None) -> dict:
        gates = self.of_kind("gate")
        accepted = sum(1 for g in gates if g["accepted"])
        out = {
            "scenario": self.scenario_name,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "ticks": self.n_ticks,
            "gate_evaluations": len(gates),
            "gate_acceptance_rate": accepted / len(gates) if gates else None,
            "vehicles": [],
        }
        for vid in range(self.n_vehicles):
            tr = self.trajectory(vid)
            row = {
                "vehicle_id": vid,
                "stops": count_stops(tr["speed"]),
                "min_speed": float(tr["speed"].min()),
                "energy_proxy": energy_proxy(tr["speed"], tr["accel"], self.dt),
                "fallbacks": sum(1 for s in tr["source"] if s == "fallback"),
            }
            if scenario is not None:
                crossings = {}
                for i, sig in enumerate(scenario.signals):
                    if tr["position"][0] > sig.position:
                        continue
                    t = crossing_time(tr["position"], sig.position, self.dt)
                    crossings[str(i)] = None if t is None else {"t": t, "green": green_at(sig, t)}
                row["crossings"] = crossings
            out["vehicles"].append(row)
        return out

    def write(self, out_dir, scenario: FleetScenario | None = None) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"log": out_dir / "quadruplet_log.jsonl", "summary": out_dir / "summary.json"}
        paths["log"].write_text(self.to_jsonl())
        paths["summary"].write_text(json.dumps(self.summary(scenario), indent=1, sort_keys=True) + "\n")
        return paths


# --------------------------------------------------------------------------
# per-vehicle agents


def _power_family(scenario: FleetScenario) -> MembershipFamily:
    cfg = scenario.world.get("power_family")
    if cfg:
        return MembershipFamily.from_dict(cfg)
    top = max(float(scenario.power.power(v.v_max, v.a_max)) for v in scenario.vehicles)
    return make_family("triangular", 10, (0.0, math.ceil(top)))


def default_bundle(scenario: FleetScenario, seed: int, fam: MembershipFamily | None = None) -> FemBundle:
    """FEM bundle trained offline on a seeded synthetic drive cycle at the scenario's dt."""
    fam = fam or _power_family(scenario)
    length = int(scenario.world.get("fem_training_length", 4000))
    rng = np.random.default_rng(seed)
    power = drive_cycle_power(rng, length, scenario.dt, {
        "mass": scenario.power.mass, "c0": scenario.power.c0, "c1": scenario.power.c1, "c2": scenario.power.c2,
    })
    power = np.clip(power, *fam.bounds)
    return train_bundle(ScalarTrace(power, scenario.dt, "synthetic drive cycle"), fam)


@dataclass
class DescriptiveRecord:
    """The descriptive agent's observation history for one vehicle."""

    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)

    def trajectory(self, n_states: int, n_actions: int) -> StateActionTrajectory | None:
        if len(self.states) < 2:
            return None
        return StateActionTrajectory(np.array(self.states), np.array(self.actions), np.array(self.rewards),
                                     n_states, n_actions)


@dataclass
class GateModels:
    """Tabular F_A (action -> induced state) and P_R (state -> action) used by the gate."""

    induction: np.ndarray
    policy: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "GateModels":
        return cls(np.arange(n), np.arange(n))


ProposalFn = Callable[["World", int], float]
GateFn = Callable[["World", int, float], GateDecision]


@dataclass
class World:
    scenario: FleetScenario
    seed: int
    vehicles: list
    grid: ActionGrid
    threshold: float
    bundles: dict
    gate_models: dict
    records: dict
    log: QuadrupletLog
    rng: np.random.Generator
    tick: int = 0
    plans: dict = field(default_factory=dict)
    plan_tick: int = 0
    pending: dict = field(default_factory=dict)
    proposal: ProposalFn | None = None
    gate_fn: GateFn | None = None
    bus: MessageBus = field(default_factory=MessageBus)
    horizon_steps: int = 20

    @property
    def t(self) -> float:
        return self.tick * self.scenario.dt


def init_world(
    scenario: FleetScenario,
    seed: int = 0,
    bundles: dict | None = None,
    proposal: ProposalFn | None = None,
    gate_fn: GateFn | None = None,
) -> World:
    """Build the tick-0 world and log its initial snapshot."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    cfg = scenario.world
    a_lo = min((v.a_min for v in scenario.vehicles), default=-3.0)
    a_hi = max((v.a_max for v in scenario.vehicles), default=2.0)
    grid = ActionGrid.uniform(a_lo, a_hi, int(cfg.get("action_levels", 11)))
    if bundles is None:
        bundles = {}
        if scenario.vehicles:
            shared = default_bundle(scenario, seed)
            bundles = {i: shared for i in range(len(scenario.vehicles))}
    horizon_s = float(cfg.get("prediction_horizon_s", 10.0))
    log = QuadrupletLog(int(seed), scenario.config_hash(), scenario.name, scenario.dt, len(scenario.vehicles))
    vehicles = []
    for i, spec in enumerate(scenario.vehicles):
        vs = VehicleState(i, float(spec.position), float(spec.speed))
        vs.power_demand = float(scenario.power.power(vs.speed, 0.0))
        vehicles.append(vs)
    world = World(
        scenario=scenario,
        seed=int(seed),
        vehicles=vehicles,
        grid=grid,
        threshold=float(cfg.get("gate_threshold", 1.0)),
        bundles=dict(bundles),
        gate_models={i: GateModels.identity(grid.n) for i in range(len(vehicles))},
        records={i: DescriptiveRecord() for i in range(len(vehicles))},
        log=log,
        rng=np.random.default_rng(int(seed)),
        proposal=proposal,
        gate_fn=gate_fn,
        horizon_steps=max(1, int(round(horizon_s / scenario.dt))),
    )
    _log_states(world)
    return world


def _log_states(world: World):
    for vs in world.vehicles:
        world.log.append({"kind": "state", "tick": world.tick, "vehicle": vs.id, **vs.snapshot()})


def _replan(world: World):
    """Receding-horizon replan of every vehicle, front to back, from the realized state."""
    sc = world.scenario
    leaders = sc.leaders()
    new: dict[int, SpeedPlan | None] = {}
    for vid in sc.front_to_back():
        vs = world.vehicles[vid]
        leader = new.get(leaders[vid]) if leaders[vid] is not None else None
        old = world.plans.get(vid)
        warm = None
        if old is not None:
            shift = world.tick - world.plan_tick
            warm = old.speeds[1 + shift :]
        try:
            new[vid] = plan_vehicle(sc, vid, leader, world.t, (vs.position, vs.speed), warm_start=warm)
        except InfeasibleError:
            new[vid] = None
    world.plans = new
    world.plan_tick = world.tick


def _planned_accel(world: World, vid: int) -> float | None:
    plan = world.plans.get(vid)
    if plan is None:
        return None
    k = world.tick - world.plan_tick
    if k >= plan.accels.size:
        return None
    return float(plan.accels[k])


def _refit_gate_models(world: World, vid: int):
    rec = world.records[vid]
    traj = rec.trajectory(world.grid.n, world.grid.n)
    if traj is None:
        return
    models = world.gate_models[vid]
    f = fit_induction(traj)
    induction = np.where(f.observed, f.f_map, models.induction)
    cal = calibrate(traj, induction, models.policy, world.threshold)
    world.gate_models[vid] = GateModels(induction, cal.policy)


def _motion_context(world: World, vid: int, leader_accel: dict) -> MotionContext:
    vs = world.vehicles[vid]
    lid = world.scenario.leaders()[vid]
    if lid is None:
        return MotionContext(vs.speed, vs.position, world.scenario.dt)
    lv = world.vehicles[lid]
    return MotionContext(vs.speed, vs.position, world.scenario.dt, lv.position, lv.speed, leader_accel.get(lid, 0.0))


def _default_gate(world: World, vid: int, action: float, ctx: MotionContext) -> GateDecision:
    spec = world.scenario.vehicles[vid]
    env = SafetyEnvelope(spec.v_max, spec.a_min, spec.a_max, world.scenario.d_min)
    models = world.gate_models[vid]
    return gate(action, models.policy, models.induction, world.threshold, world.grid, ctx, env)


def _actuator_noise(world: World) -> float:
    cfg = world.scenario.world.get("actuator_noise")
    if not cfg:
        return 0.0
    if world.tick < int(cfg.get("start_tick", 0)) or world.tick >= int(cfg.get("end_tick", 2**62)):
        return 0.0
    return float(world.rng.normal(0.0, float(cfg["std"])))


def step(world: World, dt: float | None = None) -> World:
    """Advance the world by one tick of the five-stage pipeline."""
    sc = world.scenario
    if dt is not None and abs(dt - sc.dt) > 1e-12:
        raise ValueError(f"world runs at dt={sc.dt}, got {dt}")
    dt = sc.dt
    tick = world.tick
    bus = world.bus
    log = world.log

    def send(stage, sender, recipient, vid, payload):
        msg = BusMessage(tick, stage, sender, recipient, vid, payload)
        bus.send(msg)
        log.append(msg.to_record())

    # 1. perception
    for vs in world.vehicles:
        snap = vs.snapshot()
        send("perception", "real", "predictive", vs.id, snap)
        send("perception", "real", "planner", vs.id, snap)

    # 2. prediction
    for vs in world.vehicles:
        (msg,) = bus.receive("predictive", vs.id, tick)
        bundle = world.bundles.get(vs.id)
        members = [PredictiveMember(0, Persistence(), world.horizon_steps)]
        if bundle is not None:
            members.append(PredictiveMember(1, FemForecaster(bundle), world.horizon_steps))
        lo, hi = bundle.family.bounds if bundle is not None else (0.0, math.inf)
        current = min(max(msg.payload["power"], lo), hi)
        know = evaluate_ensemble(members, current, dt)
        send("prediction", "predictive", "prescriptive", vs.id, {
            "best_member": know.best_member,
            "costs": {str(k): v for k, v in sorted(know.costs.items())},
            "best_trajectory": [float(x) for x in know.best_trajectory],
        })

    # 3. decision
    if world.proposal is None and world.vehicles and (tick == 0 or tick - world.plan_tick >= sc.replan_interval):
        _replan(world)
        for vs in world.vehicles:
            _refit_gate_models(world, vs.id)
    leaders = sc.leaders()
    energy_weight = float(sc.world.get("energy_weight", 0.0))
    decided: dict[int, tuple[float, str]] = {}
    executed: dict[int, float] = {}
    for vid in sc.front_to_back():
        vs = world.vehicles[vid]
        spec = sc.vehicles[vid]
        bus.receive("planner", vid, tick)
        (know_msg,) = bus.receive("prescriptive", vid, tick)
        lid = leaders[vid]
        leader_state = None if lid is None else (world.vehicles[lid].position, world.vehicles[lid].speed)
        fallback = benchmark_accel(sc, vid, vs.position, vs.speed, world.t, leader_state)
        if world.proposal is not None:
            proposed = float(world.proposal(world, vid))
        else:
            planned = _planned_accel(world, vid)
            target = fallback if planned is None else planned
            # stage one: plan tracking, optionally traded against tractive work
            cands = CandidateActionSet(
                tuple(dict.fromkeys((target, fallback))),
                {"knowledge": know_msg.payload, "speed": vs.speed},
                (spec.a_min, spec.a_max),
            )
            _, proposed = select_action(
                cands,
                lambda ctx, a: -((a - target) ** 2) - energy_weight * max(0.0, a) * ctx["speed"] * dt,
            )
        send("decision", "planner", "prescriptive", vid, {"proposed": proposed})
        bus.receive("prescriptive", vid, tick)
        ctx = _motion_context(world, vid, executed)
        if world.gate_fn is not None:
            decision = world.gate_fn(world, vid, proposed)
        else:
            decision = _default_gate(world, vid, proposed, ctx)
        send("decision", "prescriptive", "real", vid, decision.to_dict())
        log.append({"kind": "gate", "tick": tick, "vehicle": vid, **decision.to_dict()})
        bus.receive("real", vid, tick)
        decided[vid] = (proposed, "plan") if decision.accepted else (fallback, "fallback")
        executed[vid] = decided[vid][0]

    # 4. control: integrate every vehicle from the same pre-step snapshot
    prev = {vs.id: (vs.speed, vs.accel) for vs in world.vehicles}
    for vs in world.vehicles:
        spec = sc.vehicles[vs.id]
        command, source = decided[vs.id]
        a = command + _actuator_noise(world)
        # the actuator cannot push speed outside [0, v_max]
        a = min(max(a, spec.a_min, -vs.speed / dt), spec.a_max, (spec.v_max - vs.speed) / dt)
        s_next = vs.position + vs.speed * dt
        v_next = vs.speed + a * dt
        if abs(v_next) < 1e-12:
            v_next = 0.0
        log.append({"kind": "control", "tick": tick, "vehicle": vs.id, "source": source,
                    "command": command, "accel": a})
        vs.position, vs.speed, vs.accel = s_next, v_next, a
        vs.power_demand = float(sc.power.power(v_next, a))

    # 5. description, one tick behind control
    for vs in world.vehicles:
        pending = world.pending.get(vs.id)
        if pending is not None:
            rec = world.records[vs.id]
            rec.states.append(pending["state"])
            rec.actions.append(pending["action"])
            rec.rewards.append(pending["reward"])
            send("description", "real", "descriptive", vs.id, pending)
            bus.receive("descriptive", vs.id, tick)
        v0, a_prev = prev[vs.id]
        command = decided[vs.id][0]
        world.pending[vs.id] = {
            "state": world.grid.index(a_prev),
            "action": world.grid.index(command),
            "reward": -max(0.0, vs.accel) * v0 * dt,
        }

    world.tick += 1
    _log_states(world)
    return world


def run(
    scenario: FleetScenario,
    n_ticks: int,
    seed: int = 0,
    bundles: dict | None = None,
    proposal: ProposalFn | None = None,
    gate_fn: GateFn | None = None,
) -> QuadrupletLog:
    if n_ticks < 0:
        raise ValueError("n_ticks must be >= 0")
    world = init_world(scenario, seed, bundles, proposal, gate_fn)
    for _ in range(n_ticks):
        step(world)
    return world.log


# --------------------------------------------------------------------------
# feedback


def power_trace(log: QuadrupletLog, vehicle: int, start_tick: int = 0, stop_tick: int | None = None) -> ScalarTrace:
    power = log.trajectory(vehicle)["power"][start_tick:stop_tick]
    return ScalarTrace(np.maximum(power, 0.0), log.dt, f"vehicle {vehicle} power")


def descriptive_trajectory(log: QuadrupletLog, vehicle: int, n_levels: int) -> StateActionTrajectory | None:
    msgs = [r["payload"] for r in log.records
            if r["kind"] == "message" and r["recipient"] == "descriptive" and r["vehicle"] == vehicle]
    if len(msgs) < 2:
        return None
    return StateActionTrajectory(
        np.array([m["state"] for m in msgs]), np.array([m["action"] for m in msgs]),
        np.array([m["reward"] for m in msgs], dtype=float), n_levels, n_levels,
    )


@dataclass
class FeedbackResult:
    models: dict
    bundles: dict
    report: dict


def _one_step_rmse(bundle: FemBundle, trace: ScalarTrace) -> float:
    x = np.clip(trace.samples, *bundle.family.bounds)
    pred = fem_predict(x[:-1], bundle.family, bundle.transition, 1)
    return rmse(pred, x[1:])


def feedback_update(
    log: QuadrupletLog,
    models: dict | None,
    bundles: dict,
    n_levels: int = 11,
    start_tick: int = 0,
    stop_tick: int | None = None,
    gamma: float = 0.9,
) -> FeedbackResult:
    """Refit descriptive models and FEM bundles on the realized log.

    Both are refit on the slice [start_tick, stop_tick) of each vehicle's
    record, and the before/after metrics are measured on that same slice:
    one-step FEM RMSE on the power trace, and the consistency report of the
    descriptive pair on the recorded state/action sequence.
    """
    if not log.records:
        raise ValueError("empty log")
    models = dict(models or {})
    new_models, new_bundles, report = {}, {}, {}
    for vid in range(log.n_vehicles):
        row = {}
        bundle = bundles.get(vid)
        if bundle is not None:
            trace = power_trace(log, vid, start_tick, stop_tick)
            if len(trace) >= 2:
                x = np.clip(trace.samples, *bundle.family.bounds)
                refit = train_bundle(ScalarTrace(x, trace.dt, trace.label), bundle.family)
                row["rmse_before"] = _one_step_rmse(bundle, trace)
                row["rmse_after"] = _one_step_rmse(refit, trace)
                new_bundles[vid] = refit
            else:
                new_bundles[vid] = bundle
        traj = descriptive_trajectory(log, vid, n_levels)
        if traj is not None:
            lo = max(0, start_tick)
            hi = len(traj) if stop_tick is None else min(len(traj), stop_tick)
            if hi - lo >= 2:
                traj = StateActionTrajectory(traj.states[lo:hi], traj.actions[lo:hi], traj.rewards[lo:hi],
                                             n_levels, n_levels)
            f_new, p_new = fit(traj, gamma)
            old = models.get(vid)
            if old is not None:
                row["consistency_before"] = consistency(old[0], old[1], traj).to_dict()
            row["consistency_after"] = consistency(f_new, p_new, traj).to_dict()
            new_models[vid] = (f_new, p_new)
        elif vid in models:
            new_models[vid] = models[vid]
        report[str(vid)] = row
    return FeedbackResult(new_models, new_bundles, report)
