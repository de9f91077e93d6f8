"""Prescriptive vehicle: reward-maximizing action choice and the two-part gate.

Stage one picks the candidate with the highest reward. Stage two checks that
the chosen action is one the real vehicle's own policy would reproduce
(|a - P_R(F_A(a))| <= eps, with actions and states as table indices) and
that it passes the kinematic safety screen. Anything failing either check is
rejected and the caller falls back to its benchmark controller.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .trace_model import StateActionTrajectory

REASON_POLICY = "policy residual"
REASON_SPEED = "speed"
REASON_ACCEL = "accel"
REASON_HEADWAY = "headway"


@dataclass(frozen=True)
class ActionGrid:
    """Quantization of continuous accelerations (m/s^2) into table indices."""

    levels: tuple[float, ...]

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if len(levels) < 1 or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("action levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def uniform(cls, a_min: float, a_max: float, n: int) -> "ActionGrid":
        return cls(tuple(np.linspace(a_min, a_max, n)))

    @property
    def n(self) -> int:
        return len(self.levels)

    @property
    def step(self) -> float:
        return self.levels[1] - self.levels[0] if self.n > 1 else 0.0

    def index(self, accel: float) -> int:
        """Nearest level, lower index on ties."""
        return int(np.argmin(np.abs(np.asarray(self.levels) - accel)))

    def value(self, idx: int) -> float:
        return self.levels[idx]


@dataclass(frozen=True)
class CandidateActionSet:
    """J candidate accelerations plus the context they are scored against."""

    candidates: tuple[float, ...]
    context: Any = None
    bounds: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        cands = tuple(float(c) for c in self.candidates)
        if not cands:
            raise ValueError("need at least one candidate action")
        lo, hi = self.bounds
        for c in cands:
            if not lo <= c <= hi:
                raise ValueError(f"candidate {c} outside actuator bounds {self.bounds}")
        object.__setattr__(self, "candidates", cands)


def select_action(cands: CandidateActionSet, reward_fn: Callable[[Any, float], float]) -> tuple[int, float]:
    """Index and value of the reward-maximizing candidate (lowest index on ties)."""
    rewards = [float(reward_fn(cands.context, a)) for a in cands.candidates]
    k = int(np.argmax(rewards))
    return k, cands.candidates[k]


@dataclass(frozen=True)
class SafetyEnvelope:
    v_max: float
    a_min: float
    a_max: float
    d_min: float


@dataclass(frozen=True)
class MotionContext:
    """What the safety screen needs to project one control period ahead."""

    speed: float
    position: float
    dt: float
    leader_position: float | None = None
    leader_speed: float | None = None
    leader_accel: float = 0.0


def safety_failures(accel: float, ctx: MotionContext, env: SafetyEnvelope, tol: float = 1e-9) -> list[str]:
    """Names of the safety predicates ``accel`` violates.

    Headway is projected with constant-acceleration kinematics over one
    control period for both the vehicle and its leader.
    """
    failed = []
    v_next = ctx.speed + accel * ctx.dt
    if v_next < -tol or v_next > env.v_max + tol:
        failed.append(REASON_SPEED)
    if accel < env.a_min - tol or accel > env.a_max + tol:
        failed.append(REASON_ACCEL)
    if ctx.leader_position is not None:
        dt = ctx.dt
        own = ctx.position + ctx.speed * dt + 0.5 * accel * dt * dt
        lead = ctx.leader_position + (ctx.leader_speed or 0.0) * dt + 0.5 * ctx.leader_accel * dt * dt
        if lead - own < env.d_min - tol:
            failed.append(REASON_HEADWAY)
    return failed


@dataclass(frozen=True)
class GateDecision:
    chosen_action: float
    accepted: bool
    reasons: tuple[str, ...]
    stage2_residual: float
    threshold: float

    def to_dict(self) -> dict:
        return {
            "action": self.chosen_action,
            "accepted": self.accepted,
            "reasons": list(self.reasons),
            "residual": self.stage2_residual,
            "threshold": self.threshold,
        }


def policy_residual(action_idx: int, real_policy: Sequence[int], induction: Sequence[int]) -> int:
    """|a - P_R(F_A(a))| on table indices."""
    if not 0 <= action_idx < len(induction):
        raise ValueError(f"action index {action_idx} outside the induction table of size {len(induction)}")
    state = int(induction[action_idx])
    if not 0 <= state < len(real_policy):
        raise ValueError(f"induced state {state} outside the policy table of size {len(real_policy)}")
    return abs(action_idx - int(real_policy[state]))


def gate(
    action: float,
    real_policy: Sequence[int],
    induction: Sequence[int],
    threshold: float,
    grid: ActionGrid,
    ctx: MotionContext | None = None,
    envelope: SafetyEnvelope | None = None,
) -> GateDecision:
    """Accept ``action`` iff its policy residual is within ``threshold`` and it is safe.

    Raises:
        ValueError: the action vocabulary does not match the tables.
    """
    if len(induction) != grid.n:
        raise ValueError(f"vocabulary mismatch: grid has {grid.n} actions, induction table {len(induction)}")
    residual = float(policy_residual(grid.index(action), real_policy, induction))
    reasons = []
    if residual > threshold:
        reasons.append(REASON_POLICY)
    if ctx is not None and envelope is not None:
        reasons.extend(safety_failures(action, ctx, envelope))
    return GateDecision(float(action), not reasons, tuple(reasons), residual, float(threshold))


class CalibrationResult(NamedTuple):
    policy: np.ndarray
    d_f: float
    violations: list
    iterations: int


def _score(policy, induction, actions, threshold):
    states = induction[actions]
    res = np.abs(actions - policy[states])
    return int(np.sum(res > threshold)), float(res.mean())


def calibrate(
    traj: StateActionTrajectory,
    induction: Sequence[int],
    policy_init: Sequence[int],
    threshold: float,
    max_iters: int = 50,
) -> CalibrationResult:
    """Coordinate descent on a tabular P_R so recorded actions reproduce themselves.

    Each iteration sweeps the states in order and, for each, tries every
    action value, keeping a change only when it lowers (violations, mean
    residual) lexicographically. The violation count therefore never rises.
    ``violations`` lists the count before the first and after every
    iteration; ``d_f`` is the final mean residual.
    """
    induction = np.asarray(induction, dtype=np.int64)
    policy = np.asarray(policy_init, dtype=np.int64).copy()
    if induction.size != traj.n_actions:
        raise ValueError("induction table size differs from the trajectory's action count")
    actions = traj.actions
    n_actions = traj.n_actions
    score = _score(policy, induction, actions, threshold)
    history = [score[0]]
    iterations = 0
    for _ in range(max_iters):
        changed = False
        for s in range(policy.size):
            current = policy[s]
            for cand in range(n_actions):
                if cand == current:
                    continue
                policy[s] = cand
                trial = _score(policy, induction, actions, threshold)
                if trial < score:
                    score, current, changed = trial, cand, True
                policy[s] = current
        if not changed:
            break
        iterations += 1
        history.append(score[0])
    return CalibrationResult(policy, score[1], history, iterations)


def decision_record(vehicle_id: int, tick: int, decision: GateDecision) -> str:
    """One JSON line per gate evaluation."""
    return json.dumps({"vehicle": vehicle_id, "tick": tick, **decision.to_dict()}, sort_keys=True)
