"""Predictive vehicle: forecaster ensembles and the power-demand evaluation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .fuzzy_encoder import FemBundle, MembershipFamily, fem_predict, fem_weights, decode, train_bundle
from .trace_model import ScalarTrace


class UntrainedForecasterError(RuntimeError):
    pass


class MemberError(RuntimeError):
    def __init__(self, member_id, cause: Exception):
        super().__init__(f"member {member_id}: {cause}")
        self.member_id = member_id
        self.cause = cause


class Persistence:
    """x+ = x."""

    name = "persistence"

    def forecast(self, x: float, steps: int) -> list[float]:
        return [float(x)] * steps


@dataclass(frozen=True)
class FemForecaster:
    """Forecaster backed by a trained FEM bundle.

    ``mode="iterate"`` feeds each one-step expected value back in as the next
    input; ``mode="distribution"`` propagates the fuzzy probability vector k
    steps and decodes once per step.
    """

    bundle: FemBundle | None
    mode: str = "iterate"
    name: str = "fem"

    def forecast(self, x: float, steps: int) -> list[float]:
        if self.bundle is None:
            raise UntrainedForecasterError("FEM forecaster has no trained bundle")
        fam, pi = self.bundle.family, self.bundle.transition
        if self.mode == "iterate":
            out = []
            value = float(x)
            for _ in range(steps):
                value = fem_predict(value, fam, pi, 1)
                out.append(value)
            return out
        if self.mode == "distribution":
            w = fem_weights(float(x), fam, pi, 0)
            out = []
            for _ in range(steps):
                w = w @ pi.probs
                w = w / w.sum()
                out.append(float(decode(w, fam)))
            return out
        raise ValueError(f"unknown FEM forecast mode {self.mode!r}")


def energy_objective(traj: Sequence[float], dt: float) -> float:
    """Sum of positive power times dt (kWh-like proxy in kW*s)."""
    return float(np.sum(np.maximum(0.0, np.asarray(traj, dtype=float))) * dt)


def make_tracking_objective(target: float) -> Callable[[Sequence[float], float], float]:
    def tracking(traj, dt):
        return float(np.sum((np.asarray(traj, dtype=float) - target) ** 2) * dt)

    return tracking


OBJECTIVES: dict[str, Callable[[Sequence[float], float], float]] = {
    "energy": energy_objective,
    "tracking_zero": make_tracking_objective(0.0),
}


@dataclass(frozen=True)
class PredictiveMember:
    id: int
    forecaster: object
    horizon_steps: int = 10
    objective: str | Callable = "energy"

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")

    def cost(self, traj, dt) -> float:
        fn = OBJECTIVES[self.objective] if isinstance(self.objective, str) else self.objective
        return fn(traj, dt)


def forecast(member: PredictiveMember, current_value: float) -> list[float]:
    return member.forecaster.forecast(current_value, member.horizon_steps)


@dataclass(frozen=True)
class PredictionKnowledge:
    trajectories: dict
    costs: dict
    best_member: int

    @property
    def best_trajectory(self) -> list[float]:
        return self.trajectories[self.best_member]

    @property
    def best_cost(self) -> float:
        return self.costs[self.best_member]

    def to_dict(self) -> dict:
        return {
            "best_member": self.best_member,
            "costs": {str(k): v for k, v in sorted(self.costs.items())},
            "trajectories": {str(k): v for k, v in sorted(self.trajectories.items())},
        }


def evaluate_ensemble(members: Sequence[PredictiveMember], current_value: float, dt: float) -> PredictionKnowledge:
    """Forecast with every member and keep the cheapest (lowest id on ties).

    Raises:
        MemberError: a member failed; the original error is attached.
    """
    if not members:
        raise ValueError("ensemble needs at least one member")
    trajs, costs = {}, {}
    for m in sorted(members, key=lambda m: m.id):
        try:
            traj = forecast(m, current_value)
            cost = m.cost(traj, dt)
        except Exception as exc:  # attach the member id, keep the cause
            raise MemberError(m.id, exc) from exc
        if not math.isfinite(cost):
            raise MemberError(m.id, ValueError(f"non-finite cost {cost}"))
        trajs[m.id] = traj
        costs[m.id] = cost
    best = min(costs, key=lambda k: (costs[k], k))
    return PredictionKnowledge(trajs, costs, best)


# --------------------------------------------------------------------------
# power-demand evaluation


def rmse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


@dataclass
class PowerDemandReport:
    dt: float
    n_train: int
    horizon_steps: int
    times: np.ndarray
    actual: np.ndarray
    fem_one_step: np.ndarray
    persistence_one_step: np.ndarray
    horizon_times: np.ndarray
    horizon_actual: np.ndarray
    fem_horizon: np.ndarray
    persistence_horizon: np.ndarray
    rmse: dict = field(default_factory=dict)
    bundle: FemBundle | None = None

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "n_train": self.n_train,
            "horizon_steps": self.horizon_steps,
            "horizon_seconds": self.horizon_steps * self.dt,
            "rmse": self.rmse,
            "one_step": {
                "t": self.times.tolist(),
                "actual": self.actual.tolist(),
                "fem": self.fem_one_step.tolist(),
                "persistence": self.persistence_one_step.tolist(),
            },
            "horizon": {
                "t": self.horizon_times.tolist(),
                "actual": self.horizon_actual.tolist(),
                "fem": self.fem_horizon.tolist(),
                "persistence": self.persistence_horizon.tolist(),
            },
        }

    def write(self, out_dir) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "json": out_dir / "prediction_report.json",
            "csv": out_dir / "prediction_one_step.csv",
            "horizon_csv": out_dir / "prediction_horizon.csv",
        }
        paths["json"].write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        for key, cols in (
            ("csv", (self.times, self.actual, self.fem_one_step, self.persistence_one_step)),
            ("horizon_csv", (self.horizon_times, self.horizon_actual, self.fem_horizon, self.persistence_horizon)),
        ):
            with paths[key].open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t", "actual", "fem", "persistence"])
                for row in zip(*(c.tolist() for c in cols)):
                    w.writerow([repr(v) for v in row])
        return paths


def horizon_steps_for(horizon_seconds: float, dt: float) -> int:
    ratio = horizon_seconds / dt
    steps = round(ratio)
    if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"horizon {horizon_seconds} s is not a positive multiple of dt={dt}")
    return int(steps)


def predict_power_demand(
    trace: ScalarTrace,
    fam: MembershipFamily,
    split_fraction: float = 0.7,
    horizon_seconds: float = 10.0,
    assignment_rule: str = "argmax",
    zero_row_policy: str = "self_loop",
) -> PowerDemandReport:
    """Train FEM on the head of ``trace`` and score it against persistence on the tail.

    One-step predictions are made for every sample of the evaluation split
    after the first; horizon predictions iterate the one-step predictor
    ``horizon_seconds / dt`` times from every sample that has a target.
    """
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split_fraction must lie in (0, 1)")
    h = horizon_steps_for(horizon_seconds, trace.dt)
    n = len(trace)
    n_train = int(math.floor(split_fraction * n))
    if n_train < 2:
        raise ValueError("training split shorter than 2 samples")
    ev = trace.samples[n_train:]
    if ev.size <= h:
        raise ValueError(f"evaluation split ({ev.size} samples) shorter than the horizon ({h} steps)")

    bundle = train_bundle(trace.slice(0, n_train), fam, assignment_rule, zero_row_policy)
    times = (n_train + np.arange(1, ev.size)) * trace.dt
    actual = ev[1:]
    fem_1 = fem_predict(ev[:-1], fam, bundle.transition, 1)
    pers_1 = ev[:-1].copy()

    origins = ev[:-h]
    value = origins.copy()
    for _ in range(h):
        value = fem_predict(value, fam, bundle.transition, 1)
    h_times = (n_train + np.arange(h, ev.size)) * trace.dt
    h_actual = ev[h:]

    report = PowerDemandReport(
        dt=trace.dt,
        n_train=n_train,
        horizon_steps=h,
        times=times,
        actual=actual,
        fem_one_step=np.asarray(fem_1),
        persistence_one_step=pers_1,
        horizon_times=h_times,
        horizon_actual=h_actual,
        fem_horizon=np.asarray(value),
        persistence_horizon=origins.copy(),
        bundle=bundle,
    )
    report.rmse = {
        "fem_one_step": rmse(report.fem_one_step, actual),
        "persistence_one_step": rmse(pers_1, actual),
        "fem_horizon": rmse(report.fem_horizon, h_actual),
        "persistence_horizon": rmse(origins, h_actual),
    }
    return report
