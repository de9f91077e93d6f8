"""Sampled signals, discrete state spaces and state-action trajectories.

Also holds the file loaders (CSV/JSON) and the seeded synthetic generators
used in place of recorded drive data.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kinematics import PowerModel


class TraceFormatError(ValueError):
    """A trace file could not be parsed."""


class TraceInvariantError(ValueError):
    """Parsed data violates a trace invariant (non-finite sample, dt <= 0, ...)."""


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarTrace:
    """Uniformly sampled real-valued signal."""

    samples: np.ndarray
    dt: float
    label: str = ""

    def __post_init__(self):
        samples = _frozen(self.samples).reshape(-1)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "dt", float(self.dt))
        if samples.size == 0:
            raise TraceInvariantError("trace has no samples")
        if not np.all(np.isfinite(samples)):
            bad = int(np.flatnonzero(~np.isfinite(samples))[0])
            raise TraceInvariantError(f"non-finite sample at index {bad}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise TraceInvariantError(f"dt must be > 0, got {self.dt}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def slice(self, start: int, stop: int | None = None) -> "ScalarTrace":
        return ScalarTrace(self.samples[start:stop], self.dt, self.label)


@dataclass(frozen=True)
class CrispStateSpace:
    """Ordered crisp levels x_1 < ... < x_N inside a bounded interval."""

    levels: np.ndarray
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        levels = _frozen(self.levels).reshape(-1)
        object.__setattr__(self, "levels", levels)
        if levels.size < 2:
            raise ValueError("a state space needs at least 2 levels")
        if not np.all(np.diff(levels) > 0):
            raise ValueError("levels must be strictly increasing")
        if self.bounds is None:
            bounds = (float(levels[0]), float(levels[-1]))
        else:
            bounds = (float(self.bounds[0]), float(self.bounds[1]))
        if not (bounds[0] <= levels[0] and levels[-1] <= bounds[1]):
            raise ValueError("levels must lie within bounds")
        object.__setattr__(self, "bounds", bounds)

    @property
    def n(self) -> int:
        return self.levels.size


@dataclass(frozen=True)
class Step:
    s: int
    a: int
    r: float


@dataclass(frozen=True)
class StateActionTrajectory:
    """Discrete (state, action, reward) sequence.

    ``states[t]`` is the state observed before ``actions[t]`` is taken, and
    ``rewards[t]`` is the reward received for that step.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    n_states: int
    n_actions: int

    def __post_init__(self):
        states = _frozen(self.states, dtype=np.int64).reshape(-1)
        actions = _frozen(self.actions, dtype=np.int64).reshape(-1)
        rewards = _frozen(self.rewards).reshape(-1)
        for name, arr in (("states", states), ("actions", actions), ("rewards", rewards)):
            object.__setattr__(self, name, arr)
        if not (states.size == actions.size == rewards.size):
            raise ValueError("states, actions and rewards must have equal length")
        if states.size < 2:
            raise ValueError("a trajectory needs at least 2 steps")
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")
        if states.min() < 0 or states.max() >= self.n_states:
            raise ValueError("state id out of range")
        if actions.min() < 0 or actions.max() >= self.n_actions:
            raise ValueError("action id out of range")
        if not np.all(np.isfinite(rewards)):
            raise ValueError("rewards must be finite")

    @classmethod
    def from_steps(cls, steps: Iterable[Step | tuple], n_states: int, n_actions: int):
        steps = [s if isinstance(s, Step) else Step(*s) for s in steps]
        return cls(
            [s.s for s in steps],
            [s.a for s in steps],
            [s.r for s in steps],
            n_states,
            n_actions,
        )

    def __len__(self) -> int:
        return self.states.size

    @property
    def steps(self) -> list[Step]:
        return [Step(int(s), int(a), float(r)) for s, a, r in zip(self.states, self.actions, self.rewards)]


def quantize(trace: ScalarTrace, space: CrispStateSpace) -> np.ndarray:
    """Map each sample to the index of its nearest level (ties go to the lower index)."""
    dist = np.abs(trace.samples[:, None] - space.levels[None, :])
    # argmin returns the first minimum, which is the lower index on ties
    return np.argmin(dist, axis=1)


# --------------------------------------------------------------------------
# file formats


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt:
        fmt = fmt.lower()
    else:
        fmt = path.suffix.lstrip(".").lower()
    if fmt not in ("csv", "json"):
        raise TraceFormatError(f"unknown trace format {fmt!r} for {path}")
    return fmt


def load_trace(path, format: str | None = None) -> ScalarTrace:
    """Read a trace from a ``t,value`` CSV or a ``{"dt", "samples"}`` JSON document.

    Raises:
        TraceFormatError: the file is malformed or its timestamps are not uniform.
        TraceInvariantError: parsed values violate the trace invariants.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    try:
        text = path.read_text()
    except OSError as exc:
        raise TraceFormatError(f"cannot read {path}: {exc}") from exc

    if fmt == "json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict) or "dt" not in doc or "samples" not in doc:
            raise TraceFormatError(f"{path}: JSON trace needs 'dt' and 'samples'")
        try:
            samples = [float(v) for v in doc["samples"]]
            dt = float(doc["dt"])
        except (TypeError, ValueError) as exc:
            raise TraceFormatError(f"{path}: non-numeric value: {exc}") from exc
        return ScalarTrace(samples, dt, str(doc.get("label", path.stem)))

    rows = list(csv.reader(text.splitlines()))
    if not rows or [c.strip() for c in rows[0]] != ["t", "value"]:
        raise TraceFormatError(f"{path}: expected CSV header 't,value'")
    times, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise TraceFormatError(f"{path}: line {lineno}: expected 2 columns")
        try:
            times.append(float(row[0]))
            values.append(float(row[1]))
        except ValueError as exc:
            raise TraceFormatError(f"{path}: line {lineno}: {exc}") from exc
    if len(times) < 2:
        raise TraceFormatError(f"{path}: need at least 2 rows to infer dt")
    dt = times[1] - times[0]
    if not dt > 0:
        raise TraceInvariantError(f"{path}: dt must be > 0, got {dt}")
    steps = np.diff(times)
    if np.any(np.abs(steps - dt) > 1e-9 * dt):
        raise TraceFormatError(f"{path}: non-uniform sampling")
    return ScalarTrace(values, dt, path.stem)


def save_trace(trace: ScalarTrace, path, format: str | None = None) -> Path:
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "json":
        doc = {"dt": trace.dt, "samples": trace.samples.tolist(), "label": trace.label}
        path.write_text(json.dumps(doc) + "\n")
        return path
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "value"])
        for i, v in enumerate(trace.samples.tolist()):
            writer.writerow([repr(i * trace.dt), repr(v)])
    return path


# --------------------------------------------------------------------------
# synthetic generators

SYNTH_KINDS = ("constant", "sine", "ar1", "drive_cycle_like")


def synth_trace(kind: str, params: dict | None, seed: int, length: int) -> ScalarTrace:
    """Deterministic synthetic signal.

    ``params`` may carry ``dt`` (default 1.0) next to the kind-specific keys:

    * constant: ``value``
    * sine: ``amp``, ``period`` (in samples), ``offset``
    * ar1: ``phi``, ``sigma``, ``mean``
    * drive_cycle_like: see :func:`drive_cycle_power`
    """
    params = dict(params or {})
    if length < 1:
        raise ValueError("length must be >= 1")
    dt = float(params.pop("dt", 1.0))
    rng = np.random.default_rng(seed)

    if kind == "constant":
        values = np.full(length, float(params.get("value", 0.0)))
    elif kind == "sine":
        amp = float(params.get("amp", 1.0))
        period = float(params.get("period", 10.0))
        offset = float(params.get("offset", 0.0))
        values = offset + amp * np.sin(2.0 * np.pi * np.arange(length) / period)
    elif kind == "ar1":
        phi = float(params.get("phi", 0.9))
        sigma = float(params.get("sigma", 1.0))
        mean = float(params.get("mean", 0.0))
        if not abs(phi) < 1:
            raise ValueError("ar1 needs |phi| < 1")
        eps = rng.normal(0.0, sigma, size=length)
        values = np.empty(length)
        x = eps[0] / math.sqrt(1.0 - phi * phi)
        values[0] = x
        for i in range(1, length):
            x = phi * x + eps[i]
            values[i] = x
        values += mean
    elif kind == "drive_cycle_like":
        values = drive_cycle_power(rng, length, dt, **params)
    else:
        raise ValueError(f"unknown synthetic trace kind {kind!r}; expected one of {SYNTH_KINDS}")
    return ScalarTrace(values, dt, f"{kind}-seed{seed}")


def drive_cycle_speed(
    rng: np.random.Generator,
    length: int,
    dt: float,
    v_cruise: Sequence[float] = (8.0, 22.0),
    accel: Sequence[float] = (0.6, 1.8),
    decel: Sequence[float] = (0.8, 2.5),
    cruise_s: Sequence[float] = (15.0, 60.0),
    idle_s: Sequence[float] = (3.0, 15.0),
    jitter: float = 0.35,
) -> tuple[np.ndarray, np.ndarray]:
    """Stop-and-go speed profile: idle, accelerate, noisy cruise, brake, repeat.

    Returns (speed m/s, acceleration m/s^2) arrays of ``length`` samples.
    """
    speeds = np.empty(length)
    accels = np.empty(length)
    v = 0.0
    i = 0

    def emit(a):
        nonlocal v, i
        a_eff = max(a, -v / dt)
        speeds[i] = v
        accels[i] = a_eff
        v = max(0.0, v + a_eff * dt)
        i += 1

    while i < length:
        for _ in range(int(rng.uniform(*idle_s) / dt)):
            if i >= length:
                break
            emit(0.0)
        target = rng.uniform(*v_cruise)
        rate = rng.uniform(*accel)
        while i < length and v < target:
            emit(min(rate, (target - v) / dt) + jitter * rng.normal())
        for _ in range(int(rng.uniform(*cruise_s) / dt)):
            if i >= length:
                break
            # noisy cruise pulled back toward the target speed
            emit(0.3 * (target - v) + jitter * rng.normal())
        rate = rng.uniform(*decel)
        while i < length and v > 0.0:
            emit(-min(rate, v / dt) + 0.5 * jitter * rng.normal())
    return speeds, accels


def drive_cycle_power(
    rng: np.random.Generator,
    length: int,
    dt: float,
    power: dict | None = None,
    **speed_params,
) -> np.ndarray:
    """Nonnegative tractive power demand (kW) along a synthetic drive cycle."""
    model = PowerModel(**(power or {}))
    v, a = drive_cycle_speed(rng, length, dt, **speed_params)
    return np.maximum(0.0, model.power(v, a))
