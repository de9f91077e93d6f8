"""Finite Markov chains: transition counting, MLE estimation, n-step propagation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

STOCHASTIC_TOL = 1e-12
ZERO_ROW_POLICIES = ("self_loop", "uniform")


class ConvergenceError(RuntimeError):
    """Power iteration did not settle (periodic or reducible chain)."""


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TransitionCounts:
    """Transition tallies M_ij; entries may be fractional under soft assignment."""

    counts: np.ndarray

    def __post_init__(self):
        counts = _frozen(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("counts must be a square matrix")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ValueError("counts must be finite and nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic N x N matrix."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2 or probs.shape[0] != probs.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        dev = np.abs(probs.sum(axis=1) - 1.0)
        if np.any(dev > STOCHASTIC_TOL):
            row = int(np.argmax(dev))
            raise ValueError(f"row {row} sums to {probs[row].sum()!r}, not 1")
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def identity(cls, n: int) -> "TransitionMatrix":
        return cls(np.eye(n))

    def to_json(self) -> str:
        return json.dumps(self.probs.tolist())

    @classmethod
    def from_json(cls, text: str) -> "TransitionMatrix":
        return cls(json.loads(text))


@dataclass(frozen=True)
class StateDistribution:
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs).reshape(-1)
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValueError(f"distribution sums to {probs.sum()!r}, not 1")
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return self.probs.size

    @classmethod
    def point(cls, i: int, n: int) -> "StateDistribution":
        p = np.zeros(n)
        p[i] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, n: int) -> "StateDistribution":
        return cls(np.full(n, 1.0 / n))


def count_transitions(state_sequence: Sequence[int], n: int) -> TransitionCounts:
    """Tally adjacent pairs (i, j) in a state-index sequence."""
    seq = np.asarray(state_sequence, dtype=np.int64).reshape(-1)
    if seq.size < 2:
        raise ValueError("need at least 2 states to count transitions")
    if seq.min() < 0 or seq.max() >= n:
        bad = int(seq[(seq < 0) | (seq >= n)][0])
        raise IndexError(f"state index {bad} out of range for {n} states")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (seq[:-1], seq[1:]), 1)
    return TransitionCounts(counts)


def estimate(counts: TransitionCounts, zero_row_policy: str = "self_loop") -> TransitionMatrix:
    """Maximum-likelihood transition matrix p_ij = M_ij / M_i.

    Rows that were never left (M_i = 0) are completed by ``zero_row_policy``:
    ``self_loop`` keeps the chain in place, ``uniform`` spreads mass as 1/N.
    """
    if zero_row_policy not in ZERO_ROW_POLICIES:
        raise ValueError(f"zero_row_policy must be one of {ZERO_ROW_POLICIES}")
    m = counts.counts
    n = counts.n
    totals = m.sum(axis=1)
    probs = np.zeros((n, n))
    seen = totals > 0
    probs[seen] = m[seen] / totals[seen, None]
    for i in np.flatnonzero(~seen):
        if zero_row_policy == "self_loop":
            probs[i, i] = 1.0
        else:
            probs[i, :] = 1.0 / n
    return TransitionMatrix(probs)


def _check_dims(p: np.ndarray, pi: TransitionMatrix):
    if p.size != pi.n:
        raise ValueError(f"dimension mismatch: distribution has {p.size} states, matrix {pi.n}")


def propagate_vector(p: np.ndarray, pi: TransitionMatrix, n_steps: int) -> np.ndarray:
    """p^T Pi^n by repeated vector-matrix products, renormalized each step."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    p = np.asarray(p, dtype=float)
    _check_dims(p, pi)
    out = p.copy()
    mat = pi.probs
    for _ in range(n_steps):
        out = out @ mat
        # keep the sum pinned at 1 over long horizons; rows are only stochastic to 1e-12
        out /= out.sum()
    return out


def propagate(p: StateDistribution, pi: TransitionMatrix, n_steps: int) -> StateDistribution:
    if n_steps == 0:
        _check_dims(p.probs, pi)
        return p
    out = propagate_vector(p.probs, pi, n_steps)
    return StateDistribution(np.clip(out, 0.0, 1.0))


def stationary(pi: TransitionMatrix, tol: float = 1e-13, max_iter: int = 1_000_000) -> StateDistribution:
    """Stationary distribution by power iteration from the uniform start.

    Stops once ``max |pi^T P - pi^T| <= tol``.

    Raises:
        ConvergenceError: no fixed point within ``max_iter`` products.
    """
    x = np.full(pi.n, 1.0 / pi.n)
    mat = pi.probs
    for _ in range(max_iter):
        y = x @ mat
        y /= y.sum()
        if np.max(np.abs(y - x)) <= tol:
            return StateDistribution(x)
        x = y
    raise ConvergenceError(f"power iteration did not converge within {max_iter} steps")
