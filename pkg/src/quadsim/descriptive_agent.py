"""Descriptive vehicle: tabular induction/policy learning and self-consistency.

The induction table L(a, s') is the empirical frequency of the state that
follows action a; the policy table R(s, a) is the empirical mean discounted
return of taking a in s. Both are reduced to argmax maps F_A and P_A, and the
pair is scored by how well the maps reproduce each other on observed data.

Index convention: step t of a trajectory is (s_t, a_t, r_t). The state that
an action *induces* is the next recorded state, so F_A(a_t) is compared to
s_{t+1}, while P_A(s_t) is compared to a_t.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, replace
from typing import NamedTuple

import numpy as np

from .trace_model import StateActionTrajectory

DEFAULT_GAMMA = 0.9


def _argmax_low(table: np.ndarray) -> np.ndarray:
    # np.argmax picks the first maximum, i.e. the lower index on ties
    return np.argmax(table, axis=1)


@dataclass(frozen=True)
class InductionModel:
    """L(a, s') table (n_actions x n_states) and its argmax map F_A.

    Rows of unobserved actions are all zero and flagged in ``observed``;
    their F_A entry is 0.
    """

    likelihood: np.ndarray
    observed: np.ndarray

    @property
    def f_map(self) -> np.ndarray:
        return _argmax_low(self.likelihood)

    @property
    def n_actions(self) -> int:
        return self.likelihood.shape[0]

    @property
    def n_states(self) -> int:
        return self.likelihood.shape[1]

    def __call__(self, action: int) -> int:
        return int(self.f_map[action])

    def to_dict(self) -> dict:
        return {"likelihood": self.likelihood.tolist(), "observed": self.observed.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "InductionModel":
        return cls(np.asarray(doc["likelihood"], dtype=float), np.asarray(doc["observed"], dtype=bool))


@dataclass(frozen=True)
class PolicyModel:
    """R(s, a) table (n_states x n_actions) and its argmax map P_A.

    Unobserved cells hold -inf so they are never selected while any
    observed action exists for that state.
    """

    reward: np.ndarray

    @property
    def p_map(self) -> np.ndarray:
        return _argmax_low(self.reward)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def __call__(self, state: int) -> int:
        return int(self.p_map[state])

    def to_dict(self) -> dict:
        # JSON has no infinity; unobserved cells are written as null
        rows = [[None if math.isinf(v) else v for v in row] for row in self.reward.tolist()]
        return {"reward": rows}

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicyModel":
        table = [[-math.inf if v is None else v for v in row] for row in doc["reward"]]
        return cls(np.asarray(table, dtype=float))


@dataclass(frozen=True)
class ConsistencyReport:
    d_state: float
    d_action: float
    g_f_violations: int
    g_p_violations: int
    n_eval: int

    @property
    def violations(self) -> int:
        return self.g_f_violations + self.g_p_violations

    @property
    def objective(self) -> tuple[int, float]:
        """Lexicographic score: constraint violations first, then summed residuals."""
        return (self.violations, self.d_state + self.d_action)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def format(self) -> str:
        return (
            f"d_state        {self.d_state:.6f}\n"
            f"d_action       {self.d_action:.6f}\n"
            f"g_f violations {self.g_f_violations}\n"
            f"g_p violations {self.g_p_violations}\n"
            f"eval steps     {self.n_eval}"
        )


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """G_t = sum_k gamma^k r_{t+k}, truncated at the end of the record."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def fit_induction(traj: StateActionTrajectory, mask=None) -> InductionModel:
    """Empirical next-state frequencies per action over transitions t -> t+1.

    ``mask`` (length len(traj) - 1) restricts which transitions are counted.
    """
    a = traj.actions[:-1]
    s_next = traj.states[1:]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        a, s_next = a[mask], s_next[mask]
    counts = np.zeros((traj.n_actions, traj.n_states))
    np.add.at(counts, (a, s_next), 1.0)
    totals = counts.sum(axis=1)
    observed = totals > 0
    likelihood = np.zeros_like(counts)
    likelihood[observed] = counts[observed] / totals[observed, None]
    return InductionModel(likelihood, observed)


def fit_policy(traj: StateActionTrajectory, gamma: float = DEFAULT_GAMMA, mask=None) -> PolicyModel:
    """Empirical mean discounted return per (state, action) cell."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    returns = discounted_returns(traj.rewards, gamma)
    s, a = traj.states, traj.actions
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        s, a, returns = s[mask], a[mask], returns[mask]
    sums = np.zeros((traj.n_states, traj.n_actions))
    counts = np.zeros_like(sums)
    np.add.at(sums, (s, a), returns)
    np.add.at(counts, (s, a), 1.0)
    reward = np.full_like(sums, -np.inf)
    seen = counts > 0
    reward[seen] = sums[seen] / counts[seen]
    return PolicyModel(reward)


def fit(traj: StateActionTrajectory, gamma: float = DEFAULT_GAMMA) -> tuple[InductionModel, PolicyModel]:
    if len(traj) < 2:
        raise ValueError("trajectory shorter than 2 steps")
    return fit_induction(traj), fit_policy(traj, gamma)


def _check_shapes(f: InductionModel, p: PolicyModel, traj: StateActionTrajectory):
    if (f.n_actions, f.n_states) != (traj.n_actions, traj.n_states) or (p.n_states, p.n_actions) != (
        traj.n_states,
        traj.n_actions,
    ):
        raise ValueError(
            f"dimension mismatch: trajectory is {traj.n_states} states x {traj.n_actions} actions, "
            f"induction {f.n_states}x{f.n_actions}, policy {p.n_states}x{p.n_actions}"
        )


def residuals(f: InductionModel, p: PolicyModel, traj: StateActionTrajectory) -> dict[str, np.ndarray]:
    """Per-step index residuals behind every consistency quantity."""
    _check_shapes(f, p, traj)
    fm, pm = f.f_map, p.p_map
    s, a = traj.states, traj.actions
    return {
        "state_cycle": np.abs(s - fm[pm[s]]),
        "action_cycle": np.abs(a - pm[fm[a]]),
        "induction": np.abs(traj.states[1:] - fm[a[:-1]]),
        "policy": np.abs(a - pm[s]),
    }


def consistency(
    f: InductionModel,
    p: PolicyModel,
    eval_traj: StateActionTrajectory,
    eps_f: float = 0.0,
    eps_p: float = 0.0,
) -> ConsistencyReport:
    """Score a model pair on an evaluation trajectory.

    ``d_state`` is the mean of |s - F_A(P_A(s))| and ``d_action`` the mean of
    |a - P_A(F_A(a))|; the violation counts tally steps whose induction or
    policy residual exceeds ``eps_f`` / ``eps_p``.
    """
    res = residuals(f, p, eval_traj)
    return ConsistencyReport(
        d_state=float(res["state_cycle"].mean()),
        d_action=float(res["action_cycle"].mean()),
        g_f_violations=int(np.sum(res["induction"] > eps_f)),
        g_p_violations=int(np.sum(res["policy"] > eps_p)),
        n_eval=len(eval_traj),
    )


class RefitResult(NamedTuple):
    induction: InductionModel
    policy: PolicyModel
    report: ConsistencyReport
    rounds: int
    history: list


def _merge_rows(new, old, keep_mask):
    out = new.copy()
    out[keep_mask] = old[keep_mask]
    return out


def refit_until_consistent(
    traj: StateActionTrajectory,
    eval_traj: StateActionTrajectory,
    eps_f: float = 0.0,
    eps_p: float = 0.0,
    max_rounds: int = 10,
    gamma: float = DEFAULT_GAMMA,
    rel_tol: float = 1e-6,
) -> RefitResult:
    """Alternate restricted refits of L and R until the consistency stops improving.

    Each round refits L on the transitions whose step satisfies the policy
    constraint, then refits R on the steps whose transition satisfies the
    induction constraint. Rows left without data keep their previous values.
    The best model pair seen (lexicographic on violations, then residual sum)
    is returned.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    f, p = fit(traj, gamma)
    report = consistency(f, p, eval_traj, eps_f, eps_p)
    best = (report.objective, f, p, report)
    history = [report]
    rounds = 0
    prev_d = report.d_state + report.d_action

    for rounds in range(1, max_rounds + 1):
        res = residuals(f, p, traj)
        policy_ok = res["policy"][:-1] <= eps_p
        f_new = fit_induction(traj, policy_ok)
        f = InductionModel(
            _merge_rows(f_new.likelihood, f.likelihood, ~f_new.observed),
            f_new.observed | f.observed,
        )
        res = residuals(f, p, traj)
        induction_ok = np.append(res["induction"] <= eps_f, True)
        p_new = fit_policy(traj, gamma, induction_ok)
        p = PolicyModel(_merge_rows(p_new.reward, p.reward, np.isinf(p_new.reward) & ~np.isinf(p.reward)))

        report = consistency(f, p, eval_traj, eps_f, eps_p)
        history.append(report)
        if report.objective < best[0]:
            best = (report.objective, f, p, report)
        d = report.d_state + report.d_action
        change = abs(d - prev_d) / max(abs(prev_d), 1e-12) if prev_d else abs(d)
        if change < rel_tol:
            break
        prev_d = d

    _, f_best, p_best, report_best = best
    return RefitResult(f_best, p_best, report_best, rounds, history)
