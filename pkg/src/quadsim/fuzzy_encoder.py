"""Fuzzy encoding of a bounded scalar onto a Markov chain over fuzzy subsets.

A value is fuzzified into a possibility vector (raw membership degrees),
normalized into a probability vector, pushed through the transition matrix,
and decoded back to a scalar as the volume-weighted mean of the membership
centroids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .markov_chain import (
    STOCHASTIC_TOL,
    TransitionMatrix,
    count_transitions,
    estimate,
    TransitionCounts,
)
from .trace_model import ScalarTrace

FAMILY_KINDS = ("triangular", "trapezoidal", "gaussian", "indicator_partition")
ASSIGNMENT_RULES = ("argmax", "soft")
COVERAGE_GRID = 2001

_trapezoid = getattr(np, "trapezoid", None) or np.trapz
QUADRATURE_PANELS = 10_000


class InvalidFamilyError(ValueError):
    pass


class CoverageError(ValueError):
    """Some point of the domain has zero membership in every fuzzy subset."""

    def __init__(self, message: str, index: int | None = None, value: float | None = None):
        super().__init__(message)
        self.index = index
        self.value = value


# --------------------------------------------------------------------------
# membership families


def _linear_moments(x0, x1, y0, y1):
    """(integral of y, integral of x*y) over one linear piece from (x0, y0) to (x1, y1)."""
    w = x1 - x0
    area = 0.5 * w * (y0 + y1)
    moment = w / 6.0 * (x0 * (2.0 * y0 + y1) + x1 * (y0 + 2.0 * y1))
    return area, moment


def _piecewise_moments(xs, ys, lo, hi):
    pts = np.unique(np.concatenate(([lo, hi], xs[(xs > lo) & (xs < hi)])))
    vals = np.interp(pts, xs, ys, left=0.0, right=0.0)
    area = moment = 0.0
    for k in range(pts.size - 1):
        a, m = _linear_moments(pts[k], pts[k + 1], vals[k], vals[k + 1])
        area += a
        moment += m
    return area, moment


def _gaussian_moments(mu, sigma, lo, hi):
    root2 = math.sqrt(2.0)
    cdf = lambda z: 0.5 * (1.0 + math.erf(z / root2))  # noqa: E731
    za, zb = (lo - mu) / sigma, (hi - mu) / sigma
    area = sigma * math.sqrt(2.0 * math.pi) * (cdf(zb) - cdf(za))
    # d/dy exp(-(y-mu)^2 / 2s^2) = -(y-mu)/s^2 * exp(...)
    ea, eb = math.exp(-0.5 * za * za), math.exp(-0.5 * zb * zb)
    moment = mu * area - sigma * sigma * (eb - ea)
    return area, moment


@dataclass(frozen=True)
class MembershipFamily:
    """N membership functions over ``bounds`` with precomputed volumes and centroids.

    Centroids are normalized, i.e. the first moment divided by the volume.
    """

    kind: str
    n: int
    bounds: tuple[float, float]
    params: dict = field(default_factory=dict)
    volumes: np.ndarray = field(init=False, repr=False, compare=False)
    centroids: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise InvalidFamilyError(f"unknown family kind {self.kind!r}; expected one of {FAMILY_KINDS}")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidFamilyError("a family needs n >= 2 functions")
        lo, hi = (float(b) for b in self.bounds)
        if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
            raise InvalidFamilyError(f"degenerate bounds {self.bounds}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "bounds", (lo, hi))
        object.__setattr__(self, "params", dict(self.params or {}))
        self._build()
        self._check_coverage()

    # construction -----------------------------------------------------

    @property
    def spacing(self) -> float:
        lo, hi = self.bounds
        return (hi - lo) / (self.n - 1)

    def _positive_param(self, name, default):
        value = float(self.params.get(name, default))
        if not (math.isfinite(value) and value > 0):
            raise InvalidFamilyError(f"parameter {name!r} must be positive, got {value}")
        return value

    def _build(self):
        lo, hi = self.bounds
        n = self.n
        h = self.spacing
        object.__setattr__(self, "_peaks", lo + h * np.arange(n))
        object.__setattr__(self, "_pieces", None)
        object.__setattr__(self, "_edges", None)
        object.__setattr__(self, "_sigma", None)

        if self.kind == "indicator_partition":
            edges = self.params.get("edges")
            if edges is None:
                edges = np.linspace(lo, hi, n + 1)
            edges = np.asarray(edges, dtype=float)
            if edges.size != n + 1 or not np.all(np.diff(edges) > 0):
                raise InvalidFamilyError("indicator edges must be n+1 strictly increasing values")
            if edges[0] != lo or edges[-1] != hi:
                raise InvalidFamilyError("indicator edges must start and end at the bounds")
            object.__setattr__(self, "_edges", edges)
            volumes = np.diff(edges)
            centroids = 0.5 * (edges[:-1] + edges[1:])
        elif self.kind in ("triangular", "trapezoidal"):
            if self.kind == "triangular":
                w = self._positive_param("width", h)
                shapes = [(np.array([p - w, p, p + w]), np.array([0.0, 1.0, 0.0])) for p in self._peaks]
            else:
                top = self._positive_param("top", 0.25 * h)
                ramp = self._positive_param("ramp", 0.5 * h)
                shapes = [
                    (np.array([p - top - ramp, p - top, p + top, p + top + ramp]), np.array([0.0, 1.0, 1.0, 0.0]))
                    for p in self._peaks
                ]
            object.__setattr__(self, "_pieces", shapes)
            object.__setattr__(self, "_px", np.stack([xs for xs, _ in shapes]))
            object.__setattr__(self, "_py", np.stack([ys for _, ys in shapes]))
            moments = [_piecewise_moments(xs, ys, lo, hi) for xs, ys in shapes]
            volumes = np.array([m[0] for m in moments])
            centroids = np.array([m[1] for m in moments]) / volumes
        else:
            sigma = self._positive_param("sigma", 0.5 * h)
            object.__setattr__(self, "_sigma", sigma)
            moments = [_gaussian_moments(p, sigma, lo, hi) for p in self._peaks]
            volumes = np.array([m[0] for m in moments])
            centroids = np.array([m[1] for m in moments]) / volumes

        if np.any(volumes <= 0):
            raise InvalidFamilyError("every membership function needs positive volume")
        centroids = np.clip(centroids, lo, hi)
        for name, arr in (("volumes", volumes), ("centroids", centroids)):
            arr = np.array(arr, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def _check_coverage(self):
        grid = np.linspace(*self.bounds, COVERAGE_GRID)
        total = self.memberships(grid).max(axis=1)
        if np.any(total <= 0):
            x = float(grid[np.argmax(total <= 0)])
            raise CoverageError(f"coverage violation: membership family leaves x={x!r} uncovered", value=x)

    # evaluation -------------------------------------------------------

    def memberships(self, x) -> np.ndarray:
        """theta(x); shape (N,) for scalar x, (M, N) for an array of M points."""
        scalar = np.ndim(x) == 0
        xs = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), *self.bounds)
        if self.kind == "indicator_partition":
            idx = np.searchsorted(self._edges, xs, side="right") - 1
            idx = np.clip(idx, 0, self.n - 1)
            out = np.zeros((xs.size, self.n))
            out[np.arange(xs.size), idx] = 1.0
        elif self._pieces is not None:
            # every function is piecewise linear on its own breakpoints; evaluate all at once
            x = xs[:, None]
            px, py = self._px, self._py
            out = np.zeros((xs.size, self.n))
            for j in range(px.shape[1] - 1):
                x0, x1 = px[:, j], px[:, j + 1]
                inside = (x >= x0) & (x < x1)
                frac = (x - x0) / (x1 - x0)
                out = np.where(inside, py[:, j] + frac * (py[:, j + 1] - py[:, j]), out)
        else:
            out = np.exp(-0.5 * ((xs[:, None] - self._peaks[None, :]) / self._sigma) ** 2)
        return out[0] if scalar else out

    def __call__(self, x):
        return self.memberships(x)

    # serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "n": self.n, "bounds": list(self.bounds), "params": params}

    @classmethod
    def from_dict(cls, doc: dict) -> "MembershipFamily":
        try:
            return cls(doc["kind"], doc["n"], tuple(doc["bounds"]), doc.get("params") or {})
        except (KeyError, TypeError) as exc:
            raise InvalidFamilyError(f"malformed family document: {exc}") from exc


def make_family(kind: str, n: int, bounds, params: dict | None = None) -> MembershipFamily:
    return MembershipFamily(kind, n, tuple(bounds), params or {})


def numeric_moments(fam: MembershipFamily, panels: int = QUADRATURE_PANELS) -> tuple[np.ndarray, np.ndarray]:
    """Volumes and normalized centroids by composite trapezoid quadrature."""
    grid = np.linspace(*fam.bounds, panels + 1)
    theta = fam.memberships(grid)
    volumes = _trapezoid(theta, grid, axis=0)
    moments = _trapezoid(theta * grid[:, None], grid, axis=0)
    return volumes, moments / volumes


# --------------------------------------------------------------------------
# encoding pipeline


@dataclass(frozen=True)
class PossibilityVector:
    k: np.ndarray

    def __post_init__(self):
        k = np.array(self.k, dtype=float).reshape(-1)
        if np.any(k < 0) or np.any(k > 1):
            raise ValueError("possibility degrees must lie in [0, 1]")
        k.setflags(write=False)
        object.__setattr__(self, "k", k)


@dataclass(frozen=True)
class FuzzyProbabilityVector:
    k1: np.ndarray

    def __post_init__(self):
        k1 = np.array(self.k1, dtype=float).reshape(-1)
        if np.any(k1 < 0) or np.any(k1 > 1) or abs(k1.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValueError("fuzzy probability vector must be a distribution")
        k1.setflags(write=False)
        object.__setattr__(self, "k1", k1)


def fuzzify(x: float, fam: MembershipFamily) -> PossibilityVector:
    """Membership degrees of ``x`` (clamped into the family's bounds)."""
    return PossibilityVector(fam.memberships(float(x)))


def normalize(k: PossibilityVector) -> FuzzyProbabilityVector:
    total = k.k.sum()
    if not total > 0:
        raise CoverageError("coverage violation: all membership degrees are zero")
    return FuzzyProbabilityVector(k.k / total)


def fem_step(k1: FuzzyProbabilityVector, pi: TransitionMatrix) -> FuzzyProbabilityVector:
    if k1.k1.size != pi.n:
        raise ValueError(f"dimension mismatch: vector has {k1.k1.size} entries, matrix {pi.n}")
    out = k1.k1 @ pi.probs
    return FuzzyProbabilityVector(out / out.sum())


def _normalized_rows(theta: np.ndarray, xs: np.ndarray) -> np.ndarray:
    totals = theta.sum(axis=1)
    if np.any(totals <= 0):
        i = int(np.argmax(totals <= 0))
        raise CoverageError(f"coverage violation at sample {i} (x={xs[i]!r})", index=i, value=float(xs[i]))
    return theta / totals[:, None]


def fem_weights(x, fam: MembershipFamily, pi: TransitionMatrix, n_steps: int = 1) -> np.ndarray:
    """K1(x)^T Pi^n for one value (shape (N,)) or many (shape (M, N))."""
    if pi.n != fam.n:
        raise ValueError(f"dimension mismatch: family has {fam.n} functions, matrix {pi.n} states")
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    w = _normalized_rows(fam.memberships(xs), xs)
    for _ in range(n_steps):
        w = w @ pi.probs
        w /= w.sum(axis=1, keepdims=True)
    return w[0] if np.ndim(x) == 0 else w


def decode(weights, fam: MembershipFamily):
    """Volume-weighted centroid mean sum_j w_j V_j c_j / sum_j w_j V_j."""
    weights = np.asarray(weights, dtype=float)
    mass = weights * fam.volumes
    return (mass @ fam.centroids) / mass.sum(axis=-1)


def fem_predict(x, fam: MembershipFamily, pi: TransitionMatrix, n_steps: int = 1):
    """Expected value of ``x`` after ``n_steps`` transitions of the fuzzy chain.

    Accepts a scalar or an array of values; the output has the same shape.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    w = fem_weights(x, fam, pi, n_steps)
    out = decode(w, fam)
    lo, hi = fam.centroids.min(), fam.centroids.max()
    # round-off can put a convex combination an ulp outside its hull
    out = np.clip(out, lo, hi)
    return float(out) if np.ndim(x) == 0 else out


def fem_counts(trace: ScalarTrace, fam: MembershipFamily, assignment_rule: str = "argmax") -> TransitionCounts:
    if assignment_rule not in ASSIGNMENT_RULES:
        raise ValueError(f"assignment_rule must be one of {ASSIGNMENT_RULES}")
    if len(trace) < 2:
        raise ValueError("need at least 2 samples to train")
    xs = trace.samples
    k1 = _normalized_rows(fam.memberships(xs), xs)
    if assignment_rule == "argmax":
        return count_transitions(np.argmax(k1, axis=1), fam.n)
    return TransitionCounts(k1[:-1].T @ k1[1:])


def fem_train(
    trace: ScalarTrace,
    fam: MembershipFamily,
    assignment_rule: str = "argmax",
    zero_row_policy: str = "self_loop",
) -> TransitionMatrix:
    """Estimate the fuzzy-state transition matrix from a trace.

    ``argmax`` assigns each sample to its most-member subset (lower index on
    ties); ``soft`` adds K1(x_t)_i * K1(x_t+1)_j to every cell.
    """
    return estimate(fem_counts(trace, fam, assignment_rule), zero_row_policy)


@dataclass(frozen=True)
class FemBundle:
    """A trained predictor: membership family plus transition matrix."""

    family: MembershipFamily
    transition: TransitionMatrix

    def __post_init__(self):
        if self.family.n != self.transition.n:
            raise ValueError("family size and transition matrix size differ")

    def predict(self, x, n_steps: int = 1):
        return fem_predict(x, self.family, self.transition, n_steps)

    @property
    def centroid_range(self) -> tuple[float, float]:
        return float(self.family.centroids.min()), float(self.family.centroids.max())

    def to_dict(self) -> dict:
        return {"family": self.family.to_dict(), "transition": self.transition.probs.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "FemBundle":
        return cls(MembershipFamily.from_dict(doc["family"]), TransitionMatrix(doc["transition"]))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "FemBundle":
        return cls.from_dict(json.loads(Path(path).read_text()))


def train_bundle(trace: ScalarTrace, fam: MembershipFamily, assignment_rule="argmax", zero_row_policy="self_loop"):
    return FemBundle(fam, fem_train(trace, fam, assignment_rule, zero_row_policy))
