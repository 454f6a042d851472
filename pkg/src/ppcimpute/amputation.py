"""Impose MCAR or right-tailed MAR missingness on complete data.

Rows are made incomplete one pattern at a time: every target column of the
pattern is deleted jointly in an affected row. Under MARr the probability
that row ``i`` is affected is ``expit(s_i + c)`` where ``s`` is the
standardized weighted sum score and ``c`` is chosen so that the expected
missing fraction equals the requested proportion.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

from .data import Dataset, RngStream

INTERCEPT_TOL = 1e-6


class Mechanism(str, enum.Enum):
    MCAR = "mcar"
    MARR = "marr"


class AmputationError(ValueError):
    pass


@dataclass(frozen=True)
class AmputePattern:
    targets: tuple[str, ...]
    weights: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "weights", dict(self.weights))
        if not self.targets:
            raise AmputationError("pattern needs at least one target column")


@dataclass(frozen=True)
class AmputeSpec:
    pattern: AmputePattern
    mechanism: Mechanism
    proportion: float

    def __post_init__(self):
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        if not 0.0 < self.proportion < 1.0:
            raise AmputationError(f"proportion must lie in (0, 1), got {self.proportion}")
        if self.mechanism is Mechanism.MARR:
            w = self.pattern.weights
            if not w or all(v == 0 for v in w.values()):
                raise AmputationError("MARr needs at least one nonzero weight")


def raw_wss(data: Dataset, weights: Mapping[str, float]) -> np.ndarray:
    score = np.zeros(data.n)
    for name, w in weights.items():
        col = data[name]
        if not col.observed.all():
            raise AmputationError(f"weight column {name!r} has missing cells")
        score += float(w) * col.values
    return score


def compute_wss(data: Dataset, weights: Mapping[str, float]) -> np.ndarray:
    """Weighted sum score, standardized to mean 0 and sample sd 1 (ddof=1).

    A constant score is returned centred but unscaled (all zeros).
    """
    score = raw_wss(data, weights)
    score = score - score.mean()
    sd = score.std(ddof=1) if score.size > 1 else 0.0
    if sd > 0:
        score = score / sd
    return score


def solve_intercept(score: np.ndarray, proportion: float, tol: float = INTERCEPT_TOL) -> float:
    """Find ``c`` with ``mean(expit(score + c)) == proportion`` by bisection."""
    lo, hi = -1.0, 1.0
    f = lambda c: expit(score + c).mean() - proportion
    for _ in range(200):
        if f(lo) <= 0:
            break
        lo *= 2
    for _ in range(200):
        if f(hi) >= 0:
            break
        hi *= 2
    if f(lo) > 0 or f(hi) < 0:
        raise AmputationError("could not bracket the logistic intercept")
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    raise AmputationError("bisection for the logistic intercept did not converge")


def missing_probabilities(data: Dataset, spec: AmputeSpec) -> np.ndarray:
    """Per-row probability of being made incomplete."""
    if spec.mechanism is Mechanism.MCAR:
        return np.full(data.n, spec.proportion)
    score = compute_wss(data, spec.pattern.weights)
    if not np.any(score != 0):
        raise AmputationError("weighted sum score has zero variance; MARr is undefined")
    c = solve_intercept(score, spec.proportion)
    return expit(score + c)


def ampute(data: Dataset, spec: AmputeSpec, rng: RngStream | np.random.Generator) -> Dataset:
    """Return a copy of ``data`` with the pattern's targets deleted in sampled rows."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    for name in spec.pattern.targets:
        if not data[name].observed.all():
            raise AmputationError(f"target column {name!r} already has missing cells")
    prob = missing_probabilities(data, spec)
    hit = gen.random(data.n) < prob
    out = data
    for name in spec.pattern.targets:
        col = out[name]
        out = out.replace(name, col.values, col.observed & ~hit)
    return out
