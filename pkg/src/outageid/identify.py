"""Outage hypothesis ranking, the Delta-E rejection filter, and outcome categories."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .scenario import SignatureSet


@dataclass(frozen=True)
class Placement:
    buses: tuple[int, ...]

    def __post_init__(self):
        buses = tuple(int(b) for b in self.buses)
        if not buses:
            raise ValueError("a placement needs at least one PMU")
        if len(set(buses)) != len(buses):
            raise ValueError("duplicate PMU bus in placement")
        if min(buses) < 0:
            raise ValueError("bus indices must be non-negative")
        object.__setattr__(self, "buses", buses)

    @property
    def P(self) -> int:
        return len(self.buses)

    def check(self, n_bus: int) -> None:
        if max(self.buses) >= n_bus:
            raise ValueError(f"placement references bus index {max(self.buses)} >= {n_bus}")


@dataclass(frozen=True)
class Observation:
    placement: Placement
    v_pre: np.ndarray
    v_post: np.ndarray

    def __post_init__(self):
        for name in ("v_pre", "v_post"):
            v = np.asarray(getattr(self, name), dtype=complex)
            if v.shape != (self.placement.P,):
                raise ValueError(f"{name} must have one phasor per PMU")
            object.__setattr__(self, name, v)

    @property
    def delta(self) -> np.ndarray:
        return self.v_post - self.v_pre

    def features(self, mode: str = "ac", metric: str = "complex") -> np.ndarray:
        """Observed counterpart of :meth:`SignatureSet.features`."""
        if mode == "dc":
            return np.angle(self.v_post / self.v_pre)
        d = self.delta
        if metric == "complex":
            return np.concatenate([d.real, d.imag])
        if metric == "polar":
            return np.concatenate([np.abs(self.v_post) - np.abs(self.v_pre), np.angle(self.v_post / self.v_pre)])
        raise ValueError(f"unknown metric {metric!r}")


class Category(str, enum.Enum):
    CORRECT = "correct"
    MISIDENTIFIED = "misidentified"
    CORRECT_FILTERED = "correct_filtered"
    MISIDENTIFIED_FILTERED = "misidentified_filtered"


CATEGORIES = tuple(Category)


@dataclass(frozen=True)
class Ranking:
    branch_ids: tuple[int, ...]
    errors: tuple[float, ...]
    mode: str = "ac"

    def __len__(self):
        return len(self.branch_ids)

    def head(self, n: int = 5) -> list[tuple[int, float]]:
        return list(zip(self.branch_ids[:n], self.errors[:n]))


@dataclass(frozen=True)
class Verdict:
    identified: int
    E1: float
    E2: float
    delta_E: float
    conclusive: bool
    epsilon: float


def _distances(features: np.ndarray, observed: np.ndarray, solved: np.ndarray) -> np.ndarray:
    diff = features - observed
    e = np.sqrt(np.einsum("...k,...k->...", diff, diff))
    return np.where(solved, e, np.inf)


def error_vector(sigs: SignatureSet, obs: Observation, metric: str = "complex") -> np.ndarray:
    """E for every candidate, in candidate order; unsolved candidates get +inf."""
    obs.placement.check(sigs.n_bus)
    F = sigs.features(obs.placement.buses, metric)
    return _distances(F, obs.features(sigs.mode, metric), sigs.solved)


def error_measure(sigs: SignatureSet, branch_id: int, obs: Observation, metric: str = "complex") -> float:
    """Euclidean distance between the expected and observed change at the PMU buses."""
    i = sigs.index(branch_id)
    if not sigs.solved[i]:
        return math.inf
    obs.placement.check(sigs.n_bus)
    f = sigs.features(obs.placement.buses, metric)[i]
    return float(np.linalg.norm(f - obs.features(sigs.mode, metric)))


def rank_errors(branch_ids, errors, mode: str = "ac") -> Ranking:
    ids = np.asarray(branch_ids)
    errors = np.asarray(errors, dtype=float)
    if ids.size == 0:
        raise ValueError("cannot rank an empty candidate set")
    # lexsort: last key is primary, so ties fall back to branch id
    order = np.lexsort((ids, errors))
    return Ranking(tuple(int(i) for i in ids[order]), tuple(float(e) for e in errors[order]), mode)


def rank_candidates(sigs: SignatureSet, obs: Observation, metric: str = "complex") -> Ranking:
    """All candidates sorted by ascending E, ties by ascending branch id."""
    if sigs.L == 0:
        raise ValueError("cannot rank an empty candidate set")
    return rank_errors(sigs.candidates, error_vector(sigs, obs, metric), sigs.mode)


def apply_filter(ranking: Ranking, epsilon: float) -> Verdict:
    """Flag the identification inconclusive when the top-two gap is below ``epsilon``."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if len(ranking) == 0:
        raise ValueError("empty ranking")
    e1 = ranking.errors[0]
    e2 = ranking.errors[1] if len(ranking) > 1 else math.inf
    if len(ranking) == 1 or math.isinf(e2) and not math.isinf(e1):
        gap = math.inf
    elif math.isinf(e1):
        gap = math.nan
    else:
        gap = e2 - e1
    conclusive = bool(gap >= epsilon)
    return Verdict(ranking.branch_ids[0], e1, e2, gap, conclusive, float(epsilon))


def categorize(verdict: Verdict, actual: int) -> Category:
    hit = verdict.identified == actual
    if verdict.conclusive:
        return Category.CORRECT if hit else Category.MISIDENTIFIED
    return Category.CORRECT_FILTERED if hit else Category.MISIDENTIFIED_FILTERED


def category_codes(identified, actual, delta_E, epsilon: float) -> np.ndarray:
    """Vectorised :func:`categorize`: codes index into :data:`CATEGORIES`."""
    hit = np.asarray(identified) == np.asarray(actual)
    filtered = ~(np.asarray(delta_E) >= epsilon)
    return np.where(hit, 0, 1) + 2 * filtered
