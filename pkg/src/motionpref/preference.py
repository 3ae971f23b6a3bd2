"""Composite rewards and preference-pair construction."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import permutations

import numpy as np

LIKERT_MIN, LIKERT_MAX = 1.0, 5.0
STRATEGIES = ("better_vs_worse", "best_vs_worse", "better_vs_worst", "best_vs_worst")
DEFAULT_MIN_MARGIN = 0.5


class ScoreOutOfRange(ValueError):
    pass


def _check_score(name: str, value: float) -> float:
    value = float(value)
    if not (LIKERT_MIN <= value <= LIKERT_MAX):
        raise ScoreOutOfRange(f"{name}={value} outside [{LIKERT_MIN}, {LIKERT_MAX}]")
    return value


@dataclass(frozen=True)
class CandidateScore:
    sample_id: str
    r_align: float
    r_fidelity: float

    def __post_init__(self):
        _check_score("r_align", self.r_align)
        _check_score("r_fidelity", self.r_fidelity)

    @property
    def reward(self) -> float:
        return composite_reward(self.r_align, self.r_fidelity)


@dataclass(frozen=True)
class PreferenceGroup:
    condition_id: str
    candidates: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise ValueError(f"group {self.condition_id!r} needs at least 2 candidates")
        ids = [c.sample_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError(f"group {self.condition_id!r} has duplicate sample ids")

    @classmethod
    def from_dict(cls, d: dict) -> "PreferenceGroup":
        return cls(d["condition_id"], [CandidateScore(**c) for c in d["candidates"]])

    def to_dict(self) -> dict:
        return {"condition_id": self.condition_id, "candidates": [asdict(c) for c in self.candidates]}


@dataclass(frozen=True)
class PreferencePair:
    condition_id: str
    winner_id: str
    loser_id: str
    margin: float

    def to_dict(self) -> dict:
        return asdict(self)


def composite_reward(r_align: float, r_fidelity: float) -> float:
    """Average of the alignment and fidelity scores."""
    return 0.5 * (_check_score("r_align", r_align) + _check_score("r_fidelity", r_fidelity))


def _extreme(candidates, rewards, best: bool):
    # ties go to the lexicographically smallest sample_id
    target = max(rewards.values()) if best else min(rewards.values())
    return min(c.sample_id for c in candidates if rewards[c.sample_id] == target)


def build_pairs(
    group: PreferenceGroup,
    strategy: str = "best_vs_worst",
    min_margin: float = DEFAULT_MIN_MARGIN,
    rewards: dict | None = None,
) -> list:
    """Emit (winner, loser) pairs from one group of scored candidates.

    ``rewards`` overrides the composite reward per sample id (used for relabeling
    checks). Pairs with a margin below ``min_margin`` or without a strict
    preference are dropped. Output is sorted by descending margin, then ids.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if rewards is None:
        rewards = {c.sample_id: c.reward for c in group.candidates}
    ids = [c.sample_id for c in group.candidates]
    best = _extreme(group.candidates, rewards, best=True)
    worst = _extreme(group.candidates, rewards, best=False)

    if strategy == "better_vs_worse":
        raw = [(w, l) for w, l in permutations(ids, 2) if rewards[w] > rewards[l]]
    elif strategy == "best_vs_worse":
        raw = [(best, l) for l in ids if rewards[best] > rewards[l]]
    elif strategy == "better_vs_worst":
        raw = [(w, worst) for w in ids if rewards[w] > rewards[worst]]
    else:
        raw = [(best, worst)] if rewards[best] > rewards[worst] else []

    pairs = [
        PreferencePair(group.condition_id, w, l, rewards[w] - rewards[l])
        for w, l in raw
        if rewards[w] - rewards[l] >= min_margin
    ]
    pairs.sort(key=lambda p: (-p.margin, p.winner_id, p.loser_id))
    return pairs


def dataset_stats(pairs: list, bins: int = 8) -> dict:
    """Counts, margin summary and histogram, and per-condition coverage."""
    margins = np.array([p.margin for p in pairs], dtype=np.float64)
    coverage: dict = {}
    for p in pairs:
        coverage[p.condition_id] = coverage.get(p.condition_id, 0) + 1
    if not len(margins):
        return {
            "count": 0,
            "n_conditions": 0,
            "margin": {"min": 0.0, "max": 0.0, "mean": 0.0},
            "histogram": {"edges": [], "counts": []},
            "per_condition": {},
        }
    counts, edges = np.histogram(margins, bins=bins, range=(0.0, LIKERT_MAX - LIKERT_MIN))
    return {
        "count": int(len(margins)),
        "n_conditions": len(coverage),
        "margin": {"min": float(margins.min()), "max": float(margins.max()), "mean": float(margins.mean())},
        "histogram": {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
        "per_condition": dict(sorted(coverage.items())),
    }


def read_groups(path) -> list:
    with open(path) as fh:
        return [PreferenceGroup.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_pairs(path) -> list:
    with open(path) as fh:
        return [PreferencePair(**json.loads(line)) for line in fh if line.strip()]
