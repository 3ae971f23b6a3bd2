import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motionpref import preference as pf


def group(rewards: dict, cid="c0"):
    # r_align = r_fidelity = reward keeps the composite equal to the reward
    return pf.PreferenceGroup(cid, [pf.CandidateScore(k, v, v) for k, v in rewards.items()])


def test_composite_reward():
    assert pf.composite_reward(5, 3) == 4.0
    assert pf.composite_reward(2.5, 2.5) == 2.5
    assert pf.composite_reward(1, 5) == pf.composite_reward(5, 1) == 3.0
    with pytest.raises(pf.ScoreOutOfRange):
        pf.composite_reward(0.5, 3)
    with pytest.raises(pf.ScoreOutOfRange):
        pf.CandidateScore("x", 3, 5.5)


def test_group_validation():
    with pytest.raises(ValueError):
        group({"a": 3})
    with pytest.raises(ValueError):
        pf.PreferenceGroup("c", [pf.CandidateScore("a", 1, 1), pf.CandidateScore("a", 2, 2)])


def test_best_vs_worst_example():
    pairs = pf.build_pairs(group({"a": 4.5, "b": 3.0, "c": 2.0}), "best_vs_worst", 0.5)
    assert [(p.winner_id, p.loser_id, p.margin) for p in pairs] == [("a", "c", 2.5)]


def test_five_distinct_better_vs_worse():
    g = group({k: v for k, v in zip("abcde", [1.0, 2.0, 3.0, 4.0, 5.0])})
    pairs = pf.build_pairs(g, "better_vs_worse", 0.0)
    assert len(pairs) == 10
    assert pf.dataset_stats(pairs)["count"] == 10


def test_all_equal_gives_nothing():
    g = group({"a": 3.0, "b": 3.0, "c": 3.0})
    for s in pf.STRATEGIES:
        assert pf.build_pairs(g, s, 0.0) == []


def test_tie_break_and_order():
    g = group({"b": 5.0, "a": 5.0, "d": 1.0, "c": 1.0, "e": 3.0})
    (p,) = pf.build_pairs(g, "best_vs_worst", 0.0)
    assert (p.winner_id, p.loser_id) == ("a", "c")
    pairs = pf.build_pairs(g, "better_vs_worse", 0.0)
    keys = [(-p.margin, p.winner_id, p.loser_id) for p in pairs]
    assert keys == sorted(keys)


def test_min_margin_filter():
    g = group({"a": 3.0, "b": 2.8, "c": 1.0})
    pairs = pf.build_pairs(g, "better_vs_worse", 0.5)
    assert {(p.winner_id, p.loser_id) for p in pairs} == {("a", "c"), ("b", "c")}
    assert all(p.margin >= 0.5 for p in pairs)


def test_unknown_strategy():
    with pytest.raises(ValueError):
        pf.build_pairs(group({"a": 1, "b": 2}), "random")


reward_groups = st.lists(st.integers(0, 8), min_size=2, max_size=7).map(
    lambda xs: group({f"s{i}": 1.0 + 0.5 * x for i, x in enumerate(xs)})
)


def brute(g, strategy):
    r = {c.sample_id: c.reward for c in g.candidates}
    ids = sorted(r)
    best = min(i for i in ids if r[i] == max(r.values()))
    worst = min(i for i in ids if r[i] == min(r.values()))
    allp = {(w, l) for w, l in itertools.product(ids, ids) if r[w] > r[l]}
    return {
        "better_vs_worse": allp,
        "best_vs_worse": {(w, l) for w, l in allp if w == best},
        "better_vs_worst": {(w, l) for w, l in allp if l == worst},
        "best_vs_worst": {(w, l) for w, l in allp if w == best and l == worst},
    }[strategy]


@settings(max_examples=100, deadline=None)
@given(reward_groups)
def test_matches_brute_force_and_containment(g):
    sets = {}
    for s in pf.STRATEGIES:
        sets[s] = {(p.winner_id, p.loser_id) for p in pf.build_pairs(g, s, 0.0)}
        assert sets[s] == brute(g, s)
    assert sets["best_vs_worst"] <= sets["best_vs_worse"] <= sets["better_vs_worse"]
    assert sets["best_vs_worst"] <= sets["better_vs_worst"] <= sets["better_vs_worse"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1.0, 5.0), min_size=2, max_size=6, unique=True))
def test_distinct_counts(values):
    n = len(values)
    g = group({f"s{i}": v for i, v in enumerate(values)})
    expected = {"better_vs_worse": n * (n - 1) // 2, "best_vs_worse": n - 1, "better_vs_worst": n - 1, "best_vs_worst": 1}
    for s, count in expected.items():
        assert len(pf.build_pairs(g, s, 0.0)) == count


@settings(max_examples=50, deadline=None)
@given(reward_groups)
def test_monotone_relabel_invariance(g):
    r = {c.sample_id: c.reward for c in g.candidates}
    relabeled = {k: np.exp(v) + 3 * v for k, v in r.items()}
    for s in pf.STRATEGIES:
        a = {(p.winner_id, p.loser_id) for p in pf.build_pairs(g, s, 0.0)}
        b = {(p.winner_id, p.loser_id) for p in pf.build_pairs(g, s, 0.0, rewards=relabeled)}
        assert a == b


def test_dataset_stats():
    empty = pf.dataset_stats([])
    assert empty["count"] == 0 and empty["n_conditions"] == 0
    one = pf.dataset_stats([pf.PreferencePair("c", "a", "b", 2.5)])
    assert one["margin"] == {"min": 2.5, "max": 2.5, "mean": 2.5}
    assert sum(one["histogram"]["counts"]) == 1


def test_jsonl_round_trip(tmp_path):
    groups = [group({"a": 4.5, "b": 3.0, "c": 2.0}, "c0"), group({"x": 1.0, "y": 5.0}, "c1")]
    pf.write_jsonl(tmp_path / "g.jsonl", groups)
    back = pf.read_groups(tmp_path / "g.jsonl")
    assert back == groups
    pairs = [p for g in back for p in pf.build_pairs(g)]
    pf.write_jsonl(tmp_path / "p.jsonl", pairs)
    assert pf.read_pairs(tmp_path / "p.jsonl") == pairs
    assert json.loads((tmp_path / "p.jsonl").read_text().splitlines()[0])["winner_id"] == "a"
