import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptln.data import Config, Dataset
from ptln.evaluation import (
    DEFAULT_SLICES,
    MetricsReport,
    evaluate,
    evaluate_scores,
    metrics_at,
    rank_items,
)
from ptln.propagation import khop_friends
from ptln.training import init_params


def brute_metrics(ranked, relevant, n):
    """Loop-by-loop reference for the four ranking metrics."""
    top = list(ranked)[:n]
    hits, dcg, first = 0, 0.0, None
    for pos in range(len(top)):
        if top[pos] in relevant:
            hits += 1
            dcg += 1.0 / math.log2(pos + 2)
            if first is None:
                first = pos + 1
    ideal = 0.0
    for pos in range(min(n, len(relevant))):
        ideal += 1.0 / math.log2(pos + 2)
    return hits / n, hits / len(relevant), dcg / ideal, (1.0 / first if first else 0.0)


def random_case(rng):
    n_items = int(rng.integers(1, 30))
    ranked = rng.permutation(n_items).tolist()
    relevant = set(rng.choice(n_items, size=int(rng.integers(1, n_items + 1)), replace=False).tolist())
    return ranked, relevant, int(rng.integers(1, 20))


def test_closed_form_cases():
    assert metrics_at([9, 3, 8, 7, 6], {3, 4}, 5) == (0.2, 0.5, pytest.approx(1 / math.log2(3) / (1 + 1 / math.log2(3))), 0.5)
    for n in (1, 5, 15):
        assert metrics_at([4, 1, 2], {4}, n)[2] == 1.0
    assert metrics_at([0, 1, 2, 3, 4], {2}, 5)[2] == 0.5
    assert metrics_at([0, 1, 2], {7}, 3) == (0.0, 0.0, 0.0, 0.0)


def test_metrics_reject_bad_input():
    with pytest.raises(ValueError):
        metrics_at([0], {0}, 0)
    with pytest.raises(ValueError):
        metrics_at([0], set(), 5)


def test_metrics_match_brute_force_on_1000_instances():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        ranked, relevant, n = random_case(rng)
        assert metrics_at(ranked, relevant, n) == brute_metrics(ranked, relevant, n)


@given(st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_metrics_bounded_and_tail_invariant(seed):
    rng = np.random.default_rng(seed)
    ranked, relevant, n = random_case(rng)
    values = metrics_at(ranked, relevant, n)
    assert all(0.0 <= v <= 1.0 for v in values)
    shuffled = ranked[:n] + rng.permutation(ranked[n:]).tolist()
    assert metrics_at(shuffled, relevant, n) == values


@given(st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_ndcg_never_drops_when_hit_moves_up(seed):
    rng = np.random.default_rng(seed)
    ranked, relevant, n = random_case(rng)
    for pos in range(1, len(ranked)):
        if ranked[pos] in relevant and ranked[pos - 1] not in relevant:
            moved = list(ranked)
            moved[pos - 1], moved[pos] = moved[pos], moved[pos - 1]
            assert metrics_at(moved, relevant, n)[2] >= metrics_at(ranked, relevant, n)[2]


def test_rank_items_rules():
    assert rank_items([5.0, 4.0, 3.0, 2.0]).tolist() == [0, 1, 2, 3]
    assert rank_items([1.0, 1.0, 1.0]).tolist() == [0, 1, 2]
    assert rank_items([1.0, 2.0, 2.0, 0.5]).tolist() == [1, 2, 0, 3]
    assert 0 not in rank_items([9.0, 1.0, 2.0], exclude=[0]).tolist()


def _membership_scores(num_items, test):
    scores = np.zeros((len(test), num_items))
    for u, held in enumerate(test):
        scores[u, list(held)] = 1.0
    return scores


def test_perfect_model_scores_one():
    train = Dataset(3, 20, [[0, 1], [], [5]], [[], [], []])
    test = [[2, 3], [7], [9, 11, 13]]
    report = evaluate_scores(_membership_scores(20, test), train, test, cutoffs=(3, 5))
    for n in (3, 5):
        assert report.metrics[n]["recall"] == 1.0
        assert report.metrics[n]["ndcg"] == 1.0
        assert report.metrics[n]["mrr"] == 1.0


def test_empty_test_users_excluded_and_error_when_none():
    train = Dataset(2, 5, [[], []], [[], []])
    report = evaluate_scores(np.zeros((2, 5)), train, [[1], []], cutoffs=(5,))
    assert report.num_users == 1
    with pytest.raises(ValueError, match="no users"):
        evaluate_scores(np.zeros((2, 5)), train, [[], []])


def test_random_scores_match_recall_baseline():
    # expected recall@5 of a uniformly random full ranking is 5 / (candidate count)
    rng = np.random.default_rng(0)
    num_users, num_items, held = 400, 500, 4
    train = Dataset(num_users, num_items, [[] for _ in range(num_users)], [[] for _ in range(num_users)])
    test = [sorted(rng.choice(num_items, held, replace=False).tolist()) for _ in range(num_users)]
    report = evaluate_scores(rng.random((num_users, num_items)), train, test, cutoffs=(5,))
    assert report.metrics[5]["recall"] == pytest.approx(5 / num_items, abs=0.004)
    assert report.metrics[5]["precision"] == pytest.approx(held / num_items, abs=0.003)


def test_slices_partition_users():
    rng = np.random.default_rng(1)
    counts = rng.integers(0, 25, size=50)
    train = Dataset(50, 60, [sorted(rng.choice(30, c, replace=False).tolist()) for c in counts], [[] for _ in range(50)])
    test = [[30 + int(rng.integers(30))] for _ in range(50)]
    report = evaluate_scores(rng.random((50, 60)), train, test, slices=DEFAULT_SLICES)
    assert set(report.slices) == {"0-4", "5-16", "17+"}
    assert sum(s["num_users"] for s in report.slices.values()) == report.num_users == 50


def test_report_serialisation():
    train = Dataset(2, 8, [[0], []], [[], []])
    test = [[3], [4, 5]]
    report = evaluate_scores(np.arange(16.0).reshape(2, 8), train, test, slices=DEFAULT_SLICES)
    assert isinstance(report, MetricsReport)
    data = report.to_dict()
    assert data["cutoffs"] == [5, 10, 15] and set(data["metrics"]) == {"5", "10", "15"}
    assert report.to_json() == report.to_json()
    table = report.to_table()
    assert "Ndcg@10" in table and "train 0-4" in table


def test_evaluate_end_to_end_excludes_train_items():
    cfg = Config(d1=4, d2=2, k=2)
    train = Dataset(3, 6, [[0, 1], [2], []], [[1], [2], [0]])
    params = init_params(3, 6, cfg, seed=0)
    report = evaluate(params, train, [[2], [0, 5], [4]], khop_friends(train, 2), cfg, cutoffs=(1, 3))
    assert report.num_users == 3
    for n in (1, 3):
        assert all(0.0 <= v <= 1.0 for v in report.metrics[n].values())
