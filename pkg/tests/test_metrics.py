import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgcrs import metrics
from kgcrs.errors import EmptyLog, NoTestData
from kgcrs.session import SessionRecord

from _oracles import brute_auc, brute_ranking


def hand_log():
    # (outcome, turns, positive actions)
    rows = [("success", 3, 2), ("success", 1, 1), ("quit", 15, 4), ("success", 15, 6),
            ("quit", 7, 0), ("success", 10, 5)]
    return [SessionRecord(i, i % 2, 0, 0, outcome=o, n_turns=t, positive_actions=p)
            for i, (o, t, p) in enumerate(rows)]


def test_hand_log():
    rep = metrics.online_metrics(hand_log(), [5, 10, 15], T=15)
    assert rep.sr_at == {5: 2 / 6, 10: 3 / 6, 15: 4 / 6}
    assert rep.at == pytest.approx((3 + 1 + 15 + 15 + 15 + 10) / 6)
    assert rep.apa == pytest.approx((2 / 3 + 1 + 4 / 15 + 6 / 15 + 0 + 0.5) / 6)
    assert rep.n_sessions == 6 and rep.n_users == 2
    assert "SR@15" in rep.table()


def test_empty_log():
    with pytest.raises(EmptyLog):
        metrics.online_metrics([], [15])


def test_ranking_handmade():
    p, r, n = metrics.ranking_metrics({0: [3, 1, 2, 0]}, {0: {1, 0}}, [2])
    assert p[2] == 0.5 and r[2] == 0.5
    assert n[2] == pytest.approx((1 / np.log2(3)) / (1 + 1 / np.log2(3)))
    with pytest.raises(NoTestData):
        metrics.ranking_metrics({}, {0: set()}, [1])


def random_case(seed, n_users=5, n_items=20):
    rng = np.random.default_rng(seed)
    table = rng.integers(0, 6, size=(n_users, n_items)).astype(float)   # coarse values force ties
    train = {u: set(rng.choice(n_items, 5, replace=False).tolist()) for u in range(n_users)}
    test = []
    for u in range(n_users):
        rest = [v for v in range(n_items) if v not in train[u]]
        test += [(u, int(v)) for v in rng.choice(rest, int(rng.integers(1, 4)), replace=False)]
    return table, train, test


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 10))
def test_offline_metrics_match_brute_force(seed, k):
    table, train, test = random_case(seed)
    rep = metrics.offline_ranking_metrics(lambda u, items: table[u, items], 20, train, test, [k])
    bp, br, bn = brute_ranking(table, train, test, k)
    assert abs(rep.precision_k[k] - bp) < 1e-12
    assert abs(rep.recall_k[k] - br) < 1e-12
    assert abs(rep.ndcg_k[k] - bn) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_pairwise_auc_matches_brute_force(seed):
    table, train, test = random_case(seed)
    pos, neg = [], []
    for u, v in test:
        seen = train[u] | {b for a, b in test if a == u}
        for w in range(20):
            if w not in seen:
                pos.append(table[u, v])
                neg.append(table[u, w])
    assert abs(metrics.pairwise_auc(pos, neg) - brute_auc(table, train, test)) < 1e-12


def test_sampled_auc_bounds_and_perfect_scorer():
    table, train, test = random_case(1)
    held = {(u, v) for u, v in test}
    perfect = lambda u, items: np.array([1.0 if (u, int(v)) in held else 0.0 for v in items])
    assert metrics.auc(perfect, 20, train, test, np.random.default_rng(0), ratio=3) == 1.0
    flat = lambda u, items: np.zeros(len(items))
    assert metrics.auc(flat, 20, train, test, np.random.default_rng(0)) == 0.5
    with pytest.raises(NoTestData):
        metrics.auc(flat, 20, train, [], np.random.default_rng(0))


def test_report_json():
    rep = metrics.online_metrics(hand_log(), [15])
    rep.meta["agent"] = "me"
    import json
    d = json.loads(rep.to_json())
    assert d["sr_at"] == {"15": pytest.approx(4 / 6)} and d["meta"] == {"agent": "me"}
