"""Online conversation metrics and offline ranking metrics."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyLog, NoTestData


@dataclass
class MetricReport:
    sr_at: dict = field(default_factory=dict)
    at: float | None = None
    apa: float | None = None
    mean_positive_actions: float | None = None
    precision_k: dict = field(default_factory=dict)
    recall_k: dict = field(default_factory=dict)
    ndcg_k: dict = field(default_factory=dict)
    auc: float | None = None
    n_sessions: int = 0
    n_users: int = 0
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("meta")
        for key in ("sr_at", "precision_k", "recall_k", "ndcg_k"):
            d[key] = {str(k): v for k, v in sorted(d[key].items())}
        return {k: v for k, v in d.items() if v not in (None, {})}

    def to_json(self) -> str:
        return json.dumps({**self.summary(), "meta": self.meta}, sort_keys=True, indent=1)

    def table(self) -> str:
        rows = []
        for k, v in sorted(self.sr_at.items()):
            rows.append((f"SR@{k}", v))
        for name, val in (("AT", self.at), ("APA", self.apa), ("mean positive actions", self.mean_positive_actions)):
            if val is not None:
                rows.append((name, val))
        for label, d in (("Precision", self.precision_k), ("Recall", self.recall_k), ("NDCG", self.ndcg_k)):
            rows.extend((f"{label}@{k}", v) for k, v in sorted(d.items()))
        if self.auc is not None:
            rows.append(("AUC", self.auc))
        if self.n_sessions:
            rows.append(("sessions", self.n_sessions))
        rows.append(("users", self.n_users))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {val:.4f}" if isinstance(val, float) else f"{name:<{width}}  {val}"
                         for name, val in rows)


# -- online -------------------------------------------------------------------------

def online_metrics(records: Sequence, T_levels: Iterable[int], T: int | None = None) -> MetricReport:
    """SR@T, AT (quit sessions count ``T`` turns) and APA from session records."""
    records = list(records)
    if not records:
        raise EmptyLog("no session records")
    levels = sorted(set(int(t) for t in T_levels))
    T = max(levels) if T is None else T
    success = np.array([r.outcome == "success" for r in records])
    turns = np.array([r.n_turns for r in records])
    positives = np.array([r.positive_actions for r in records], dtype=float)
    sr = {t: float(np.mean(success & (turns <= t))) for t in levels}
    spent = np.where(success, turns, T)
    apa = np.where(turns > 0, positives / np.maximum(turns, 1), 0.0)
    return MetricReport(sr_at=sr, at=float(spent.mean()), apa=float(apa.mean()),
                        mean_positive_actions=float(positives.mean()), n_sessions=len(records),
                        n_users=len({r.user for r in records}))


# -- offline ------------------------------------------------------------------------

def _rank_order(items: np.ndarray, scores: np.ndarray) -> np.ndarray:
    return items[np.lexsort((items, -scores))]


def ranking_metrics(ranked: Mapping[int, Sequence[int]], positives: Mapping[int, Iterable[int]],
                    Ks: Sequence[int]) -> tuple[dict, dict, dict]:
    """Mean Precision/Recall/NDCG@K over users given each user's full ranked list."""
    users = [u for u in positives if set(positives[u])]
    if not users:
        raise NoTestData("no user has held-out positives")
    prec, rec, ndcg = defaultdict(float), defaultdict(float), defaultdict(float)
    for u in users:
        pos = set(positives[u])
        hits = np.array([v in pos for v in ranked[u]], dtype=float)
        for k in Ks:
            h = hits[:k]
            n_hit = h.sum()
            prec[k] += n_hit / k
            rec[k] += n_hit / len(pos)
            dcg = float(np.sum(h / np.log2(np.arange(2, len(h) + 2))))
            idcg = float(np.sum(1.0 / np.log2(np.arange(2, min(k, len(pos)) + 2))))
            ndcg[k] += dcg / idcg
    n = len(users)
    return ({k: prec[k] / n for k in Ks}, {k: rec[k] / n for k in Ks}, {k: ndcg[k] / n for k in Ks})


def offline_ranking_metrics(score_fn, n_items: int, train_items: Mapping[int, Iterable[int]],
                            test_pairs: Iterable[tuple[int, int]], Ks: Sequence[int] = (10,)) -> MetricReport:
    """``score_fn(u, items) -> scores``; candidates are all items minus the user's training positives."""
    held = defaultdict(set)
    for u, v in test_pairs:
        held[int(u)].add(int(v))
    if not held:
        raise NoTestData("empty test split")
    ranked = {}
    for u in sorted(held):
        seen = set(train_items.get(u, ()))
        cand = np.array([v for v in range(n_items) if v not in seen], dtype=np.int64)
        held[u] &= set(cand.tolist())
        ranked[u] = _rank_order(cand, np.asarray(score_fn(u, cand), dtype=float)).tolist()
    p, r, nd = ranking_metrics(ranked, held, Ks)
    return MetricReport(precision_k=p, recall_k=r, ndcg_k=nd, n_users=sum(1 for u in held if held[u]))


def pairwise_auc(pos_scores, neg_scores) -> float:
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if not pos.size:
        raise NoTestData("no scored pairs")
    return float(np.mean((pos > neg) + 0.5 * (pos == neg)))


def auc(score_fn, n_items: int, interacted: Mapping[int, Iterable[int]], test_pairs: Iterable[tuple[int, int]],
        rng: np.random.Generator, ratio: int = 1) -> float:
    """Fraction of (held-out positive, sampled non-interacted negative) pairs ordered correctly."""
    pos_s, neg_s = [], []
    by_user = defaultdict(list)
    for u, v in test_pairs:
        by_user[int(u)].append(int(v))
    for u in sorted(by_user):
        seen = set(interacted.get(u, ())) | set(by_user[u])
        pool = np.array([v for v in range(n_items) if v not in seen], dtype=np.int64)
        if not pool.size:
            continue
        for v in by_user[u]:
            negs = rng.choice(pool, size=ratio, replace=True)
            y = np.asarray(score_fn(u, np.concatenate([[v], negs])), dtype=float)
            pos_s.extend([y[0]] * ratio)
            neg_s.extend(y[1:])
    if not pos_s:
        raise NoTestData("no user has a held-out positive and a negative to compare")
    return pairwise_auc(pos_s, neg_s)
