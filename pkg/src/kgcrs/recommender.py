"""Item scoring, top-K ranking and session-local fine-tuning.

Scores follow ``y_v = u0.v0 + sum_{p in P_u} v1.p1`` on propagated
representations passed through role projections (identity under ``-map``).
"""
from __future__ import annotations

from typing import Iterable, NamedTuple

import numpy as np

from . import embed
from .embed import ROLE_0U, ROLE_0V, ROLE_1P, ROLE_1V, AttentionCache, EmbedParams, ItemBatch
from .errors import EmptyCandidates, EntityRemoved, TargetNotCandidate
from .graph import EntityId, Kind, KnowledgeGraph

item_loss = embed.item_loss


class ScoredItem(NamedTuple):
    item: EntityId
    score: float


class Scorer:
    """Recommender bound to one graph (overlay), parameter set and attention cache.

    Propagated representations are memoised until the graph overlay, the
    parameters or the cache change.  ``params`` may be swapped for a session
    copy with :meth:`own_params`.
    """

    def __init__(self, g: KnowledgeGraph, params: EmbedParams, cache: AttentionCache, *,
                 identity: bool = False, graph_rec: bool = False, max_degree: int = 0):
        self.g = g
        self.params = params
        self.cache = cache
        self.identity = identity
        self.graph_rec = graph_rec
        self.max_degree = max_degree
        self.owns_params = False
        self._key = None
        self._F = None
        self._prop = None

    def own_params(self) -> EmbedParams:
        """Copy-on-write: detach from the shared parameters before mutating them."""
        if not self.owns_params:
            self.params = self.params.copy()
            self.owns_params = True
        return self.params

    def propagation(self) -> embed.Propagation:
        key = (self.g.version, id(self.params), self.params.version, id(self.cache), self.cache.version)
        if key != self._key:
            self._prop = embed.forward(self.g, self.params, self.cache, self.max_degree)
            self._F = embed.representations(self._prop, self.params, self.graph_rec)
            self._key = key
        return self._prop

    def representations(self) -> np.ndarray:
        self.propagation()
        return self._F

    # -- scoring ------------------------------------------------------------
    def _check_alive(self, gids) -> None:
        gids = np.asarray(gids, dtype=np.int64)
        dead = gids[self.g.alive[gids] == 0]
        if dead.size:
            raise EntityRemoved(repr(self.g.entity(dead[0])))

    def score_items(self, u: int, items, attrs=()) -> np.ndarray:
        """Scores of item indices ``items`` for user index ``u`` given attribute indices ``attrs``."""
        g = self.g
        items = np.asarray(list(items) if not isinstance(items, np.ndarray) else items, dtype=np.int64)
        ugid = g.offsets[Kind.USER] + int(u)
        agids = [g.offsets[Kind.ATTR] + int(a) for a in attrs]
        vgids = g.offsets[Kind.ITEM] + items
        self._check_alive([ugid, *agids])
        self._check_alive(vgids)
        F = self.representations()
        p = self.params
        u0 = embed.role_project(p, F[ugid], ROLE_0U, self.identity)
        V = F[vgids]
        y = embed.role_project(p, V, ROLE_0V, self.identity) @ u0
        if agids:
            S = embed.role_project(p, F[agids], ROLE_1P, self.identity).sum(axis=0)
            y = y + embed.role_project(p, V, ROLE_1V, self.identity) @ S
        return y

    def rank(self, u: int, candidates, attrs=(), k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Item indices and scores sorted by descending score, ties by ascending index."""
        cand = np.array(sorted(candidates), dtype=np.int64)
        if cand.size == 0:
            raise EmptyCandidates("no candidate items")
        y = self.score_items(u, cand, attrs)
        order = np.lexsort((cand, -y))
        if k is not None:
            order = order[:k]
        return cand[order], y[order]

    def position(self, u: int, candidates, attrs, target: int) -> int:
        if target not in candidates:
            raise TargetNotCandidate(f"item {target} is not a candidate")
        ranked, _ = self.rank(u, candidates, attrs)
        return int(np.flatnonzero(ranked == target)[0]) + 1

    # -- session fine-tuning ----------------------------------------------------
    def finetune(self, u: int, positives, negatives, attrs=(), steps: int = 1, lr: float = 0.001,
                 kind: str = "pointwise") -> list[float]:
        """Item-loss SGD on the session copy.

        Positives and rejected items are paired cyclically until every item of
        the longer list is used; each step follows the mean loss over the pairs.
        """
        pos = sorted(int(v) for v in positives)
        neg = sorted(int(v) for v in negatives)
        if steps <= 0 or not pos or not neg or lr == 0.0:
            return []
        params = self.own_params()
        g = self.g
        off_i, off_a = g.offsets[Kind.ITEM], g.offsets[Kind.ATTR]
        agids = np.array([off_a + int(a) for a in attrs if g.alive[off_a + int(a)]], dtype=np.int64)
        n = max(len(pos), len(neg))
        batch = ItemBatch(
            users=np.full(n, g.offsets[Kind.USER] + int(u), dtype=np.int64),
            pos=off_i + np.array([pos[i % len(pos)] for i in range(n)], dtype=np.int64),
            neg=off_i + np.array([neg[i % len(neg)] for i in range(n)], dtype=np.int64),
            attrs=[agids] * n,
        )
        losses = []
        for _ in range(steps):
            loss, grads = embed.item_loss_grad(g, params, self.cache, batch, kind, self.identity,
                                               self.graph_rec, self.max_degree)
            params.apply({k: grads[k] / n for k in ("ent", "W", "b")}, lr)
            losses.append(loss / n)
        return losses


# -- functional surface -----------------------------------------------------------

def _scorer(params, g, cache, identity=False, graph_rec=False):
    return Scorer(g, params, cache, identity=identity, graph_rec=graph_rec)


def score_item(params: EmbedParams, g: KnowledgeGraph, cache: AttentionCache, u: EntityId, v: EntityId,
               P_u: Iterable[EntityId] = (), *, identity: bool = False, graph_rec: bool = False) -> float:
    s = _scorer(params, g, cache, identity, graph_rec)
    return float(s.score_items(u.index, [v.index], [p.index for p in P_u])[0])


def rank_candidates(params: EmbedParams, g: KnowledgeGraph, cache: AttentionCache, u: EntityId,
                    V_cand: Iterable[EntityId], P_u: Iterable[EntityId], K: int, **kw) -> list[ScoredItem]:
    if K < 1:
        raise ValueError("K must be >= 1")
    s = _scorer(params, g, cache, kw.get("identity", False), kw.get("graph_rec", False))
    items, scores = s.rank(u.index, {v.index for v in V_cand}, [p.index for p in P_u], K)
    return [ScoredItem(EntityId(Kind.ITEM, int(i)), float(y)) for i, y in zip(items, scores)]


def ideal_item_position(params: EmbedParams, g: KnowledgeGraph, cache: AttentionCache, u: EntityId,
                        V_cand: Iterable[EntityId], P_u: Iterable[EntityId], target: EntityId, **kw) -> int:
    s = _scorer(params, g, cache, kw.get("identity", False), kw.get("graph_rec", False))
    return s.position(u.index, {v.index for v in V_cand}, [p.index for p in P_u], target.index)


def session_finetune(session_params: EmbedParams, g_session: KnowledgeGraph, cache: AttentionCache,
                     u: EntityId, positives: Iterable[EntityId], V_neg: Iterable[EntityId],
                     steps: int = 1, lr: float = 0.001, P_u: Iterable[EntityId] = (), **kw) -> list[float]:
    """Fine-tune ``session_params`` in place; the caller owns that copy."""
    s = _scorer(session_params, g_session, cache, kw.get("identity", False), kw.get("graph_rec", False))
    s.owns_params = True
    return s.finetune(u.index, [v.index for v in positives], [v.index for v in V_neg],
                      [p.index for p in P_u], steps, lr, kw.get("kind", "pointwise"))
