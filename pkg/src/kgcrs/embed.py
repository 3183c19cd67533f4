"""Graph embedding: TransD node features plus attention-weighted propagation.

Stage one scores triples with TransD, ``f = ||M_rh e_h + e_r - M_rt e_t||^2``
where ``M = m_r m_e^T + I``.  Stage two enriches every entity by
``K - 1`` propagation layers

    e^(k) = ReLU(W^k (e^(k-1) + N^(k-1)) + b^k),   N^(k) = sum alpha * e_t^(k)

over its (effective) neighbourhood and concatenates the ``K`` blocks into a
``K * m`` vector.  Attention weights are cached and treated as constants
between refreshes, so gradients never flow through them.

All gradients are analytic; ``tests/test_gradients.py`` checks them against
central finite differences.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import artifacts, kernels
from .errors import CheckpointMismatch, DimensionMismatch, DivergenceDetected, EntityRemoved, NoNegativeAvailable
from .graph import RELATION_KINDS, EntityId, Kind, KnowledgeGraph, Relation, format_triples

# post-propagation role projections, indexed as below
ROLE_0U, ROLE_0V, ROLE_1V, ROLE_1P, ROLE_2U, ROLE_2P = range(6)
ROLE_NAMES = ("0u", "0v", "1v", "1p", "2u", "2p")

PARAM_NAMES = ("ent", "ent_proj", "rel", "rel_proj", "W", "b", "role_rel", "role_ent")
GRAPH_PARAMS = ("ent", "ent_proj", "rel", "rel_proj")
ITEM_PARAMS = ("ent", "W", "b", "role_rel", "role_ent")


@dataclass
class EmbedParams:
    ent: np.ndarray        # (N, m) entity embeddings
    ent_proj: np.ndarray   # (N, m) TransD entity projection vectors
    rel: np.ndarray        # (3, m) relation embeddings
    rel_proj: np.ndarray   # (3, m) relation projection vectors
    W: np.ndarray          # (K-1, m, m)
    b: np.ndarray          # (K-1, m)
    role_rel: np.ndarray   # (6, D) relation-side vector of each role projection
    role_ent: np.ndarray   # (6, D) entity-side vector of each role projection
    version: int = field(default=0, compare=False)

    @property
    def dim(self) -> int:
        return self.ent.shape[1]

    @property
    def n_layers(self) -> int:
        return self.W.shape[0] + 1

    @property
    def out_dim(self) -> int:
        return self.dim * self.n_layers

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "EmbedParams":
        return EmbedParams(**{k: v.copy() for k, v in self.arrays().items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays().values())

    def digest(self) -> str:
        return artifacts.digest(*self.arrays().values())

    def apply(self, grads: dict[str, np.ndarray], lr: float) -> None:
        """Plain SGD step ``p -= lr * grad`` on the named blocks."""
        if lr == 0.0:
            return
        for name, grad in grads.items():
            arr = getattr(self, name)
            arr -= lr * grad
        self.version += 1
        if not self.all_finite():
            raise DivergenceDetected("non-finite embedding parameter after update")


def init_params(counts: Sequence[int], dim: int, n_layers: int, rng: np.random.Generator,
                init_noise: float = 0.01) -> EmbedParams:
    """Uniform(+-6/sqrt(m)) embeddings, zero projection vectors, near-identity W."""
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    n = int(sum(counts))
    bound = 6.0 / np.sqrt(dim)
    out_dim = dim * n_layers
    return EmbedParams(
        ent=rng.uniform(-bound, bound, size=(n, dim)),
        ent_proj=np.zeros((n, dim)),
        rel=rng.uniform(-bound, bound, size=(3, dim)),
        rel_proj=np.zeros((3, dim)),
        W=np.eye(dim)[None].repeat(n_layers - 1, axis=0) + init_noise * rng.standard_normal((n_layers - 1, dim, dim)),
        b=np.zeros((n_layers - 1, dim)),
        role_rel=np.zeros((6, out_dim)),
        role_ent=np.zeros((6, out_dim)),
    )


def zero_grads(params: EmbedParams, names: Sequence[str] = PARAM_NAMES) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(getattr(params, k)) for k in names}


# -- TransD -----------------------------------------------------------------

def projection_matrix(m_r: np.ndarray, m_e: np.ndarray) -> np.ndarray:
    m_r, m_e = np.asarray(m_r, float), np.asarray(m_e, float)
    if m_r.shape != m_e.shape or m_r.ndim != 1:
        raise DimensionMismatch(f"projection vectors {m_r.shape} vs {m_e.shape}")
    return np.outer(m_r, m_e) + np.eye(m_r.shape[0])


def _project(e: np.ndarray, m_e: np.ndarray, m_r: np.ndarray) -> np.ndarray:
    # (m_r m_e^T + I) e without forming the matrix
    return e + m_r * np.einsum("ij,ij->i", m_e, e)[:, None]


def _transd_residual(params: EmbedParams, h, r, t):
    eh, et = params.ent[h], params.ent[t]
    mh, mt = params.ent_proj[h], params.ent_proj[t]
    er, mr = params.rel[r], params.rel_proj[r]
    sh = np.einsum("ij,ij->i", mh, eh)
    st = np.einsum("ij,ij->i", mt, et)
    d = eh + mr * sh[:, None] + er - et - mr * st[:, None]
    return d, (eh, et, mh, mt, mr, sh, st)


def transd_scores(params: EmbedParams, heads, rels, tails) -> np.ndarray:
    """Vectorised TransD score over global-id arrays."""
    h, r, t = (np.atleast_1d(np.asarray(x, dtype=np.int64)) for x in (heads, rels, tails))
    d, _ = _transd_residual(params, h, r, t)
    return np.einsum("ij,ij->i", d, d)


def transd_score(params: EmbedParams, g: KnowledgeGraph, h: EntityId, r: Relation, t: EntityId) -> float:
    return float(transd_scores(params, [g.gid(h)], [int(r)], [g.gid(t)])[0])


def margin_loss(f_pos, f_neg, margin: float):
    return np.maximum(np.asarray(f_pos) - np.asarray(f_neg), -margin)


def graph_loss(params: EmbedParams, pos: tuple, neg: tuple, margin: float) -> float:
    """Summed margin loss for aligned positive/negative triple arrays ``(h, r, t)``."""
    fp = transd_scores(params, *pos)
    fn = transd_scores(params, *neg)
    return float(np.sum(margin_loss(fp, fn, margin)))


def graph_loss_grad(params: EmbedParams, heads, rels, tails_pos, tails_neg, margin: float):
    """Loss and gradients of the tail-corrupted margin loss w.r.t. the TransD blocks."""
    h = np.asarray(heads, dtype=np.int64)
    r = np.asarray(rels, dtype=np.int64)
    grads = zero_grads(params, GRAPH_PARAMS)
    d_pos, cp = _transd_residual(params, h, r, np.asarray(tails_pos, dtype=np.int64))
    d_neg, cn = _transd_residual(params, h, r, np.asarray(tails_neg, dtype=np.int64))
    diff = np.einsum("ij,ij->i", d_pos, d_pos) - np.einsum("ij,ij->i", d_neg, d_neg)
    loss = float(np.maximum(diff, -margin).sum())
    active = diff > -margin
    if not active.any():
        return loss, grads
    for d, cache, t, sign in ((d_pos, cp, tails_pos, 1.0), (d_neg, cn, tails_neg, -1.0)):
        eh, et, mh, mt, mr, sh, st = cache
        sel = active
        g = 2.0 * sign * d[sel]
        mg = np.einsum("ij,ij->i", mr[sel], g)[:, None]
        hs, ts, rs = h[sel], np.asarray(t, dtype=np.int64)[sel], r[sel]
        np.add.at(grads["rel"], rs, g)
        np.add.at(grads["rel_proj"], rs, g * (sh[sel] - st[sel])[:, None])
        np.add.at(grads["ent"], hs, g + mh[sel] * mg)
        np.add.at(grads["ent_proj"], hs, eh[sel] * mg)
        np.add.at(grads["ent"], ts, -(g + mt[sel] * mg))
        np.add.at(grads["ent_proj"], ts, -(et[sel] * mg))
    return loss, grads


def negative_sample(g: KnowledgeGraph, head: int, relation: int, rng: np.random.Generator,
                    tries: int = 32) -> int:
    """Uniform live tail ``t'`` of the right kind with ``(head, relation, t')`` not effective.

    ``head`` and the result are global ids.
    """
    kind = RELATION_KINDS[Relation(relation)][1]
    lo, n = g.offsets[kind], g.counts[kind]
    linked = g.linked_tails(head, relation)
    for _ in range(tries):
        cand = lo + int(rng.integers(n)) if n else None
        if cand is None:
            break
        if g.alive[cand] and cand not in linked:
            return cand
    valid = [c for c in range(lo, lo + n) if g.alive[c] and c not in linked]
    if not valid:
        raise NoNegativeAvailable(f"every {kind.name.lower()} is linked to {g.entity(head)} via r{relation}")
    return valid[int(rng.integers(len(valid)))]


# -- attention ----------------------------------------------------------------

def attention_values(params: EmbedParams, heads, rels, tails) -> np.ndarray:
    h, r, t = (np.atleast_1d(np.asarray(x, dtype=np.int64)) for x in (heads, rels, tails))
    mr = params.rel_proj[r]
    eh = _project(params.ent[h], params.ent_proj[h], mr)
    et = _project(params.ent[t], params.ent_proj[t], mr)
    return np.einsum("ij,ij->i", et, np.tanh(eh + params.rel[r]))


def attention(params: EmbedParams, g: KnowledgeGraph, h: EntityId, r: Relation, t: EntityId) -> float:
    return float(attention_values(params, [g.gid(h)], [int(r)], [g.gid(t)])[0])


@dataclass
class AttentionCache:
    """One attention weight per base triple, frozen until the next refresh."""
    alpha: np.ndarray
    normalize: bool = False
    version: int = 0


def refresh_attention(g: KnowledgeGraph, params: EmbedParams, normalize: bool = False,
                      previous: AttentionCache | None = None) -> AttentionCache:
    alpha = attention_values(params, g.heads, g.rels, g.tails) if g.n_triples else np.zeros(0)
    alpha.setflags(write=False)
    return AttentionCache(alpha, normalize, 0 if previous is None else previous.version + 1)


def slot_weights(g: KnowledgeGraph, cache: AttentionCache, max_degree: int = 0) -> np.ndarray:
    """Per-adjacency-slot propagation weight under the current overlay."""
    raw = np.ascontiguousarray(cache.alpha[g.slot_triple], dtype=np.float64)
    capped = None
    if max_degree:
        rank = np.arange(raw.shape[0]) - g.indptr[g.slot_row]
        capped = rank >= max_degree
    if cache.normalize:
        out = np.zeros_like(raw)
        kernels.row_softmax(g.indptr, g.nbr, raw, g.alive, out)
        if capped is not None:
            out[capped] = 0.0
            tot = np.zeros(g.n_entities)
            np.add.at(tot, g.slot_row, out)
            nz = tot[g.slot_row] > 0
            out[nz] = out[nz] / tot[g.slot_row][nz]
        return out
    if capped is not None:
        raw[capped] = 0.0
    return raw


# -- propagation --------------------------------------------------------------

class Propagation(NamedTuple):
    H: list          # K blocks of (N, m): e^(1) .. e^(K)
    X: list          # K-1 layer inputs e^(k-1) + N^(k-1)
    Z: list          # K-1 pre-activations
    w: np.ndarray    # slot weights used
    alive: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return np.concatenate(self.H, axis=1)


def forward(g: KnowledgeGraph, params: EmbedParams, cache: AttentionCache, max_degree: int = 0) -> Propagation:
    """Propagate every entity at once; dead rows are computed but never read."""
    w = slot_weights(g, cache, max_degree)
    alive = g.alive.copy()
    H = [params.ent]
    X, Z = [], []
    agg = np.empty_like(params.ent)
    for k in range(params.n_layers - 1):
        prev = np.ascontiguousarray(H[-1])
        kernels.spmm(g.indptr, g.nbr, w, alive, prev, agg)
        x = prev + agg
        z = x @ params.W[k].T + params.b[k]
        X.append(x)
        Z.append(z)
        H.append(np.maximum(z, 0.0))
    return Propagation(H, X, Z, w, alive)


def backward(g: KnowledgeGraph, params: EmbedParams, prop: Propagation, d_final: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a loss w.r.t. ``ent``, ``W`` and ``b`` given dL/d(final)."""
    m, K = params.dim, params.n_layers
    grads = {"ent": None, "W": np.zeros_like(params.W), "b": np.zeros_like(params.b)}
    dH = np.ascontiguousarray(d_final[:, (K - 1) * m:])
    scatter = np.empty_like(dH)
    for k in range(K - 2, -1, -1):
        dZ = dH * (prop.Z[k] > 0.0)
        grads["W"][k] = dZ.T @ prop.X[k]
        grads["b"][k] = dZ.sum(axis=0)
        dX = np.ascontiguousarray(dZ @ params.W[k])
        kernels.spmm_t(g.indptr, g.nbr, prop.w, prop.alive, dX, scatter)
        dH = d_final[:, k * m:(k + 1) * m] + dX + scatter
    grads["ent"] = np.array(dH, copy=True)
    return grads


def propagate(g: KnowledgeGraph, params: EmbedParams, cache: AttentionCache, h: EntityId,
              max_degree: int = 0) -> np.ndarray:
    gid = g.gid(h)
    if not g.alive[gid]:
        raise EntityRemoved(repr(h))
    return forward(g, params, cache, max_degree).final[gid].copy()


# -- role projections and item scores ---------------------------------------------

def role_project(params: EmbedParams, x: np.ndarray, role: int, identity: bool = False) -> np.ndarray:
    """Apply the role projection ``(a b^T + I)`` to rows of ``x``."""
    if identity:
        return x
    a, b = params.role_rel[role], params.role_ent[role]
    return x + np.outer(x @ b, a) if x.ndim == 2 else x + a * (b @ x)


def _role_back(params, x, g_out, role, identity, dF_rows, grads):
    """Back-propagate ``g_out`` (rows) through a role projection of ``x``."""
    if identity:
        return g_out
    a, b = params.role_rel[role], params.role_ent[role]
    ag = g_out @ a
    grads["role_rel"][role] += (x @ b) @ g_out
    grads["role_ent"][role] += ag @ x
    return g_out + np.outer(ag, b)


class ItemBatch(NamedTuple):
    users: np.ndarray          # global ids
    pos: np.ndarray            # global ids of positive items
    neg: np.ndarray            # global ids of negative items
    attrs: list                # per row, global ids of the known positive attributes


def representations(prop: Propagation, params: EmbedParams, graph_rec: bool = False) -> np.ndarray:
    """Entity representations seen by the recommender (N, D)."""
    if not graph_rec:
        return prop.final
    out = np.zeros((params.ent.shape[0], params.out_dim))
    out[:, :params.dim] = params.ent
    return out


def score_rows(params: EmbedParams, F: np.ndarray, users, items, attrs, identity: bool = False) -> np.ndarray:
    """``y = u0.v0 + sum_p v1.p1`` for aligned rows of users, items and attribute lists."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    u0 = role_project(params, F[users], ROLE_0U, identity)
    v0 = role_project(params, F[items], ROLE_0V, identity)
    v1 = role_project(params, F[items], ROLE_1V, identity)
    S = _attr_sums(params, F, attrs, len(items), identity)
    return np.einsum("ij,ij->i", u0, v0) + np.einsum("ij,ij->i", v1, S)


def _attr_sums(params, F, attrs, n_rows, identity):
    S = np.zeros((n_rows, F.shape[1]))
    rows, cols = _flatten(attrs)
    if cols.size:
        np.add.at(S, rows, role_project(params, F[cols], ROLE_1P, identity))
    return S


def _flatten(attrs):
    rows = np.concatenate([np.full(len(a), i, dtype=np.int64) for i, a in enumerate(attrs)]) if attrs else np.zeros(0, np.int64)
    cols = np.concatenate([np.asarray(a, dtype=np.int64) for a in attrs]) if attrs else np.zeros(0, np.int64)
    return rows.astype(np.int64), cols.astype(np.int64)


def score_backward(params: EmbedParams, F: np.ndarray, users, items, attrs, coef: np.ndarray,
                   identity: bool, dF: np.ndarray, grads: dict) -> None:
    """Accumulate d(sum coef * y)/dF into ``dF`` and role-vector grads into ``grads``."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    c = np.asarray(coef, dtype=float)[:, None]
    xu, xv = F[users], F[items]
    u0 = role_project(params, xu, ROLE_0U, identity)
    v0 = role_project(params, xv, ROLE_0V, identity)
    v1 = role_project(params, xv, ROLE_1V, identity)
    S = _attr_sums(params, F, attrs, len(items), identity)
    np.add.at(dF, users, _role_back(params, xu, c * v0, ROLE_0U, identity, dF, grads))
    np.add.at(dF, items, _role_back(params, xv, c * u0, ROLE_0V, identity, dF, grads))
    np.add.at(dF, items, _role_back(params, xv, c * S, ROLE_1V, identity, dF, grads))
    rows, cols = _flatten(attrs)
    if cols.size:
        g_p = (c * v1)[rows]
        np.add.at(dF, cols, _role_back(params, F[cols], g_p, ROLE_1P, identity, dF, grads))


def log_sigmoid(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.logaddexp(0.0, -x))


def item_loss(pos_scores, neg_scores, kind: str = "pointwise") -> float:
    """``-sum[log s(y_v) + log s(-y_v')]`` (pointwise) or ``-sum log s(y_v - y_v')`` (bpr)."""
    pos, neg = np.asarray(pos_scores, float), np.asarray(neg_scores, float)
    if pos.shape != neg.shape:
        raise DimensionMismatch("positive and negative score lists differ in length")
    if kind == "bpr":
        return float(-log_sigmoid(pos - neg).sum())
    return float(-(log_sigmoid(pos) + log_sigmoid(-neg)).sum())


def item_loss_coeffs(pos, neg, kind: str = "pointwise"):
    """dL/dy_pos and dL/dy_neg per pair."""
    pos, neg = np.asarray(pos, float), np.asarray(neg, float)
    if kind == "bpr":
        c = sigmoid(pos - neg) - 1.0
        return c, -c
    return sigmoid(pos) - 1.0, sigmoid(neg)


def item_loss_grad(g: KnowledgeGraph, params: EmbedParams, cache: AttentionCache, batch: ItemBatch,
                   kind: str = "pointwise", identity: bool = False, graph_rec: bool = False,
                   max_degree: int = 0):
    prop = forward(g, params, cache, max_degree)
    F = representations(prop, params, graph_rec)
    y_pos = score_rows(params, F, batch.users, batch.pos, batch.attrs, identity)
    y_neg = score_rows(params, F, batch.users, batch.neg, batch.attrs, identity)
    loss = item_loss(y_pos, y_neg, kind)
    c_pos, c_neg = item_loss_coeffs(y_pos, y_neg, kind)
    grads = zero_grads(params, ("role_rel", "role_ent"))
    dF = np.zeros_like(F)
    score_backward(params, F, batch.users, batch.pos, batch.attrs, c_pos, identity, dF, grads)
    score_backward(params, F, batch.users, batch.neg, batch.attrs, c_neg, identity, dF, grads)
    if graph_rec:
        grads.update({"ent": dF[:, :params.dim].copy(), "W": np.zeros_like(params.W), "b": np.zeros_like(params.b)})
    else:
        grads.update(backward(g, params, prop, dF))
    return loss, grads


def gradients(g: KnowledgeGraph, params: EmbedParams, loss_kind: str, batch, cache: AttentionCache | None = None,
              margin: float = 4.0, **kw):
    """Gradient bundle for ``loss_kind`` in {"graph", "item"} (see the two ``*_grad`` functions)."""
    if loss_kind == "graph":
        h, r, tp, tn = batch
        return graph_loss_grad(params, h, r, tp, tn, margin)[1]
    if loss_kind == "item":
        return item_loss_grad(g, params, cache, batch, **kw)[1]
    raise ValueError(f"unknown loss kind {loss_kind!r}")


# -- offline training -------------------------------------------------------

def _sample_or_skip(g, h, r, rng):
    try:
        return negative_sample(g, h, r, rng)
    except NoNegativeAvailable:
        return -1


def _graph_batches(g, order, rng):
    """Triples of ``order`` with one corrupted tail each; saturated (head, relation) pairs are dropped."""
    heads = g.heads[order]
    rels = g.rels[order]
    tails = g.tails[order]
    neg = np.array([_sample_or_skip(g, int(h), int(r), rng) for h, r in zip(heads, rels)], dtype=np.int64)
    keep = neg >= 0
    return heads[keep], rels[keep], tails[keep], neg[keep]


def _item_batch(g, pairs, rng, train_attrs):
    users, pos = pairs[:, 0], pairs[:, 1]
    neg = np.array([_sample_or_skip(g, int(u), int(Relation.USER_ITEM), rng) for u in users], dtype=np.int64)
    keep = neg >= 0
    users, pos, neg = users[keep], pos[keep], neg[keep]
    attrs = []
    base = g.offsets[Kind.ATTR]
    for v in pos:
        have = sorted(g.item_attrs[int(v) - g.offsets[Kind.ITEM]])
        have = [a for a in have if g.alive[base + a]]
        if train_attrs == "none" or not have:
            chosen = []
        elif train_attrs == "all":
            chosen = have
        else:
            k = int(rng.integers(1, len(have) + 1))
            chosen = sorted(rng.choice(have, size=k, replace=False).tolist())
        attrs.append(np.array([base + a for a in chosen], dtype=np.int64))
    return ItemBatch(users, pos, neg, attrs)


def pretrain_graph(g: KnowledgeGraph, params: EmbedParams, cfg, rng: np.random.Generator) -> list[dict]:
    """Stage-one pretraining with the margin loss only."""
    log = []
    n = g.n_triples
    for epoch in range(cfg.pretrain_epochs):
        order = rng.permutation(n)
        for bi, chunk in enumerate(np.array_split(order, max(1, -(-n // cfg.batch_size)))):
            if not chunk.size:
                continue
            h, r, t, tn = _graph_batches(g, chunk, rng)
            if not h.size:
                continue
            loss, grads = graph_loss_grad(params, h, r, t, tn, cfg.margin)
            params.apply(grads, cfg.lr)
            log.append({"stage": "pretrain", "epoch": epoch, "batch": bi, "graph_loss": loss})
    return log


def train_offline(g: KnowledgeGraph, params: EmbedParams, cfg, rng: np.random.Generator,
                  ablation=None, pretrain: bool = True) -> tuple[AttentionCache, list[dict]]:
    """Alternate margin-loss and item-loss SGD steps, refreshing attention per epoch.

    Returns the final attention cache and a per-batch log of both losses.
    """
    identity = bool(ablation and ablation.map)
    graph_rec = bool(ablation and ablation.graph_rec)
    normalize = cfg.attention == "softmax"
    log = pretrain_graph(g, params, cfg, rng) if pretrain else []
    cache = refresh_attention(g, params, normalize)
    n = g.n_triples
    ui_pairs = np.stack([g.heads[g.rels == 0], g.tails[g.rels == 0]], axis=1)
    n_batches = max(1, -(-n // cfg.batch_size))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        pair_order = rng.permutation(len(ui_pairs))
        for bi, (chunk, pchunk) in enumerate(zip(np.array_split(order, n_batches),
                                                 np.array_split(pair_order, n_batches))):
            entry = {"stage": "train", "epoch": epoch, "batch": bi, "graph_loss": 0.0, "item_loss": 0.0}
            h, r, t, tn = _graph_batches(g, chunk, rng) if chunk.size else (np.empty(0),) * 4
            if h.size:
                loss, grads = graph_loss_grad(params, h, r, t, tn, cfg.margin)
                params.apply(grads, cfg.lr)
                entry["graph_loss"] = loss
            batch = _item_batch(g, ui_pairs[pchunk], rng, cfg.train_attrs) if pchunk.size else None
            if batch is not None and batch.users.size:
                loss, grads = item_loss_grad(g, params, cache, batch, cfg.item_loss, identity, graph_rec,
                                             cfg.max_degree)
                params.apply(grads, cfg.lr)
                entry["item_loss"] = loss
            log.append(entry)
        cache = refresh_attention(g, params, normalize, cache)
    return cache, log


# -- checkpoints ------------------------------------------------------------------

def graph_fingerprint(g: KnowledgeGraph) -> str:
    blob = f"{g.counts}\n".encode() + format_triples(g.triples).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_embed(path, params: EmbedParams, cache: AttentionCache, g: KnowledgeGraph, config: dict,
               config_hash: str) -> None:
    arrays = params.arrays()
    arrays["alpha"] = cache.alpha
    meta = {"dim": params.dim, "n_layers": params.n_layers, "normalize": cache.normalize,
            "fingerprint": graph_fingerprint(g), "config": config, "config_hash": config_hash}
    artifacts.save(path, "kgcrs-embed", arrays, meta)


def load_embed(path, g: KnowledgeGraph | None = None, config_hash: str | None = None):
    arrays, meta = artifacts.load(path, "kgcrs-embed")
    if g is not None and meta["fingerprint"] != graph_fingerprint(g):
        raise CheckpointMismatch(f"{path}: dataset fingerprint {meta['fingerprint']} does not match "
                                 f"{graph_fingerprint(g)}")
    if config_hash is not None and meta["config_hash"] != config_hash:
        raise CheckpointMismatch(f"{path}: embedding config hash {meta['config_hash']} != {config_hash}")
    alpha = arrays.pop("alpha")
    params = EmbedParams(**arrays)
    if params.out_dim != meta["dim"] * meta["n_layers"]:
        raise CheckpointMismatch(f"{path}: inconsistent dimensions")
    alpha.setflags(write=False)
    return params, AttentionCache(alpha, bool(meta["normalize"])), meta
