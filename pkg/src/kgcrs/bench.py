"""Wall-clock timings of the per-step operations and of the aggregation kernels."""
from __future__ import annotations

import statistics
import time
from typing import Callable, Sequence

import numpy as np

from . import embed, kernels
from . import policy as pol
from .graph import Kind

OPERATIONS = ("node-feature", "propagate-score", "attention", "encode", "action", "graph-update")


def median_time(fn: Callable[[], object], reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_operations(env, ops: Sequence[str], reps: int = 30, seed: int = 0, batch: int = 256) -> list[dict]:
    """Median seconds per call for each requested operation on the environment's graph."""
    unknown = set(ops) - set(OPERATIONS)
    if unknown:
        raise ValueError(f"unknown operations {sorted(unknown)}; choose from {OPERATIONS}")
    if not ops:
        return []
    rng = np.random.default_rng(seed)
    g, params, cache = env.g, env.params.copy(), env.cache
    idx = rng.integers(g.n_triples, size=min(batch, g.n_triples))
    neg = np.array([embed._sample_or_skip(g, int(h), int(r), rng) for h, r in zip(g.heads[idx], g.rels[idx])])
    keep = neg >= 0
    h, r, t, tn = g.heads[idx][keep], g.rels[idx][keep], g.tails[idx][keep], neg[keep]
    normalize = cache.normalize
    u = 0
    target = next(v for v in range(g.n_items) if g.item_attrs[v])
    state = env.start(u, target, rng)
    theta = pol.init_policy(env.policy_sizes(), rng)
    s = env.encode(state)
    mask = state.mask()
    drop = g.offsets[Kind.ITEM] + rng.choice(g.n_items, size=max(1, g.n_items // 20), replace=False)

    def propagate_score():
        prop = embed.forward(g, params, cache, env.cfg.embed.max_degree)
        F = embed.representations(prop, params, env.cfg.ablation.graph_rec)
        return embed.score_rows(params, F, np.full(g.n_items, u), g.offsets[Kind.ITEM] + np.arange(g.n_items),
                                [np.empty(0, dtype=np.int64)] * g.n_items, env.cfg.ablation.map)

    def encode():
        state.scorer._key = None       # force a fresh propagation, as after a graph change
        return env.encode(state)

    def graph_update():
        fork = g.fork()
        fork.remove_gids(drop)

    table = {
        "node-feature": lambda: embed.graph_loss_grad(params, h, r, t, tn, env.cfg.embed.margin),
        "propagate-score": propagate_score,
        "attention": lambda: embed.refresh_attention(g, params, normalize),
        "encode": encode,
        "action": lambda: pol.policy_forward(theta, s, mask),
        "graph-update": graph_update,
    }
    return [{"op": op, "median_s": median_time(table[op], reps), "reps": reps} for op in ops]


def bench_kernels(g, dim: int = 64, reps: int = 30, seed: int = 0) -> list[dict]:
    """Median seconds of each aggregation kernel under every available backend."""
    rng = np.random.default_rng(seed)
    n = g.n_entities
    x = rng.standard_normal((n, dim))
    w = rng.standard_normal(len(g.nbr))
    out = np.empty_like(x)
    sm = np.empty(len(g.nbr))
    rows = []
    for name, mod in sorted(kernels.backends().items()):
        for kname, fn in (("spmm", lambda m=mod: m.spmm(g.indptr, g.nbr, w, g.alive, x, out)),
                          ("spmm_t", lambda m=mod: m.spmm_t(g.indptr, g.nbr, w, g.alive, x, out)),
                          ("row_softmax", lambda m=mod: m.row_softmax(g.indptr, g.nbr, w, g.alive, sm))):
            rows.append({"op": kname, "backend": name, "median_s": median_time(fn, reps), "reps": reps})
    return rows


def format_table(rows: list[dict]) -> str:
    if not rows:
        return "(no operations)"
    keys = list(rows[0])
    cells = [[f"{r[k]:.3e}" if isinstance(r[k], float) else str(r[k]) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    lines = ["  ".join(k.ljust(wd) for k, wd in zip(keys, widths))]
    lines += ["  ".join(c.ljust(wd) for c, wd in zip(row, widths)) for row in cells]
    return "\n".join(lines)
