"""Small graphs and environments shared by the test modules."""
import numpy as np

from kgcrs import data, embed
from kgcrs import session as S
from kgcrs.config import RunConfig
from kgcrs.graph import KnowledgeGraph, Relation, Triple, attr, item, user


def random_triples(rng, n_users, n_items, n_attrs, density=0.3):
    out = []
    for u in range(n_users):
        for v in range(n_items):
            if rng.random() < density:
                out.append(Triple(user(u), Relation.USER_ITEM, item(v)))
        for p in range(n_attrs):
            if rng.random() < density:
                out.append(Triple(user(u), Relation.USER_ATTR, attr(p)))
    for v in range(n_items):
        for p in range(n_attrs):
            if rng.random() < density:
                out.append(Triple(item(v), Relation.ITEM_ATTR, attr(p)))
    return out


def random_graph(seed, max_per_kind=30, density=0.3):
    rng = np.random.default_rng(seed)
    counts = tuple(int(c) for c in rng.integers(1, max_per_kind + 1, size=3))
    return KnowledgeGraph(random_triples(rng, *counts, density=density), counts), rng


def random_params(g, rng, dim=4, n_layers=3, scale=0.5, roles=True):
    p = embed.init_params(g.counts, dim, n_layers, rng, 0.1)
    p.ent_proj[:] = scale * rng.standard_normal(p.ent_proj.shape)
    p.rel_proj[:] = scale * rng.standard_normal(p.rel_proj.shape)
    p.b[:] = 0.1 * rng.standard_normal(p.b.shape)
    if roles:
        p.role_rel[:] = 0.2 * rng.standard_normal(p.role_rel.shape)
        p.role_ent[:] = 0.2 * rng.standard_normal(p.role_ent.shape)
    return p


def small_config(**overrides):
    base = {"embed.dim": 8, "embed.n_layers": 2, "embed.attention": "softmax", "embed.lr": 0.01,
            "embed.batch_size": 64, "embed.epochs": 2, "embed.pretrain_epochs": 1}
    base.update(overrides)
    return RunConfig().replace(**base)


def synthetic_env(n_bits=4, seed=0, train=False, n_users=8, interactions=10, **overrides):
    cfg = small_config(**overrides)
    ds = data.make_synthetic(n_bits, seed=seed, n_users=n_users, interactions=interactions)
    g = ds.graph()
    rng = np.random.default_rng(seed)
    params = embed.init_params(g.counts, cfg.embed.dim, cfg.embed.n_layers, rng, cfg.embed.init_noise)
    if train:
        cache, _ = embed.train_offline(g, params, cfg.embed, rng, cfg.ablation)
    else:
        cache = embed.refresh_attention(g, params, cfg.embed.attention == "softmax")
    return ds, S.Environment(g, params, cache, cfg)


def recommend_only_world(seed=0, **overrides):
    """Attribute 0 on every item, attribute 1 on none, fewer items than K.

    The only question always gets a negative answer and every recommendation
    contains the target, so asking wastes exactly one turn.
    """
    ds = data.Dataset(3, 4, 2, train=[(0, 0), (1, 1), (2, 2), (0, 3)], valid=[], test=[],
                      item_attrs=[[0]] * 4)
    g = ds.graph()
    cfg = small_config(seed=seed, **overrides)
    params = embed.init_params(g.counts, cfg.embed.dim, cfg.embed.n_layers, np.random.default_rng(seed), 0.01)
    env = S.Environment(g, params, embed.refresh_attention(g, params, True), cfg)
    pairs = [(u, v) for u in range(3) for v in range(4)]
    return ds, env, pairs


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (mutated in place)."""
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        out[i] = (up - down) / (2 * eps)
    return out


def rel_err(a, b, floor=1e-2):
    """``|a - b| / (|a| + |b|)``; the floor turns it into an absolute error for near-zero gradients,
    where central differences only see rounding noise."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))


def graph_fd_instance(seed, dim=4):
    """A small graph, params and an active margin-loss batch."""
    g, rng = random_graph(seed, max_per_kind=5, density=0.5)
    p = random_params(g, rng, dim=dim)
    n = g.n_triples
    if n == 0:
        return None
    idx = rng.choice(n, size=min(n, 6), replace=False)
    h, r, t = g.heads[idx], g.rels[idx], g.tails[idx]
    tn = np.array([embed.negative_sample(g, int(a), int(b), rng) if _has_negative(g, a, b) else -1
                   for a, b in zip(h, r)])
    keep = tn >= 0
    if not keep.any():
        return None
    return g, p, (h[keep], r[keep], t[keep], tn[keep])


def _has_negative(g, h, r):
    try:
        embed.negative_sample(g, int(h), int(r), np.random.default_rng(0))
        return True
    except Exception:
        return False


def item_fd_instance(seed, dim=4, n_layers=3, normalize=True):
    g, rng = random_graph(seed, max_per_kind=5, density=0.5)
    p = random_params(g, rng, dim=dim, n_layers=n_layers)
    cache = embed.refresh_attention(g, p, normalize)
    rows = 4
    users = g.gids(0, rng.integers(g.n_users, size=rows))
    pos = g.gids(1, rng.integers(g.n_items, size=rows))
    neg = g.gids(1, rng.integers(g.n_items, size=rows))
    attrs = [g.gids(2, rng.choice(g.n_attrs, size=int(rng.integers(0, min(3, g.n_attrs) + 1)), replace=False))
             for _ in range(rows)]
    return g, p, cache, embed.ItemBatch(users, pos, neg, attrs)


def policy_fd_instance(seed, n_in=7, hidden=5, n_out=4, steps=5):
    """Random policy and trajectory with a random legal action per step."""
    from kgcrs import policy as pol
    rng = np.random.default_rng(seed)
    theta = pol.init_policy([n_in, hidden, n_out], rng, zero_output=False)
    theta.biases[0][:] = 0.1 * rng.standard_normal(hidden)
    traj = pol.Trajectory()
    for _ in range(steps):
        mask = rng.random(n_out) < 0.7
        mask[rng.integers(n_out)] = True
        a = rng.choice(np.flatnonzero(mask))
        traj.append(rng.standard_normal(n_in), a, rng.standard_normal(), mask)
    return theta, traj


CLI_SETTINGS = ["--set", "embed.dim=8", "--set", "embed.n_layers=2", "--set", "embed.epochs=2",
                "--set", "embed.pretrain_epochs=1", "--set", "embed.attention=softmax", "--seed", "5"]


def cli_pipeline(root, run_cli):
    """Synthetic data -> embeddings -> policy -> transcript through the command line; returns the paths."""
    root.mkdir(parents=True, exist_ok=True)
    d, e, p = root / "data", root / "embed.json", root / "policy.json"
    t = root / "train.jsonl"
    run_cli(["make-synthetic", "--n-bits", "4", "--users", "6", "--interactions", "10", "--out", str(d),
             *CLI_SETTINGS])
    run_cli(["train-offline", "--data", str(d), "--out", str(e), *CLI_SETTINGS])
    run_cli(["train-policy", "--data", str(d), "--embed", str(e), "--sessions", "20", "--epochs", "2",
             "--valid-sessions", "5", "--transcript", str(t), "--out", str(p), *CLI_SETTINGS])
    return {"data": d, "embed": e, "policy": p, "transcript": t}


def item_loss_value(g, p, cache, batch, kind="pointwise", identity=False, graph_rec=False):
    """Forward-only item loss, the function the finite differences are taken of."""
    F = embed.representations(embed.forward(g, p, cache), p, graph_rec)
    y_pos = embed.score_rows(p, F, batch.users, batch.pos, batch.attrs, identity)
    y_neg = embed.score_rows(p, F, batch.users, batch.neg, batch.attrs, identity)
    return embed.item_loss(y_pos, y_neg, kind)
