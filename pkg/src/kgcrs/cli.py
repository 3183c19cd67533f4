"""Command-line entry point: ``kgcrs <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, data, embed, metrics
from . import policy as pol
from . import session as S
from .config import RunConfig, dump_toml, load_config
from .errors import CheckpointMismatch, KGCRSError
from .interact import HumanResponder, ReplayResponder, interactive_session

log = logging.getLogger("kgcrs")

EMBED_SECTIONS = ("embed", "ablation")


# -- helpers ----------------------------------------------------------------------------

def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _provenance(cfg: RunConfig) -> dict:
    return {"config": cfg.to_dict(), "config_hash": cfg.hash()}


def _scheme(cfg: RunConfig, ds: data.Dataset) -> S.QuestionScheme:
    if cfg.session.scheme == "enumerated":
        if ds.facets is None:
            raise KGCRSError("enumerated questions need a facet file in the dataset")
        return S.QuestionScheme.enumerated(ds.facets)
    return S.QuestionScheme.binary(ds.n_attrs)


def _load_env(args, cfg: RunConfig):
    ds = data.load_dataset(args.data)
    g = ds.graph()
    params, cache, _ = embed.load_embed(args.embed, g, cfg.hash(*EMBED_SECTIONS))
    return ds, S.Environment(g, params, cache, cfg, _scheme(cfg, ds))


def _load_policy(path, env: S.Environment) -> pol.PolicyParams:
    theta = pol.load_policy(path, env.layout())
    want = env.params.digest()
    if theta.meta.get("embed_digest") != want:
        raise CheckpointMismatch(f"{path}: policy was trained against a different embedding checkpoint")
    return theta


def _save_policy(path, theta, env: S.Environment, cfg: RunConfig, extra: dict | None = None) -> None:
    meta = {**(extra or {}), "embed_digest": env.params.digest()}
    pol.save_policy(path, theta, env.layout(), cfg.to_dict(), cfg.hash(), meta)


def _transcript_header(cfg: RunConfig) -> str:
    return json.dumps({"header": True, **_provenance(cfg)}, sort_keys=True, separators=(",", ":"))


def _write_transcript(path, cfg: RunConfig, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_transcript_header(cfg) + "\n")
        for rec in records:
            for line in rec.lines():
                fh.write(line + "\n")


def _read_transcript(path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [l for l in lines if l.strip() and not json.loads(l).get("header")]


def _split(ds: data.Dataset, name: str):
    return {"train": ds.train, "valid": ds.valid, "test": ds.test}[name]


# -- commands ---------------------------------------------------------------------------

def cmd_ingest(args, cfg):
    split = tuple(float(x) for x in args.split.split(",")) if args.split else cfg.data.split
    ds = data.ingest(args.interactions, args.item_attrs, args.facets, split,
                     cfg.data.min_interactions if args.min_interactions is None else args.min_interactions,
                     cfg.seed)
    ds.meta.update(_provenance(cfg))
    data.save_dataset(ds, args.out)
    print(f"{ds.n_users} users, {ds.n_items} items, {ds.n_attrs} attributes; "
          f"{len(ds.train)}/{len(ds.valid)}/{len(ds.test)} interactions -> {args.out}")


def cmd_make_synthetic(args, cfg):
    ds = data.make_synthetic(args.n_bits, cfg.seed, args.users, args.interactions, args.concentration,
                             args.pattern_bits)
    ds.meta.update(_provenance(cfg))
    data.save_dataset(ds, args.out)
    print(f"{ds.n_items} items, {ds.n_attrs} attributes, {ds.n_users} users -> {args.out}")


def _init_embed(cfg, g):
    rng = np.random.default_rng([cfg.seed, 17])
    return embed.init_params(g.counts, cfg.embed.dim, cfg.embed.n_layers, rng, cfg.embed.init_noise), rng


def cmd_pretrain_kg(args, cfg):
    g = data.load_dataset(args.data).graph()
    params, rng = _init_embed(cfg, g)
    lg = embed.pretrain_graph(g, params, cfg.embed, rng)
    cache = embed.refresh_attention(g, params, cfg.embed.attention == "softmax")
    embed.save_embed(args.out, params, cache, g, cfg.to_dict(), cfg.hash(*EMBED_SECTIONS))
    if args.log:
        Path(args.log).write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in lg), encoding="utf-8")
    print(f"pretrained {len(lg)} batches -> {args.out}")


def cmd_train_offline(args, cfg):
    g = data.load_dataset(args.data).graph()
    if args.init:
        params, _, _ = embed.load_embed(args.init, g, cfg.hash(*EMBED_SECTIONS))
        rng = np.random.default_rng([cfg.seed, 18])
    else:
        params, rng = _init_embed(cfg, g)
    cache, lg = embed.train_offline(g, params, cfg.embed, rng, cfg.ablation, pretrain=not args.init)
    embed.save_embed(args.out, params, cache, g, cfg.to_dict(), cfg.hash(*EMBED_SECTIONS))
    if args.log:
        Path(args.log).write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in lg), encoding="utf-8")
    last = lg[-1] if lg else {}
    print(f"trained {len(lg)} batches (last: {last}) -> {args.out}")


def cmd_pretrain_policy(args, cfg):
    ds, env = _load_env(args, cfg)
    theta = _load_policy(args.init, env) if args.init else S.init_policy(env, cfg.seed)
    sessions = cfg.policy.pretrain_sessions if args.sessions is None else args.sessions
    epochs = cfg.policy.pretrain_epochs if args.epochs is None else args.epochs
    info = S.pretrain_policy(env, theta, args.strategy, ds.train, sessions, epochs, cfg.seed)
    _save_policy(args.out, theta, env, cfg, {"pretrain": info})
    print(f"{args.strategy} imitation on {info['examples']} decisions; final loss "
          f"{info['loss'][-1] if info['loss'] else float('nan'):.4f} -> {args.out}")


def cmd_train_policy(args, cfg):
    ds, env = _load_env(args, cfg)
    theta = _load_policy(args.init, env) if args.init else S.init_policy(env, cfg.seed)
    fh = open(args.transcript, "w", encoding="utf-8") if args.transcript else None
    try:
        if fh:
            fh.write(_transcript_header(cfg) + "\n")
        theta, logs = S.run_training(env, theta, ds.train, cfg.seed, ds.valid, epochs=args.epochs,
                                     sessions=args.sessions, valid_sessions=args.valid_sessions, transcript=fh)
    finally:
        if fh:
            fh.close()
    _save_policy(args.out, theta, env, cfg, {"epochs": logs})
    if args.log:
        Path(args.log).write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in logs), encoding="utf-8")
    for entry in logs:
        print(json.dumps(entry, sort_keys=True))
    print(f"-> {args.out}")


def cmd_eval_online(args, cfg):
    ds, env = _load_env(args, cfg)
    theta = _load_policy(args.policy, env) if args.policy else None
    agent = S.make_agent(args.agent, theta, cfg.policy.greedy_eval, cfg.policy.entropy_mode)
    n = cfg.session.eval_sessions if args.sessions is None else args.sessions
    records = S.evaluate(env, agent, _split(ds, args.split), n, cfg.seed, parallel=args.parallel)
    levels = args.t_levels or sorted({5, 10, env.T} & set(range(1, env.T + 1)))
    report = metrics.online_metrics(records, levels, env.T)
    report.meta = {**_provenance(cfg), "agent": args.agent, "split": args.split,
                   "per_session": [{"session_id": r.session_id, "outcome": r.outcome, "turns": r.n_turns,
                                    "positive_actions": r.positive_actions} for r in records]}
    print(report.table())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    if args.transcript:
        _write_transcript(args.transcript, cfg, records)


def cmd_eval_offline(args, cfg):
    ds, env = _load_env(args, cfg)
    scorer = env.scorer(env.g)
    train_items = ds.train_items()
    test = _split(ds, args.split)
    report = metrics.offline_ranking_metrics(lambda u, items: scorer.score_items(u, items), ds.n_items,
                                             train_items, test, args.k)
    interacted = {u: set(train_items.get(u, ())) for u in range(ds.n_users)}
    for u, v in ds.valid + ds.test:
        interacted.setdefault(u, set()).add(v)
    report.auc = metrics.auc(lambda u, items: scorer.score_items(u, items), ds.n_items, interacted, test,
                             np.random.default_rng([cfg.seed, 29]))
    report.meta = _provenance(cfg)
    print(report.table())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")


def cmd_interact(args, cfg):
    ds, env = _load_env(args, cfg)
    theta = _load_policy(args.policy, env) if args.policy else None
    agent = S.make_agent(args.agent, theta, cfg.policy.greedy_eval, cfg.policy.entropy_mode)
    responder = ReplayResponder(_read_transcript(args.replay)) if args.replay else HumanResponder()
    rec = interactive_session(env, agent, responder, S.session_rng(cfg.seed, S.STREAM_EVAL, 0), ds.vocab)
    for line in rec.lines():
        print(line)
    print(f"outcome: {rec.outcome} after {rec.n_turns} turns")
    if args.transcript:
        _write_transcript(args.transcript, cfg, [rec])


def cmd_bench(args, cfg):
    ds = data.load_dataset(args.data)
    g = ds.graph()
    if args.kernels:
        print(bench.format_table(bench.bench_kernels(g, cfg.embed.dim, args.reps, cfg.seed)))
        return
    if args.embed:
        params, cache, _ = embed.load_embed(args.embed, g, cfg.hash(*EMBED_SECTIONS))
    else:
        params, _ = _init_embed(cfg, g)
        cache = embed.refresh_attention(g, params, cfg.embed.attention == "softmax")
    env = S.Environment(g, params, cache, cfg, _scheme(cfg, ds))
    ops = bench.OPERATIONS if args.ops is None else [o for o in args.ops if o]
    print(bench.format_table(bench.bench_operations(env, ops, args.reps, cfg.seed)))


def cmd_show_config(args, cfg):
    sys.stdout.write(dump_toml(cfg))
    print(f"# hash {cfg.hash()}")


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
    common.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kgcrs", description="Knowledge-graph conversational recommender")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    def env_args(sp, policy=False):
        sp.add_argument("--data", required=True, help="dataset bundle directory")
        sp.add_argument("--embed", required=True, help="embedding checkpoint")
        if policy:
            sp.add_argument("--policy", help="policy checkpoint")

    sp = add("ingest", cmd_ingest, "build a dataset bundle from TSV files")
    sp.add_argument("--interactions", required=True)
    sp.add_argument("--item-attrs", required=True)
    sp.add_argument("--facets")
    sp.add_argument("--split", help="train,valid,test ratios, e.g. 0.7,0.2,0.1")
    sp.add_argument("--min-interactions", type=int)
    sp.add_argument("--out", required=True)

    sp = add("make-synthetic", cmd_make_synthetic, "generate a bit-pattern synthetic world")
    sp.add_argument("--n-bits", type=int, required=True)
    sp.add_argument("--users", type=int, default=20)
    sp.add_argument("--interactions", type=int, default=20)
    sp.add_argument("--concentration", type=float, default=0.8)
    sp.add_argument("--pattern-bits", type=int, default=2)
    sp.add_argument("--out", required=True)

    sp = add("pretrain-kg", cmd_pretrain_kg, "margin-loss pretraining of the graph embedding")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")

    sp = add("train-offline", cmd_train_offline, "joint graph and item-loss training")
    sp.add_argument("--data", required=True)
    sp.add_argument("--init", help="start from a pretrained checkpoint (skips pretraining)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")

    sp = add("pretrain-policy", cmd_pretrain_policy, "imitation pretraining of the policy")
    env_args(sp)
    sp.add_argument("--strategy", choices=("me", "gt"), required=True)
    sp.add_argument("--init")
    sp.add_argument("--sessions", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True)

    sp = add("train-policy", cmd_train_policy, "REINFORCE training against the simulator")
    env_args(sp)
    sp.add_argument("--init", help="policy checkpoint to start from")
    sp.add_argument("--sessions", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--valid-sessions", type=int, default=100)
    sp.add_argument("--transcript")
    sp.add_argument("--log")
    sp.add_argument("--out", required=True)

    sp = add("eval-online", cmd_eval_online, "simulated conversations: SR@T, AT, APA")
    env_args(sp, policy=True)
    sp.add_argument("--agent", default="policy", choices=("policy", "greedy", "me", "gt"))
    sp.add_argument("--split", default="test", choices=("train", "valid", "test"))
    sp.add_argument("--sessions", type=int)
    sp.add_argument("--parallel", type=int, default=1)
    sp.add_argument("--t-levels", type=int, nargs="*")
    sp.add_argument("--report")
    sp.add_argument("--transcript")

    sp = add("eval-offline", cmd_eval_offline, "Precision/Recall/NDCG@K and AUC")
    env_args(sp)
    sp.add_argument("--split", default="test", choices=("valid", "test"))
    sp.add_argument("--k", type=int, nargs="+", default=[10])
    sp.add_argument("--report")

    sp = add("interact", cmd_interact, "play the user in a terminal session")
    env_args(sp, policy=True)
    sp.add_argument("--agent", default="policy", choices=("policy", "greedy", "me"))
    sp.add_argument("--replay", help="answer from a recorded transcript instead of the terminal")
    sp.add_argument("--transcript")

    sp = add("bench", cmd_bench, "time the per-step operations")
    sp.add_argument("--data", required=True)
    sp.add_argument("--embed")
    sp.add_argument("--ops", nargs="*", choices=bench.OPERATIONS)
    sp.add_argument("--reps", type=int, default=30)
    sp.add_argument("--kernels", action="store_true", help="compare kernel backends instead")

    add("show-config", cmd_show_config, "print the effective configuration")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except (KGCRSError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
