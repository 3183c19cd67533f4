"""Dataset bundles: ingestion of TSV files, train/valid/test splits and synthetic worlds.

A bundle on disk is a directory holding ``train.tsv``, ``valid.tsv``,
``test.tsv`` (dense ``user\\titem`` indices), ``item_attrs.tsv``, an optional
``facets.tsv``, ``vocab.json`` mapping dense indices back to the original ids,
and ``meta.json``.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptySplit, ParseError
from .graph import KnowledgeGraph, Relation, Triple, attr, item, user


@dataclass
class Dataset:
    n_users: int
    n_items: int
    n_attrs: int
    train: list
    valid: list
    test: list
    item_attrs: list                       # per item: sorted attribute indices
    facets: list | None = None             # per attribute: facet index
    vocab: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def counts(self) -> tuple[int, int, int]:
        return self.n_users, self.n_items, self.n_attrs

    def train_items(self) -> dict[int, set[int]]:
        out = defaultdict(set)
        for u, v in self.train:
            out[u].add(v)
        return out

    def triples(self) -> list[Triple]:
        """User-item from training interactions, item-attribute, and user-attribute via training items."""
        out = [Triple(user(u), Relation.USER_ITEM, item(v)) for u, v in sorted(set(self.train))]
        out += [Triple(item(v), Relation.ITEM_ATTR, attr(p)) for v, ps in enumerate(self.item_attrs) for p in ps]
        ua = sorted({(u, p) for u, v in set(self.train) for p in self.item_attrs[v]})
        out += [Triple(user(u), Relation.USER_ATTR, attr(p)) for u, p in ua]
        return out

    def graph(self) -> KnowledgeGraph:
        return KnowledgeGraph(self.triples(), self.counts)


# -- persistence ------------------------------------------------------------------------

def _write_pairs(path: Path, pairs) -> None:
    path.write_text("".join(f"{a}\t{b}\n" for a, b in pairs), encoding="utf-8")


def _read_pairs(path: Path) -> list[tuple[int, int]]:
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected two fields")
        out.append((int(parts[0]), int(parts[1])))
    return out


def save_dataset(ds: Dataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_pairs(out / "train.tsv", ds.train)
    _write_pairs(out / "valid.tsv", ds.valid)
    _write_pairs(out / "test.tsv", ds.test)
    _write_pairs(out / "item_attrs.tsv", [(v, p) for v, ps in enumerate(ds.item_attrs) for p in ps])
    if ds.facets is not None:
        _write_pairs(out / "facets.tsv", list(enumerate(ds.facets)))
    (out / "vocab.json").write_text(json.dumps(ds.vocab, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    meta = {**ds.meta, "counts": list(ds.counts)}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    n_users, n_items, n_attrs = meta["counts"]
    item_attrs = [[] for _ in range(n_items)]
    for v, p in _read_pairs(root / "item_attrs.tsv"):
        item_attrs[v].append(p)
    facets = None
    if (root / "facets.tsv").exists():
        facets = [f for _, f in sorted(_read_pairs(root / "facets.tsv"))]
    return Dataset(n_users, n_items, n_attrs, _read_pairs(root / "train.tsv"), _read_pairs(root / "valid.tsv"),
                   _read_pairs(root / "test.tsv"), [sorted(ps) for ps in item_attrs], facets,
                   json.loads((root / "vocab.json").read_text(encoding="utf-8")), meta)


# -- ingestion --------------------------------------------------------------------------

def _read_tsv(path, min_fields: int, max_fields: int) -> list[tuple[int, list[str]]]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("\t")]
        if not min_fields <= len(parts) <= max_fields or not all(parts):
            raise ParseError(f"{path}:{lineno}: expected {min_fields}-{max_fields} tab-separated fields")
        rows.append((lineno, parts))
    return rows


def split_counts(n: int, ratio: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(round(ratio[0] * n))
    n_valid = min(int(round(ratio[1] * n)), n - n_train)
    return n_train, n_valid, n - n_train - n_valid


def split_interactions(per_user: dict[int, list[int]], ratio: Sequence[float], seed: int,
                       chronological: bool) -> tuple[list, list, list]:
    """Per-user split; ``per_user`` lists are already in time order when ``chronological``."""
    train, valid, test = [], [], []
    for u in sorted(per_user):
        seq = list(per_user[u])
        if not chronological:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(u)]))
            seq = [seq[i] for i in rng.permutation(len(seq))]
        a, b, _ = split_counts(len(seq), ratio)
        train += [(u, v) for v in seq[:a]]
        valid += [(u, v) for v in seq[a:a + b]]
        test += [(u, v) for v in seq[a + b:]]
    return train, valid, test


def _check_splits(ratio, splits) -> None:
    for name, r, s in zip(("train", "valid", "test"), ratio, splits):
        if r > 0 and not s:
            raise EmptySplit(f"the {name} split is empty")


def ingest(interactions_file, item_attrs_file, facets_file=None, split=(0.7, 0.2, 0.1),
           min_interactions: int = 10, seed: int = 0) -> Dataset:
    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9 or min(split) < 0:
        raise ValueError(f"split ratio {split} must be three non-negative numbers summing to 1")
    rows = _read_tsv(interactions_file, 2, 3)
    has_ts = bool(rows) and all(len(p) == 3 for _, p in rows)
    events = defaultdict(list)
    for order, (lineno, parts) in enumerate(rows):
        ts = 0.0
        if has_ts:
            try:
                ts = float(parts[2])
            except ValueError:
                raise ParseError(f"{interactions_file}:{lineno}: bad timestamp {parts[2]!r}") from None
        events[parts[0]].append((ts, order, parts[1]))
    attr_rows = _read_tsv(item_attrs_file, 2, 2)
    facet_rows = _read_tsv(facets_file, 2, 2) if facets_file else []

    kept = {}
    for u, ev in events.items():
        seq, seen = [], set()
        for _, _, v in sorted(ev):
            if v not in seen:
                seen.add(v)
                seq.append(v)
        if len(seq) >= min_interactions:
            kept[u] = seq
    if not kept:
        raise EmptySplit(f"no user has at least {min_interactions} interactions")

    users = sorted(kept)
    items = sorted({v for seq in kept.values() for v in seq} | {p[0] for _, p in attr_rows})
    attrs = sorted({p[1] for _, p in attr_rows} | {p[0] for _, p in facet_rows})
    uix = {k: i for i, k in enumerate(users)}
    vix = {k: i for i, k in enumerate(items)}
    pix = {k: i for i, k in enumerate(attrs)}

    item_attrs = [set() for _ in items]
    for _, (v, p) in attr_rows:
        item_attrs[vix[v]].add(pix[p])
    facets = None
    vocab = {"users": users, "items": items, "attrs": attrs}
    if facets_file:
        fmap = {}
        for lineno, (p, f) in facet_rows:
            if p in fmap and fmap[p] != f:
                raise ParseError(f"{facets_file}:{lineno}: attribute {p!r} assigned to two facets")
            fmap[p] = f
        missing = [p for p in attrs if p not in fmap]
        if missing:
            raise ParseError(f"{facets_file}: attributes without a facet: {missing[:5]}")
        facet_names = sorted(set(fmap.values()))
        fix = {k: i for i, k in enumerate(facet_names)}
        facets = [fix[fmap[p]] for p in attrs]
        vocab["facets"] = facet_names

    per_user = {uix[u]: [vix[v] for v in seq] for u, seq in kept.items()}
    splits = split_interactions(per_user, split, seed, chronological=has_ts)
    _check_splits(split, splits)
    meta = {"source": "ingest", "seed": seed, "split": list(split), "chronological": has_ts,
            "min_interactions": min_interactions}
    return Dataset(len(users), len(items), len(attrs), *splits, [sorted(s) for s in item_attrs], facets,
                   vocab, meta)


# -- synthetic worlds -------------------------------------------------------------------

def bit_attrs(i: int, n_bits: int) -> list[int]:
    return [j for j in range(n_bits) if (i >> j) & 1]


def make_synthetic(n_bits: int, seed: int = 0, n_users: int = 20, interactions: int = 20,
                   concentration: float = 0.8, pattern_bits: int = 2, split=(0.7, 0.2, 0.1)) -> Dataset:
    """``2**n_bits`` items; item ``i`` has attribute ``j`` iff bit ``j`` of ``i`` is set.

    Each user prefers items matching a random pattern of ``pattern_bits`` fixed
    bits; a fraction ``concentration`` of their interactions comes from that
    pattern and the rest is uniform.
    """
    if not 1 <= n_bits <= 12:
        raise ValueError("n_bits must be in 1..12")
    n_items = 1 << n_bits
    interactions = min(interactions, n_items)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), n_bits]))
    per_user = {}
    patterns = []
    for u in range(n_users):
        fixed = sorted(rng.choice(n_bits, size=min(pattern_bits, n_bits), replace=False).tolist())
        values = rng.integers(0, 2, size=len(fixed)).tolist()
        patterns.append([fixed, values])
        liked = [i for i in range(n_items) if all(((i >> j) & 1) == b for j, b in zip(fixed, values))]
        chosen: list[int] = []
        seen = set()
        while len(chosen) < interactions:
            pool = liked if rng.random() < concentration else range(n_items)
            v = int(pool[int(rng.integers(len(pool)))])
            if v not in seen:
                seen.add(v)
                chosen.append(v)
        per_user[u] = chosen
    splits = split_interactions(per_user, split, seed, chronological=True)
    vocab = {"users": [f"u{u}" for u in range(n_users)], "items": [f"v{i}" for i in range(n_items)],
             "attrs": [f"p{j}" for j in range(n_bits)]}
    meta = {"source": "synthetic", "n_bits": n_bits, "seed": seed, "n_users": n_users,
            "interactions": interactions, "concentration": concentration, "patterns": patterns,
            "split": list(split)}
    return Dataset(n_users, n_items, n_bits, *splits, [bit_attrs(i, n_bits) for i in range(n_items)], None,
                   vocab, meta)
