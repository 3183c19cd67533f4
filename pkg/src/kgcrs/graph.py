"""Heterogeneous user/item/attribute knowledge graph with a session overlay.

The base triple set is immutable once built.  A session removes negative
entities by flipping bits in an ``alive`` mask; ``reset_session`` clears the
mask, so a reset is O(N) and restores base-graph answers bit for bit.
"""
from __future__ import annotations

import enum
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DuplicateTriple, EntityRemoved, MalformedTriple, ParseError


class Kind(enum.IntEnum):
    USER = 0
    ITEM = 1
    ATTR = 2


class Relation(enum.IntEnum):
    USER_ITEM = 0
    ITEM_ATTR = 1
    USER_ATTR = 2


class Direction(enum.IntEnum):
    OUTGOING = 0  # queried entity is the head
    INCOMING = 1  # queried entity is the tail


RELATION_KINDS = {
    Relation.USER_ITEM: (Kind.USER, Kind.ITEM),
    Relation.ITEM_ATTR: (Kind.ITEM, Kind.ATTR),
    Relation.USER_ATTR: (Kind.USER, Kind.ATTR),
}

_KIND_NAMES = {"user": Kind.USER, "u": Kind.USER, "item": Kind.ITEM, "v": Kind.ITEM,
               "attr": Kind.ATTR, "p": Kind.ATTR, "attribute": Kind.ATTR}
_KIND_LABEL = {Kind.USER: "user", Kind.ITEM: "item", Kind.ATTR: "attr"}


class EntityId(NamedTuple):
    kind: Kind
    index: int

    def __repr__(self) -> str:
        return f"{'uvp'[self.kind]}{self.index}"


class Triple(NamedTuple):
    head: EntityId
    relation: Relation
    tail: EntityId


def user(i: int) -> EntityId:
    return EntityId(Kind.USER, int(i))


def item(i: int) -> EntityId:
    return EntityId(Kind.ITEM, int(i))


def attr(i: int) -> EntityId:
    return EntityId(Kind.ATTR, int(i))


def make_triple(head: EntityId, relation: int, tail: EntityId) -> Triple:
    return Triple(EntityId(Kind(head[0]), int(head[1])), Relation(relation),
                  EntityId(Kind(tail[0]), int(tail[1])))


class KnowledgeGraph:
    """Triple store over three entity kinds, addressed by dense global ids.

    Global id layout is ``[users | items | attrs]``.  Adjacency is a CSR
    structure over both directions of every triple, each row sorted by
    (relation id, neighbour index).
    """

    def __init__(self, triples: Iterable[Triple], counts: tuple[int, int, int] | None = None):
        triples = [make_triple(*t) for t in triples]
        seen = set()
        for t in triples:
            hk, tk = RELATION_KINDS[t.relation]
            if t.head.kind != hk or t.tail.kind != tk:
                raise MalformedTriple(f"{t}: relation r{int(t.relation)} needs "
                                      f"({_KIND_LABEL[hk]}, {_KIND_LABEL[tk]})")
            if t.head.index < 0 or t.tail.index < 0:
                raise MalformedTriple(f"{t}: negative index")
            if t in seen:
                raise DuplicateTriple(str(t))
            seen.add(t)

        inferred = [0, 0, 0]
        for t in triples:
            for e in (t.head, t.tail):
                inferred[e.kind] = max(inferred[e.kind], e.index + 1)
        if counts is None:
            counts = tuple(inferred)
        elif any(c < i for c, i in zip(counts, inferred)):
            raise MalformedTriple(f"entity index exceeds declared counts {counts}")
        self.counts = tuple(int(c) for c in counts)
        self.n_users, self.n_items, self.n_attrs = self.counts
        self.offsets = (0, self.n_users, self.n_users + self.n_items)
        self.n_entities = sum(self.counts)

        order = sorted(triples, key=lambda t: (int(t.relation), self.gid(t.head), self.gid(t.tail)))
        self.triples: tuple[Triple, ...] = tuple(order)
        n_t = len(order)
        self.heads = np.array([self.gid(t.head) for t in order], dtype=np.int64)
        self.tails = np.array([self.gid(t.tail) for t in order], dtype=np.int64)
        self.rels = np.array([int(t.relation) for t in order], dtype=np.int64)

        # two slots per triple: (row, neighbour, relation, triple index, direction)
        rows = np.concatenate([self.heads, self.tails])
        nbrs = np.concatenate([self.tails, self.heads])
        srel = np.concatenate([self.rels, self.rels])
        stri = np.concatenate([np.arange(n_t), np.arange(n_t)])
        sdir = np.concatenate([np.zeros(n_t, np.int64), np.ones(n_t, np.int64)])
        perm = np.lexsort((nbrs, srel, rows))
        self.slot_row = rows[perm]
        self.nbr = nbrs[perm]
        self.slot_rel = srel[perm]
        self.slot_triple = stri[perm]
        self.slot_dir = sdir[perm]
        self.indptr = np.zeros(self.n_entities + 1, dtype=np.int64)
        np.add.at(self.indptr, self.slot_row + 1, 1)
        np.cumsum(self.indptr, out=self.indptr)
        for a in (self.heads, self.tails, self.rels, self.slot_row, self.nbr,
                  self.slot_rel, self.slot_triple, self.slot_dir, self.indptr):
            a.setflags(write=False)

        self.item_attrs: list[frozenset[int]] = [frozenset() for _ in range(self.n_items)]
        self.attr_items: list[frozenset[int]] = [frozenset() for _ in range(self.n_attrs)]
        self.user_items: list[frozenset[int]] = [frozenset() for _ in range(self.n_users)]
        ia = [set() for _ in range(self.n_items)]
        ai = [set() for _ in range(self.n_attrs)]
        ui = [set() for _ in range(self.n_users)]
        self.item_attr_matrix = np.zeros((self.n_items, self.n_attrs), dtype=bool)
        for t in order:
            if t.relation == Relation.ITEM_ATTR:
                ia[t.head.index].add(t.tail.index)
                ai[t.tail.index].add(t.head.index)
                self.item_attr_matrix[t.head.index, t.tail.index] = True
            elif t.relation == Relation.USER_ITEM:
                ui[t.head.index].add(t.tail.index)
        self.item_attrs = [frozenset(s) for s in ia]
        self.attr_items = [frozenset(s) for s in ai]
        self.user_items = [frozenset(s) for s in ui]
        self.item_attr_matrix.setflags(write=False)
        self._linked = {}
        for h, r, t in zip(self.heads.tolist(), self.rels.tolist(), self.tails.tolist()):
            self._linked.setdefault((h, r), set()).add(t)

        self.alive = np.ones(self.n_entities, dtype=np.uint8)
        self.version = 0

    # -- addressing ---------------------------------------------------------
    def gid(self, e: EntityId) -> int:
        kind, idx = Kind(e[0]), int(e[1])
        if not 0 <= idx < self.counts[kind]:
            raise KeyError(f"{_KIND_LABEL[kind]} index {idx} out of range")
        return self.offsets[kind] + idx

    def entity(self, gid: int) -> EntityId:
        gid = int(gid)
        if gid >= self.offsets[2]:
            return EntityId(Kind.ATTR, gid - self.offsets[2])
        if gid >= self.offsets[1]:
            return EntityId(Kind.ITEM, gid - self.offsets[1])
        return EntityId(Kind.USER, gid)

    def gids(self, kind: Kind, indices: Iterable[int]) -> np.ndarray:
        return self.offsets[kind] + np.asarray(list(indices), dtype=np.int64)

    # -- overlay ------------------------------------------------------------
    def fork(self) -> "KnowledgeGraph":
        """Shallow copy sharing the base graph with an independent, empty overlay."""
        g = object.__new__(KnowledgeGraph)
        g.__dict__.update(self.__dict__)
        g.alive = np.ones(self.n_entities, dtype=np.uint8)
        g.version = 0
        return g

    def is_removed(self, e: EntityId) -> bool:
        return not self.alive[self.gid(e)]

    @property
    def removed(self) -> frozenset[EntityId]:
        return frozenset(self.entity(g) for g in np.flatnonzero(self.alive == 0))

    def remove_entities(self, ids: Iterable[EntityId]) -> None:
        changed = False
        for e in ids:
            try:
                g = self.gid(e)
            except KeyError:
                continue
            if self.alive[g]:
                self.alive[g] = 0
                changed = True
        if changed:
            self.version += 1

    def remove_gids(self, gids: np.ndarray) -> None:
        gids = np.asarray(gids, dtype=np.int64)
        if gids.size and self.alive[gids].any():
            self.alive[gids] = 0
            self.version += 1

    def reset_session(self) -> None:
        if not self.alive.all():
            self.alive[:] = 1
            self.version += 1

    # -- queries ------------------------------------------------------------
    def triple_mask(self) -> np.ndarray:
        """Boolean mask over base triples that are currently effective."""
        return (self.alive[self.heads] & self.alive[self.tails]).astype(bool)

    def slot_mask(self) -> np.ndarray:
        return (self.alive[self.slot_row] & self.alive[self.nbr]).astype(bool)

    def effective_triples(self) -> set[Triple]:
        return {t for t, keep in zip(self.triples, self.triple_mask()) if keep}

    @property
    def n_triples(self) -> int:
        return len(self.triples)

    def n_effective(self) -> int:
        return int(self.triple_mask().sum())

    def neighbors(self, h: EntityId) -> list[tuple[Relation, EntityId, Direction]]:
        g = self.gid(h)
        if not self.alive[g]:
            raise EntityRemoved(repr(h))
        lo, hi = self.indptr[g], self.indptr[g + 1]
        return [(Relation(int(self.slot_rel[s])), self.entity(self.nbr[s]), Direction(int(self.slot_dir[s])))
                for s in range(lo, hi) if self.alive[self.nbr[s]]]

    def is_linked(self, head_gid: int, relation: int, tail_gid: int) -> bool:
        """Whether ``(head, relation, tail)`` is an effective triple."""
        if not (self.alive[head_gid] and self.alive[tail_gid]):
            return False
        return tail_gid in self._linked.get((int(head_gid), int(relation)), ())

    def linked_tails(self, head_gid: int, relation: int) -> set[int]:
        """Effective tails of ``(head, relation, .)`` as global ids."""
        if not self.alive[head_gid]:
            return set()
        return {t for t in self._linked.get((int(head_gid), int(relation)), ()) if self.alive[t]}

    def items_with_all(self, attrs: Iterable[int]) -> set[int]:
        """Item indices carrying every attribute in ``attrs`` (base graph)."""
        attrs = list(attrs)
        if not attrs:
            return set(range(self.n_items))
        out = set(self.attr_items[attrs[0]])
        for a in attrs[1:]:
            out &= self.attr_items[a]
        return out


def build_graph(triples: Iterable[Triple], counts: tuple[int, int, int] | None = None) -> KnowledgeGraph:
    return KnowledgeGraph(triples, counts)


def neighbors(g: KnowledgeGraph, h: EntityId):
    return g.neighbors(h)


def remove_entities(g: KnowledgeGraph, ids: Iterable[EntityId]) -> None:
    g.remove_entities(ids)


def reset_session(g: KnowledgeGraph) -> None:
    g.reset_session()


# -- triple file ------------------------------------------------------------

def _parse_entity(tok: str, lineno: int) -> EntityId:
    kind, sep, idx = tok.partition(":")
    if not sep or kind.lower() not in _KIND_NAMES or not idx.isdigit():
        raise ParseError(f"line {lineno}: bad entity {tok!r}")
    return EntityId(_KIND_NAMES[kind.lower()], int(idx))


def read_triples(path: str | Path) -> list[Triple]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[1] not in ("r0", "r1", "r2"):
                raise ParseError(f"line {lineno}: expected head<TAB>r0|r1|r2<TAB>tail")
            out.append(Triple(_parse_entity(parts[0], lineno), Relation(int(parts[1][1])),
                              _parse_entity(parts[2], lineno)))
    return out


def format_triples(triples: Iterable[Triple]) -> str:
    lines = [f"{_KIND_LABEL[t.head.kind]}:{t.head.index}\tr{int(t.relation)}\t"
             f"{_KIND_LABEL[t.tail.kind]}:{t.tail.index}" for t in triples]
    return "".join(line + "\n" for line in lines)


def write_triples(path: str | Path, triples: Iterable[Triple]) -> None:
    Path(path).write_text(format_triples(triples), encoding="utf-8")
