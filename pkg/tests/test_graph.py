import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgcrs.errors import DuplicateTriple, EntityRemoved, MalformedTriple, ParseError
from kgcrs.graph import (Direction, KnowledgeGraph, Relation, Triple, attr, build_graph, item, neighbors,
                         read_triples, remove_entities, reset_session, user, write_triples)

from _worlds import random_graph


def two_triples():
    return build_graph([Triple(user(0), Relation.USER_ITEM, item(0)),
                        Triple(item(0), Relation.ITEM_ATTR, attr(0))])


def rebuilt_without(g, removed_gids):
    dead = set(int(x) for x in removed_gids)
    keep = [t for t in g.triples if g.gid(t.head) not in dead and g.gid(t.tail) not in dead]
    return KnowledgeGraph(keep, g.counts)


def test_empty_graph():
    g = build_graph([])
    assert g.n_triples == 0
    assert g.effective_triples() == set()
    assert g.items_with_all([]) == set()


def test_neighbors_both_directions():
    g = two_triples()
    assert neighbors(g, item(0)) == [(Relation.USER_ITEM, user(0), Direction.INCOMING),
                                     (Relation.ITEM_ATTR, attr(0), Direction.OUTGOING)]


def test_wrong_head_kind_rejected():
    with pytest.raises(MalformedTriple):
        build_graph([Triple(user(0), Relation.ITEM_ATTR, attr(0))])


def test_duplicate_rejected():
    t = Triple(user(0), Relation.USER_ITEM, item(0))
    with pytest.raises(DuplicateTriple):
        build_graph([t, t])


def test_isolated_entity_has_no_neighbors():
    g = KnowledgeGraph([Triple(user(0), Relation.USER_ITEM, item(0))], (1, 2, 1))
    assert neighbors(g, item(1)) == []
    assert neighbors(g, attr(0)) == []


def test_removed_neighbor_filtered_and_reset_restores():
    g = two_triples()
    remove_entities(g, {attr(0)})
    assert neighbors(g, item(0)) == [(Relation.USER_ITEM, user(0), Direction.INCOMING)]
    with pytest.raises(EntityRemoved):
        neighbors(g, attr(0))
    reset_session(g)
    assert len(neighbors(g, item(0))) == 2


def test_remove_empty_and_idempotent():
    g, _ = random_graph(3)
    before = g.effective_triples()
    v = g.version
    remove_entities(g, set())
    assert g.effective_triples() == before and g.version == v
    remove_entities(g, {item(0)})
    once = (g.effective_triples(), g.alive.copy())
    remove_entities(g, {item(0)})
    assert g.effective_triples() == once[0]
    assert np.array_equal(g.alive, once[1])


def test_removal_drops_incident_triples():
    triples = [Triple(user(u), Relation.USER_ITEM, item(3)) for u in range(3)]
    triples.append(Triple(item(3), Relation.ITEM_ATTR, attr(0)))
    triples.append(Triple(user(0), Relation.USER_ITEM, item(0)))
    g = KnowledgeGraph(triples, (3, 4, 1))
    n = g.n_effective()
    remove_entities(g, {item(3)})
    assert g.n_effective() == n - 4


def test_reset_on_untouched_graph_is_identity():
    g, _ = random_graph(5)
    snapshot = [neighbors(g, g.entity(i)) for i in range(g.n_entities)]
    reset_session(g)
    assert [neighbors(g, g.entity(i)) for i in range(g.n_entities)] == snapshot


def test_fork_leaves_parent_untouched():
    g, _ = random_graph(7)
    f = g.fork()
    f.remove_entities({item(0), attr(0)})
    assert g.alive.all()
    assert not f.is_removed(user(0)) and f.is_removed(item(0))


def test_derived_maps():
    g, _ = random_graph(11)
    for v in range(g.n_items):
        for p in range(g.n_attrs):
            has = p in g.item_attrs[v]
            assert has == (v in g.attr_items[p]) == bool(g.item_attr_matrix[v, p])
    attrs = [0, 1] if g.n_attrs > 1 else [0]
    brute = {v for v in range(g.n_items) if all(p in g.item_attrs[v] for p in attrs)}
    assert g.items_with_all(attrs) == brute


def test_triple_file_round_trip(tmp_path):
    g, _ = random_graph(13)
    path = tmp_path / "g.tsv"
    write_triples(path, g.triples)
    text = path.read_text()
    path.write_text("# comment\n\n" + text)
    assert sorted(read_triples(path)) == sorted(g.triples)


def test_triple_file_errors(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("user:0\tr9\titem:0\n")
    with pytest.raises(ParseError):
        read_triples(path)
    path.write_text("thing:0\tr0\titem:0\n")
    with pytest.raises(ParseError):
        read_triples(path)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2**31))
def test_overlay_matches_rebuild(graph_seed, removal_seed):
    g, _ = random_graph(graph_seed, max_per_kind=20)
    rng = np.random.default_rng(removal_seed)
    dead = rng.choice(g.n_entities, size=int(rng.integers(0, g.n_entities // 2 + 1)), replace=False)
    g.remove_gids(dead)
    h = rebuilt_without(g, dead)
    assert g.effective_triples() == set(h.triples)
    for i in range(g.n_entities):
        if g.alive[i]:
            assert neighbors(g, g.entity(i)) == neighbors(h, h.entity(i))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_removal_monotone_commutative_and_reset(seed):
    g, rng = random_graph(seed, max_per_kind=15)
    a = set(rng.choice(g.n_entities, size=3).tolist())
    b = set(rng.choice(g.n_entities, size=3).tolist()) - a
    base = g.effective_triples()
    f1, f2 = g.fork(), g.fork()
    f1.remove_entities([g.entity(x) for x in a])
    after_a = f1.effective_triples()
    assert after_a <= base
    f1.remove_entities([g.entity(x) for x in b])
    f2.remove_entities([g.entity(x) for x in b])
    f2.remove_entities([g.entity(x) for x in a])
    assert f1.effective_triples() == f2.effective_triples() <= after_a
    f1.reset_session()
    assert f1.effective_triples() == base
    assert all(neighbors(f1, g.entity(i)) == neighbors(g, g.entity(i)) for i in range(g.n_entities))


def test_interleaved_removals_then_reset_equal_fresh_build():
    g, rng = random_graph(21)
    for _ in range(10):
        g.remove_gids(rng.choice(g.n_entities, size=2))
    g.reset_session()
    fresh = KnowledgeGraph(g.triples, g.counts)
    assert np.array_equal(g.indptr, fresh.indptr) and np.array_equal(g.nbr, fresh.nbr)
    assert np.array_equal(g.slot_mask(), fresh.slot_mask())
