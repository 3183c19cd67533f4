import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgcrs import kernels

from _worlds import random_graph

BACKENDS = kernels.backends()


def dense_adjacency(g, w):
    A = np.zeros((g.n_entities, g.n_entities))
    for s in range(g.nbr.shape[0]):
        r, c = g.slot_row[s], g.nbr[s]
        if g.alive[r] and g.alive[c]:
            A[r, c] += w[s]
    return A


def test_backend_flag_is_consistent():
    assert kernels.BACKEND in BACKENDS
    assert "python" in BACKENDS


@pytest.mark.parametrize("name", sorted(BACKENDS))
@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_spmm_matches_dense(name, seed):
    impl = BACKENDS[name]
    g, rng = random_graph(seed, max_per_kind=12)
    g.remove_gids(rng.choice(g.n_entities, size=g.n_entities // 4, replace=False))
    w = rng.standard_normal(g.nbr.shape[0])
    x = rng.standard_normal((g.n_entities, 3))
    A = dense_adjacency(g, w)
    out = np.empty_like(x)
    impl.spmm(g.indptr, g.nbr, w, g.alive, x, out)
    np.testing.assert_allclose(out, A @ x, atol=1e-12)
    impl.spmm_t(g.indptr, g.nbr, w, g.alive, x, out)
    np.testing.assert_allclose(out, A.T @ x, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_row_softmax_sums_to_one_over_live_slots(name):
    impl = BACKENDS[name]
    g, rng = random_graph(4, max_per_kind=10)
    g.remove_gids(np.array([0, 3]))
    alpha = 50 * rng.standard_normal(g.nbr.shape[0])
    out = np.empty_like(alpha)
    impl.row_softmax(g.indptr, g.nbr, alpha, g.alive, out)
    assert np.all(np.isfinite(out)) and np.all(out >= 0)
    live = (g.alive[g.slot_row] != 0) & (g.alive[g.nbr] != 0)
    assert np.all(out[~live] == 0)
    tot = np.zeros(g.n_entities)
    np.add.at(tot, g.slot_row, out)
    has = np.zeros(g.n_entities, bool)
    has[g.slot_row[live]] = True
    np.testing.assert_allclose(tot[has], 1.0, atol=1e-12)
    assert np.all(tot[~has] == 0)


@pytest.mark.skipif("cython" not in BACKENDS, reason="extension not built")
def test_backends_agree_bitwise():
    g, rng = random_graph(9, max_per_kind=25)
    g.remove_gids(rng.choice(g.n_entities, size=5, replace=False))
    w = rng.standard_normal(g.nbr.shape[0])
    x = rng.standard_normal((g.n_entities, 6))
    outs = {}
    for name, impl in BACKENDS.items():
        a, b, c = np.empty_like(x), np.empty_like(x), np.empty_like(w)
        impl.spmm(g.indptr, g.nbr, w, g.alive, x, a)
        impl.spmm_t(g.indptr, g.nbr, w, g.alive, x, b)
        impl.row_softmax(g.indptr, g.nbr, w, g.alive, c)
        outs[name] = (a, b, c)
    for p, c in zip(outs["python"], outs["cython"]):
        np.testing.assert_allclose(p, c, rtol=1e-13, atol=1e-13)
