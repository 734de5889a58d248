from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from streamgnn.errors import MalformedGraphError
from streamgnn.fixtures import random_graph
from streamgnn.graph import (Graph, add_virtual_node, coo_to_csc, coo_to_csr, read_graph,
                             write_graph)

TRI = Graph(3, [(0, 1), (0, 2), (1, 2)], np.arange(3.0).reshape(3, 1))


def test_csr_empty():
    csr = coo_to_csr(Graph(3, []))
    assert csr.degree_table.tolist() == [0, 0, 0]
    assert csr.neighbor_table.tolist() == []


def test_csr_triangle():
    csr = coo_to_csr(TRI)
    assert csr.degree_table.tolist() == [2, 1, 0]
    assert csr.neighbor_table.tolist() == [1, 2, 2]
    assert csr.edge_index_table.tolist() == [0, 1, 2]


def test_csc_triangle():
    csc = coo_to_csc(TRI)
    assert csc.degree_table.tolist() == [0, 1, 2]
    assert csc.neighbor_table.tolist() == [0, 0, 1]


def test_csc_self_loop():
    csc = coo_to_csc(Graph(2, [(1, 1)]))
    assert csc.degree_table.tolist() == [0, 1]
    assert csc.neighbor_table.tolist() == [1]


def test_out_of_range_edge():
    with pytest.raises(MalformedGraphError):
        Graph(2, [(0, 2)])
    with pytest.raises(MalformedGraphError):
        Graph(2, [(-1, 0)])


def test_feature_row_mismatch():
    with pytest.raises(MalformedGraphError):
        Graph(3, [(0, 1)], np.zeros((2, 4)))
    with pytest.raises(MalformedGraphError):
        Graph(3, [(0, 1)], None, np.zeros((2, 1)))


def _sorted(coo):
    coo = np.asarray(coo).reshape(-1, 2)
    return coo[np.lexsort((coo[:, 1], coo[:, 0]))]


def test_csr_round_trip_random(rng):
    g = random_graph(rng, 50, 300)
    assert np.array_equal(_sorted(coo_to_csr(g).to_coo()), _sorted(g.edges))


def test_csc_is_csr_of_reverse(rng):
    g = random_graph(rng, 50, 300)
    a, b = coo_to_csc(g), coo_to_csr(g.reversed())
    assert np.array_equal(a.degree_table, b.degree_table)
    assert np.array_equal(a.neighbor_table, b.neighbor_table)
    assert np.array_equal(a.edge_index_table, b.edge_index_table)


@given(st.integers(1, 12).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
                                             max_size=40))))
def test_csr_invariants(case):
    n, edges = case
    g = Graph(n, edges)
    csr = coo_to_csr(g)
    assert csr.degree_table.sum() == g.num_edges
    assert sorted(csr.edge_index_table.tolist()) == list(range(g.num_edges))
    for i in range(n):
        nbrs, eids = csr.neighbors(i)
        # stable: original COO order within each slice
        expect = [k for k, (s, _) in enumerate(edges) if s == i]
        assert eids.tolist() == expect
        assert nbrs.tolist() == [edges[k][1] for k in expect]


def test_virtual_node_single():
    g = add_virtual_node(Graph(1, [], np.ones((1, 2))))
    assert g.num_nodes == 2 and g.num_edges == 2
    assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (1, 0)]
    assert g.node_features[1].tolist() == [0.0, 0.0]


def test_virtual_node_triangle():
    g = add_virtual_node(TRI)
    assert g.num_nodes == 4 and g.num_edges == 9
    assert np.array_equal(g.edges[:3], TRI.edges)
    assert coo_to_csr(g).degree_table[3] == 3
    assert coo_to_csc(g).degree_table[3] == 3


def test_virtual_node_preserves_edge_features(rng):
    g = random_graph(rng, 6, 10, 2, 3)
    h = add_virtual_node(g)
    assert np.array_equal(h.edge_features[:10], g.edge_features)
    assert not h.edge_features[10:].any()


def test_virtual_node_rejects_empty():
    with pytest.raises(MalformedGraphError):
        add_virtual_node(Graph(0, []))


@pytest.mark.parametrize("binary", [False, True])
def test_file_round_trip(tmp_path, rng, binary):
    g = random_graph(rng, 9, 20, 3, 2)
    path = tmp_path / ("g.sgb" if binary else "g.txt")
    write_graph(g, path, binary=binary)
    h = read_graph(path)
    assert h.num_nodes == g.num_nodes
    assert np.array_equal(h.edges, g.edges)
    np.testing.assert_allclose(h.node_features, g.node_features, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(h.edge_features, g.edge_features, rtol=1e-6, atol=1e-7)


def test_text_file_malformed(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("2 1 0 0\n0 5\n")
    with pytest.raises(MalformedGraphError):
        read_graph(p)


def test_permuted_relabels():
    g = TRI.permuted([2, 0, 1])
    assert g.edges.tolist() == [[2, 0], [2, 1], [0, 1]]
    assert g.node_features[:, 0].tolist() == [1.0, 2.0, 0.0]


def test_text_round_trip_without_features(tmp_path):
    g = Graph(3, [(0, 1), (0, 2), (1, 2)])
    write_graph(g, tmp_path / "g.txt")
    back = read_graph(tmp_path / "g.txt")
    assert back.node_features.shape == (3, 0) and back.edges.tolist() == g.edges.tolist()
