import numpy as np
import pytest
from hypothesis import given

from deepsn.graph import Graph, GraphFormatError, build_weighted, load_edge_list, neighbors, write_edge_list
from helpers import graphs


def _write(tmp_path, text, name="g.txt"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_two_edge_path(tmp_path):
    g = load_edge_list(_write(tmp_path, "0 1\n1 2"))
    assert (g.n, g.m) == (3, 2)


def test_undirected_duplicates_collapse(tmp_path):
    g = load_edge_list(_write(tmp_path, "0 1\n1 0\n0 1"))
    assert (g.n, g.m) == (2, 1)


def test_comments_and_extra_tokens(tmp_path):
    g = load_edge_list(_write(tmp_path, "# header\n% other\n0 1 0.5\n\n1 2 1700000000\n"))
    assert (g.n, g.m) == (3, 2)


def test_labels_compacted_in_first_seen_order(tmp_path):
    g = load_edge_list(_write(tmp_path, "10 30\n30 20\n"))
    assert g.labels == (10, 30, 20)
    assert g.edges.tolist() == [[0, 1], [1, 2]]


def test_malformed_line_reports_line_number(tmp_path):
    with pytest.raises(GraphFormatError, match=":3:"):
        load_edge_list(_write(tmp_path, "0 1\n1 2\n2 x\n"))
    with pytest.raises(GraphFormatError, match=":1:"):
        load_edge_list(_write(tmp_path, "7\n"))


def test_self_loops_dropped_with_warning(tmp_path, caplog):
    g = load_edge_list(_write(tmp_path, "0 0\n0 1\n1 1\n"))
    assert g.m == 1
    assert "dropped 2 self-loop" in caplog.text


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_edge_list(tmp_path / "absent.txt")


def test_neighbors_examples():
    path = Graph.from_edges(3, [(0, 1), (1, 2)])
    assert neighbors(path, 1).tolist() == [0, 2]
    iso = Graph.from_edges(3, [(0, 1)])
    assert neighbors(iso, 2).tolist() == []
    tri = Graph.from_edges(3, [(1, 2), (2, 0), (0, 1)])
    assert neighbors(tri, 0).tolist() == [1, 2]
    with pytest.raises(IndexError):
        neighbors(tri, 3)


def test_canonical_edge_order():
    g = Graph.from_edges(4, [(3, 2), (1, 0), (2, 0)])
    assert g.edges.tolist() == [[0, 1], [0, 2], [2, 3]]


def test_arcs_orientation():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    src, dst = g.arcs()
    assert src.tolist() == [0, 1, 1, 2]
    assert dst.tolist() == [1, 2, 0, 1]


def test_build_weighted_checks():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    gw = build_weighted(g, [1.0, 1.0])
    assert np.array_equal(gw.adjacency().toarray(), g.adjacency().toarray())
    with pytest.raises(ValueError):
        build_weighted(g, [1.0])
    with pytest.raises(ValueError):
        build_weighted(g, [1.0, -0.5])
    with pytest.raises(ValueError):
        build_weighted(g, [1.0, np.nan])


def test_graph_is_immutable():
    g = Graph.from_edges(3, [(0, 1)])
    with pytest.raises(ValueError):
        g.edges[0, 0] = 2


@given(graphs(n_max=12))
def test_degree_sum_and_symmetry(g):
    assert g.degree.sum() == 2 * g.m
    for u in range(g.n):
        nb = g.neighbors(u)
        assert np.all(np.diff(nb) > 0)
        for v in nb:
            assert u in g.neighbors(v)
            assert u != v


@given(graphs(n_max=12))
def test_write_load_round_trip(g):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "g.txt"
        write_edge_list(g, p)
        h = load_edge_list(p)
    assert h == g


def test_round_trip_keeps_isolated_vertices(tmp_path):
    g = Graph.from_edges(5, [(0, 3)])
    write_edge_list(g, tmp_path / "g.txt")
    assert load_edge_list(tmp_path / "g.txt") == g
