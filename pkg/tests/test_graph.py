import io
import math

import numpy as np
import pytest

from bitgear.graph import (EdgeListError, InteractionGraph, load_edge_list, load_report,
                           norm_coefficient, write_edge_list)

from conftest import random_graph


def test_direct_construction():
    g, split = load_edge_list(["u1 iA", "u1 iB", "u2 iA"])
    assert (g.num_users, g.num_items, g.num_edges) == (2, 2, 3)
    assert g.user_neighbors(0).tolist() == [0, 1]
    assert g.item_neighbors(0).tolist() == [0, 1]
    assert g.user_ids == ("u1", "u2")
    assert g.item_ids == ("iA", "iB")
    assert split.test_items == {}


def test_empty_input_is_an_error():
    with pytest.raises(EdgeListError, match="no edges"):
        load_edge_list([])
    with pytest.raises(EdgeListError, match="no edges"):
        load_edge_list(["# only a comment", "   "])


def test_malformed_line_reports_line_number():
    with pytest.raises(EdgeListError, match=":2:"):
        load_edge_list(["a b", "lonely", "c d"])


def test_duplicates_collapse_and_comments_are_skipped():
    g, _ = load_edge_list(["# header", "a x", "a x", "b x 5 881250949", "a y"], fmt="pairs")
    assert g.num_edges == 3
    assert g.user_neighbors(0).tolist() == [0, 1]


def test_format_detection():
    pairs, _ = load_edge_list(["u i 4 100", "v j 3 200"])
    assert pairs.num_edges == 2 and pairs.num_items == 2
    adj, _ = load_edge_list(["u a b c", "v a"])
    assert adj.num_edges == 4 and adj.num_items == 3
    forced, _ = load_edge_list(["u a b", "v a c"], fmt="adjacency")
    assert forced.num_edges == 4


def test_test_split_and_orphans():
    g, split = load_edge_list(["u0 a", "u0 b", "u1 b"], ["u0 c", "u1 a", "u2 a", "u1 b"])
    # c and u2 only appear in the test file
    assert g.num_users == 3 and g.num_items == 3
    assert split.orphan_users.tolist() == [2]
    assert split.orphan_items.tolist() == [2]
    assert split.test_items[0].tolist() == [2]
    # (u1, b) is already a training edge, so it is dropped from the test set
    assert split.test_items[1].tolist() == [0]
    assert g.user_degrees[2] == 0
    report = dict(line.split("=") for line in load_report(g, split).splitlines())
    assert report == {"users": "3", "items": "3", "train_edges": "3", "test_edges": "3",
                      "orphan_test_nodes": "2"}


def test_train_and_test_are_disjoint():
    g, split = load_edge_list(["a x", "a y", "b y"], ["a x", "a z", "b x"])
    for u, items in split.test_items.items():
        assert not g.has_edges(np.full(items.size, u), items).any()


def test_files_on_disk(tmp_path):
    train = tmp_path / "train.txt"
    train.write_text("1 10 11\n2 11\n", encoding="utf-8")
    g, _ = load_edge_list(train)
    assert g.num_edges == 3


@pytest.mark.parametrize("seed", range(5))
def test_invariants_on_random_graphs(seed):
    g = random_graph(7, 9, 0.3, seed)
    assert g.user_degrees.sum() == g.item_degrees.sum() == g.num_edges
    for u in range(g.num_users):
        nb = g.user_neighbors(u)
        assert np.all(np.diff(nb) > 0)
        for i in nb:
            assert u in g.item_neighbors(i)
    for i in range(g.num_items):
        assert np.all(np.diff(g.item_neighbors(i)) > 0)


@pytest.mark.parametrize("seed", range(5))
def test_round_trip(seed):
    rng = np.random.default_rng(seed)
    lines = [f"user{rng.integers(8)} item{rng.integers(12)}" for _ in range(30)]
    g, _ = load_edge_list(lines)
    buf = io.StringIO()
    write_edge_list(g, buf)
    g2, _ = load_edge_list(buf.getvalue().splitlines())
    assert (g2.num_users, g2.num_items, g2.num_edges) == (g.num_users, g.num_items, g.num_edges)
    assert g2.user_ids == g.user_ids and g2.item_ids == g.item_ids
    np.testing.assert_array_equal(g2.user_indptr, g.user_indptr)
    np.testing.assert_array_equal(g2.user_items, g.user_items)
    np.testing.assert_array_equal(g2.item_users, g.item_users)


def test_norm_coefficient_examples():
    g, _ = load_edge_list(["u i"])
    assert norm_coefficient(g, 0, 0) == 1.0
    # user with 4 items, item with 9 users
    lines = [f"u0 i{k}" for k in range(4)] + [f"v{k} i0" for k in range(8)]
    g, _ = load_edge_list(lines)
    assert g.user_degrees[0] == 4 and g.item_degrees[0] == 9
    assert norm_coefficient(g, 0, 0) == pytest.approx(1 / 6)
    lines = [f"u0 i{k}" for k in range(5)]
    g, _ = load_edge_list(lines)
    # aggregating u0 (degree 5) into item i0
    assert norm_coefficient(g, 0, 0, mode="left", target="item") == pytest.approx(0.2)
    assert norm_coefficient(g, 0, 0, mode="left", target="user") == 1.0


def test_norm_coefficient_symmetric_direction_free(small_graph):
    users, items = small_graph.edges()
    for u, i in zip(users, items):
        a = norm_coefficient(small_graph, u, i, "symmetric", target="user")
        b = norm_coefficient(small_graph, u, i, "symmetric", target="item")
        assert a == b == pytest.approx(1 / math.sqrt(small_graph.user_degrees[u] * small_graph.item_degrees[i]))


def test_norm_coefficient_rejects_non_edge():
    g, _ = load_edge_list(["a x", "b y"])
    with pytest.raises(ValueError):
        norm_coefficient(g, 0, 1)


def test_from_edges_validates_ranges():
    with pytest.raises(ValueError):
        InteractionGraph.from_edges(2, 2, [0, 2], [0, 1])
