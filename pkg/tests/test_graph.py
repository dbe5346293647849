import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgaction.errors import NumericError, ValidationError
from kgaction.graph import (
    GraphMode,
    NodeRole,
    append_nodes,
    build_bipartite_adjacency,
    build_fc_adjacency,
    build_graph,
    cosine_similarity,
    normalize_adjacency,
    read_edge_list,
    similarity_matrix,
    write_edge_list,
)
from kgaction.numerics import SparseMatrix
from kgaction.selfcheck import tie_prone_features


def brute_force_edges(x, top_n):
    n = len(x)
    edges = set()
    for i in range(n):
        scored = []
        for j in range(n):
            if j != i:
                scored.append((-round(cosine_similarity(x[i], x[j]), 12), j))
        for _, j in sorted(scored)[:top_n]:
            edges |= {(i, j), (j, i)}
    return edges


@settings(max_examples=80, deadline=None)
@given(st.integers(3, 12), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_fc_adjacency_matches_brute_force(n, top_n, seed):
    top_n = min(top_n, n - 1)
    x = tie_prone_features(np.random.default_rng(seed), n)
    a = build_fc_adjacency(x, top_n)
    got = {(i, j) for i, j, _ in a.edges()}
    assert got == brute_force_edges(x, top_n)
    assert a.is_symmetric()
    assert np.all(np.diff(a.row_offsets) >= top_n)


def test_tie_goes_to_lower_index():
    # nodes 1 and 2 are identical, so node 0 sees an exact tie
    x = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    a = build_fc_adjacency(x, 1)
    assert {(i, j) for i, j, _ in a.edges()} == {(0, 1), (1, 0), (1, 2), (2, 1)}


def test_edge_weights_are_cosines():
    x = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    a = build_fc_adjacency(x, 1).to_dense()
    assert a[0, 1] == pytest.approx(1 / np.sqrt(2))


def test_adjacency_errors():
    with pytest.raises(ValidationError):
        build_fc_adjacency(np.ones((1, 2)), 1)
    with pytest.raises(ValidationError):
        build_fc_adjacency(np.eye(3), 3)
    with pytest.raises(ValidationError, match="'b'"):
        build_fc_adjacency(np.array([[1.0, 0], [0, 0], [0, 1.0]]), 1, labels=["a", "b", "c"])


def test_cosine_zero_norm_names_node():
    with pytest.raises(ValidationError, match="right"):
        cosine_similarity([1.0, 0.0], [0.0, 0.0], names=("left", "right"))


def test_similarity_matrix_symmetric_and_clipped(rng):
    s = similarity_matrix(rng.normal(size=(7, 3)))
    assert np.array_equal(s, s.T)
    assert s.max() <= 1.0 and s.min() >= -1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_bipartite_has_no_within_partition_edges(n, top_n, seed):
    rng = np.random.default_rng(seed)
    side = rng.random(n) < 0.5
    if side.all() or not side.any():
        side[0] = not side[0]
    top_n = min(top_n, side.sum(), (~side).sum())
    a = build_bipartite_adjacency(rng.normal(size=(n, 3)), side, top_n)
    assert all(side[i] != side[j] for i, j, _ in a.edges())
    assert a.is_symmetric()


def dense_normalization(a):
    a_hat = a + np.eye(len(a))
    d = a_hat.sum(axis=1)
    return np.diag(d**-0.5) @ a_hat @ np.diag(d**-0.5)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_normalization_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    a = np.triu(rng.uniform(0, 1, size=(n, n)) * (rng.random((n, n)) < 0.5), 1)
    a = a + a.T
    got = normalize_adjacency(SparseMatrix.from_dense(a)).matrix.to_dense()
    assert np.max(np.abs(got - dense_normalization(a))) < 1e-12


def test_normalization_hand_example():
    # two nodes joined by weight 1: degrees 2, every entry 1/2
    m = normalize_adjacency(SparseMatrix.from_dense(np.array([[0, 1.0], [1.0, 0]]))).matrix.to_dense()
    assert np.allclose(m, 0.5)


def test_normalization_rejects_bad_input():
    with pytest.raises(ValidationError, match="diagonal"):
        normalize_adjacency(SparseMatrix.from_dense(np.eye(2)))
    with pytest.raises(ValidationError, match="symmetric"):
        normalize_adjacency(SparseMatrix.from_dense(np.array([[0, 1.0], [0, 0]])))
    with pytest.raises(NumericError, match="node 0"):
        normalize_adjacency(SparseMatrix.from_dense(np.array([[0, -1.0], [-1.0, 0]])))


def test_isolated_node_gets_self_loop_only():
    m = normalize_adjacency(SparseMatrix.empty(3)).matrix.to_dense()
    assert np.array_equal(m, np.eye(3))


def test_permutation_equivariance(rng):
    x = rng.normal(size=(8, 4))
    perm = rng.permutation(8)
    a = build_fc_adjacency(x, 2).to_dense()
    b = build_fc_adjacency(x[perm], 2).to_dense()
    assert np.allclose(b, a[np.ix_(perm, perm)])


def test_build_graph_and_roles(rng):
    g = build_graph(list("abcde"), ["train", "train", "test", "auxiliary", "auxiliary"], rng.normal(size=(5, 3)), 1)
    assert g.indices(NodeRole.TEST) == [2]
    assert g.index_of("d") == 3
    with pytest.raises(ValidationError):
        g.index_of("z")
    bip = build_graph(list("abcde"), g.roles, g.features, 1, GraphMode.BIPARTITE)
    aux = {3, 4}
    assert all((i in aux) != (j in aux) for i, j, _ in bip.adjacency.edges())


def test_fingerprint_changes_with_features(rng):
    x = rng.normal(size=(4, 2))
    g1 = build_graph(list("abcd"), ["train"] * 4, x, 1)
    g2 = build_graph(list("abcd"), ["train"] * 4, x * 2, 1)
    assert g1.fingerprint() != g2.fingerprint()
    assert normalize_adjacency(g1).source_fingerprint == g1.fingerprint()


def test_append_nodes_rebuilds(rng):
    g = build_graph(list("abc"), ["train"] * 3, rng.normal(size=(3, 2)), 1)
    g2 = append_nodes(g, ["d"], ["test"], rng.normal(size=(1, 2)))
    assert g2.node_count == 4 and g2.labels[-1] == "d"
    with pytest.raises(ValidationError):
        append_nodes(g, ["a"], ["test"], np.ones((1, 2)))


def test_edge_list_round_trip(tmp_path, rng):
    g = build_graph(["x y", "b", "c", "d"], ["train", "test", "train", "auxiliary"], rng.normal(size=(4, 3)), 2)
    path = tmp_path / "g.edges"
    write_edge_list(path, g)
    back = read_edge_list(path, g.features)
    assert back.labels == g.labels and back.roles == g.roles
    assert back.top_n == 2
    assert np.array_equal(back.adjacency.to_dense(), g.adjacency.to_dense())
    assert back.fingerprint() == g.fingerprint()
