import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnsde import _kernels
from gnsde._kernels import _pykernels
from gnsde.autodiff import ShapeError, Tensor, tsum, mul
from gnsde.gradcheck import gradcheck
from gnsde.graph import (
    GraphParseError,
    SparseGraph,
    gcn_layer,
    normalize,
    read_edge_list,
    spmm,
    write_edge_list,
)


def dense_oracle(n, edges):
    """D^-1/2 (A + I) D^-1/2 built densely, independent of the CSR path."""
    A = np.eye(n)
    for s, d in edges:
        if s != d:
            A[s, d] = A[d, s] = 1.0
    deg = A.sum(axis=1)
    return A / np.sqrt(np.outer(deg, deg))


@st.composite
def graphs(draw, max_n=12):
    n = draw(st.integers(1, max_n))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n))
    return SparseGraph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2))


class TestSparseGraph:
    def test_canonicalizes(self):
        g = SparseGraph(3, np.array([[1, 0], [0, 1], [2, 2], [1, 2]]))
        np.testing.assert_array_equal(g.edges, [[0, 1], [1, 2]])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            SparseGraph(2, np.array([[0, 2]]))


class TestNormalize:
    def test_edgeless_is_identity(self):
        np.testing.assert_array_equal(normalize(SparseGraph(3)).to_dense(), np.eye(3))

    def test_single_edge(self):
        np.testing.assert_allclose(normalize(SparseGraph(2, np.array([[0, 1]]))).to_dense(), np.full((2, 2), 0.5), rtol=1e-15)

    def test_path_graph(self):
        adj = normalize(SparseGraph(3, np.array([[0, 1], [1, 2]])))
        assert adj.entry(0, 1) == pytest.approx(1 / math.sqrt(6), rel=1e-15)
        assert adj.entry(0, 2) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(graphs())
    def test_matches_dense_oracle_and_is_symmetric(self, g):
        D = normalize(g).to_dense()
        np.testing.assert_allclose(D, dense_oracle(g.n, g.edges), rtol=1e-14, atol=0)
        np.testing.assert_array_equal(D, D.T)

    def test_renormalize_identical(self):
        g = SparseGraph(5, np.array([[0, 1], [1, 2], [3, 4]]))
        a, b = normalize(g), normalize(g)
        assert a.values.tobytes() == b.values.tobytes()
        np.testing.assert_array_equal(a.indices, b.indices)

    def test_directed_graph_symmetrized(self):
        g = SparseGraph(3, np.array([[0, 1], [2, 1]]), undirected=False)
        D = normalize(g).to_dense()
        np.testing.assert_array_equal(D, D.T)


class TestSpmm:
    def test_identity(self):
        x = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(spmm(normalize(SparseGraph(3)), Tensor(x)).data, x)

    @settings(max_examples=40, deadline=None)
    @given(graphs(max_n=64), st.integers(1, 5))
    def test_equals_dense_product(self, g, d):
        adj = normalize(g)
        x = np.random.default_rng(g.n).standard_normal((g.n, d))
        np.testing.assert_allclose(spmm(adj, Tensor(x)).data, adj.to_dense() @ x, rtol=1e-13, atol=1e-14)

    def test_two_node(self):
        adj = normalize(SparseGraph(2, np.array([[0, 1]])))
        x = np.array([[1.0, 2.0], [3.0, 5.0]])
        np.testing.assert_allclose(spmm(adj, Tensor(x)).data, 0.5 * np.array([[4.0, 7.0], [4.0, 7.0]]), rtol=1e-15)

    def test_gradient(self):
        rng = np.random.default_rng(1)
        adj = normalize(SparseGraph(4, np.array([[0, 1], [1, 2], [2, 3], [0, 3]])))
        x = Tensor(rng.uniform(-2, 2, (4, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 3)))
        assert gradcheck(lambda: tsum(mul(spmm(adj, x), w)), [x]) < 1e-3

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            spmm(normalize(SparseGraph(3)), Tensor(np.ones((2, 2))))

    def test_backends_agree_bitwise(self):
        g = SparseGraph(40, np.random.default_rng(0).integers(0, 40, (120, 2)))
        adj = normalize(g)
        x = np.random.default_rng(1).standard_normal((40, 7))
        ref = _pykernels.csr_matmul(adj.indptr, adj.indices, adj.values, x)
        got = _kernels.csr_matmul(adj.indptr, adj.indices, adj.values, x)
        assert ref.tobytes() == got.tobytes()


class TestGcnLayer:
    def test_identity_reduction(self):
        x = np.random.default_rng(0).standard_normal((4, 3))
        out = gcn_layer(normalize(SparseGraph(4)), Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_dense_oracle_hidden_layer(self):
        rng = np.random.default_rng(2)
        edges = np.array([[0, 1], [1, 2], [2, 3]])
        x, W, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5)), rng.standard_normal(5)
        out = gcn_layer(normalize(SparseGraph(4, edges)), Tensor(x), Tensor(W), Tensor(b), "relu")
        np.testing.assert_allclose(out.data, np.maximum(dense_oracle(4, edges) @ x @ W + b, 0), rtol=1e-13, atol=1e-14)

    def test_tanh_range(self):
        rng = np.random.default_rng(3)
        out = gcn_layer(normalize(SparseGraph(5, np.array([[0, 4]]))), Tensor(rng.normal(0, 10, (5, 2))), Tensor(rng.normal(0, 10, (2, 3))), None, "tanh")
        assert (np.abs(out.data) <= 1).all()

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        g = SparseGraph(6, np.array([[0, 1], [1, 2], [2, 5], [3, 4], [0, 5]]))
        x, W, b = rng.standard_normal((6, 3)), Tensor(rng.standard_normal((3, 2))), Tensor(rng.standard_normal(2))
        perm = rng.permutation(6)
        out = gcn_layer(normalize(g), Tensor(x), W, b, "tanh").data
        xp = np.empty_like(x)
        xp[perm] = x
        outp = gcn_layer(normalize(g.permuted(perm)), Tensor(xp), W, b, "tanh").data
        np.testing.assert_allclose(outp[perm], out, rtol=1e-13, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gcn_layer(normalize(SparseGraph(3)), Tensor(np.ones((3, 2))), Tensor(np.ones((3, 2))))


class TestEdgeListFile:
    def test_round_trip_with_comments(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("# header\n0 1\n\n1 2  # trailing comment\n3 0\n")
        g = read_edge_list(p)
        assert g.n == 4
        np.testing.assert_array_equal(g.edges, [[0, 1], [0, 3], [1, 2]])
        write_edge_list(g, tmp_path / "out.txt")
        np.testing.assert_array_equal(read_edge_list(tmp_path / "out.txt", n=4).edges, g.edges)

    def test_bad_line_named(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("0 1\n1 x\n")
        with pytest.raises(GraphParseError, match=":2:"):
            read_edge_list(p)

    def test_out_of_range_named(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("0 1\n1 2\n0 9\n")
        with pytest.raises(GraphParseError, match=":3:"):
            read_edge_list(p, n=3)
