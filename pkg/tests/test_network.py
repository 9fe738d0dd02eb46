"""Network loading, edge-vector codec, BFS distances, classical MDS."""

import itertools

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from lsgpr import network


def random_adjacency(rng, p, density=0.4):
    vec = (rng.random(p * (p - 1) // 2) < density).astype(float)
    return network.edge_vector_to_adjacency(vec, p)


def floyd_warshall(adj):
    # independent oracle for hop distances; inf for disconnected pairs
    p = adj.shape[0]
    dist = np.where(adj > 0, 1.0, np.inf)
    np.fill_diagonal(dist, 0.0)
    for m in range(p):
        dist = np.minimum(dist, dist[:, m : m + 1] + dist[m : m + 1, :])
    return dist


class TestValidateAdjacency:
    def test_accepts_valid(self):
        adj = np.array([[0, 1], [1, 0]], dtype=float)
        out = network.validate_adjacency(adj)
        npt.assert_array_equal(out, adj)
        assert out.dtype == np.float64

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError, match="square"):
            network.validate_adjacency(np.zeros((2, 3)))

    def test_rejects_nonbinary(self):
        adj = np.array([[0.0, 0.5], [0.5, 0.0]])
        with pytest.raises(ValueError, match="0 or 1"):
            network.validate_adjacency(adj)

    def test_rejects_self_loop(self):
        adj = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="diagonal"):
            network.validate_adjacency(adj)

    def test_rejects_asymmetric(self):
        adj = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="symmetric"):
            network.validate_adjacency(adj)


class TestEdgeVector:
    def test_row_major_upper_triangle_order(self):
        adj = np.zeros((3, 3))
        adj[0, 1] = adj[1, 0] = 1.0
        npt.assert_array_equal(network.edge_vector(adj), [1.0, 0.0, 0.0])
        adj = np.zeros((3, 3))
        adj[1, 2] = adj[2, 1] = 1.0
        npt.assert_array_equal(network.edge_vector(adj), [0.0, 0.0, 1.0])

    @pytest.mark.parametrize("p", [2, 3, 4, 5])
    def test_roundtrip_exhaustive(self, p):
        # codec is a bijection on all binary networks up to p = 5
        m = p * (p - 1) // 2
        for bits in itertools.product((0.0, 1.0), repeat=m):
            vec = np.asarray(bits)
            adj = network.edge_vector_to_adjacency(vec, p)
            network.validate_adjacency(adj)
            npt.assert_array_equal(network.edge_vector(adj), vec)

    @given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip_random(self, p, seed):
        rng = np.random.default_rng(seed)
        vec = (rng.random(p * (p - 1) // 2) < 0.5).astype(float)
        adj = network.edge_vector_to_adjacency(vec, p)
        npt.assert_array_equal(network.edge_vector(adj), vec)

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError, match="length"):
            network.edge_vector_to_adjacency(np.zeros(4), 3)


class TestLoadNetwork:
    def test_adjacency_csv(self, tmp_path):
        adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
        path = tmp_path / "net.csv"
        np.savetxt(path, adj, fmt="%d", delimiter=",")
        npt.assert_array_equal(network.load_network(path), adj)

    def test_adjacency_csv_invalid_entries(self, tmp_path):
        path = tmp_path / "net.csv"
        path.write_text("0,2\n2,0\n")
        with pytest.raises(ValueError, match="0 or 1"):
            network.load_network(path)

    def test_edge_list_csv(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("1,2\n2,4\n")
        adj = network.load_network(path, format="edge-list-csv", n_nodes=4)
        expected = np.zeros((4, 4))
        expected[0, 1] = expected[1, 0] = 1.0
        expected[1, 3] = expected[3, 1] = 1.0
        npt.assert_array_equal(adj, expected)

    def test_edge_list_requires_n_nodes(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("1,2\n")
        with pytest.raises(ValueError, match="n_nodes"):
            network.load_network(path, format="edge-list-csv")

    def test_edge_list_rejects_out_of_range(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("1,5\n")
        with pytest.raises(ValueError, match="1..n_nodes"):
            network.load_network(path, format="edge-list-csv", n_nodes=4)

    def test_edge_list_rejects_self_loop(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("2,2\n")
        with pytest.raises(ValueError, match="[Ss]elf-loop"):
            network.load_network(path, format="edge-list-csv", n_nodes=4)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError, match="format"):
            network.load_network(tmp_path / "x.csv", format="graphml")


class TestShortestPathDistances:
    def test_path_graph(self):
        adj = network.edge_vector_to_adjacency([1.0, 0.0, 1.0], 3)
        dist = network.shortest_path_distances(adj)
        assert dist[0, 2] == 2.0
        assert dist[0, 1] == 1.0
        npt.assert_array_equal(dist, dist.T)

    def test_isolated_pair_gets_p(self):
        dist = network.shortest_path_distances(np.zeros((2, 2)))
        npt.assert_array_equal(dist, [[0.0, 2.0], [2.0, 0.0]])

    def test_complete_graph(self):
        adj = np.ones((5, 5)) - np.eye(5)
        dist = network.shortest_path_distances(adj)
        expected = np.ones((5, 5)) - np.eye(5)
        npt.assert_array_equal(dist, expected)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_floyd_warshall(self, seed):
        rng = np.random.default_rng(seed)
        p = int(rng.integers(3, 13))
        adj = random_adjacency(rng, p, density=rng.uniform(0.1, 0.6))
        oracle = floyd_warshall(adj)
        oracle[np.isinf(oracle)] = float(p)
        npt.assert_array_equal(network.shortest_path_distances(adj), oracle)


class TestClassicalMds:
    def test_path_graph_line(self):
        adj = network.edge_vector_to_adjacency([1.0, 0.0, 1.0], 3)
        dist = network.shortest_path_distances(adj)
        x = network.classical_mds(dist, 1)[:, 0]
        gaps = np.sort(np.abs(np.diff(np.sort(x))))
        npt.assert_allclose(gaps, [1.0, 1.0], atol=1e-10)

    def test_exact_euclidean_reproduced(self):
        # full-dimensional MDS on a Euclidean configuration is lossless
        rng = np.random.default_rng(3)
        X = rng.standard_normal((6, 3))
        diff = X[:, None, :] - X[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        Y = network.classical_mds(dist, 6)
        diff_y = Y[:, None, :] - Y[None, :, :]
        npt.assert_allclose(np.sqrt((diff_y**2).sum(axis=2)), dist, atol=1e-8)

    def test_matches_independent_spectrum(self):
        # Gram matrix of the output equals the clamped rank-d eigenexpansion
        rng = np.random.default_rng(4)
        adj = random_adjacency(rng, 6)
        dist = network.shortest_path_distances(adj)
        p, d = 6, 3
        J = np.eye(p) - np.ones((p, p)) / p
        B = -0.5 * J @ (dist**2) @ J
        evals, evecs = np.linalg.eigh(0.5 * (B + B.T))
        order = np.argsort(evals)[::-1][:d]
        lam = np.clip(evals[order], 0.0, None)
        expected_gram = (evecs[:, order] * lam) @ evecs[:, order].T
        Y = network.classical_mds(dist, d)
        npt.assert_allclose(Y @ Y.T, expected_gram, atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_centered_columns(self, seed):
        rng = np.random.default_rng(seed)
        adj = random_adjacency(rng, 8)
        dist = network.shortest_path_distances(adj)
        Y = network.classical_mds(dist, 4)
        npt.assert_allclose(Y.mean(axis=0), 0.0, atol=1e-10)

    def test_d_larger_than_p_rejected(self):
        with pytest.raises(ValueError, match="d"):
            network.classical_mds(np.zeros((3, 3)), 4)

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError, match="square"):
            network.classical_mds(np.zeros((3, 4)), 2)
