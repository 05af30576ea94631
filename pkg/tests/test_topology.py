import math

import numpy as np
import pytest

from credo.topology import (GraphGenerationError, Topology, default_radius, generate_rgg,
                            laplacian_of, read_edge_list, spectral_summary, write_edge_list)


def test_path_laplacian(path3):
    assert np.array_equal(laplacian_of(path3), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])


def test_complete_laplacian(k3):
    L = laplacian_of(k3)
    assert np.array_equal(np.diag(L), [2, 2, 2])
    assert np.all(L[~np.eye(3, dtype=bool)] == -1)


def test_edgeless_laplacian():
    assert np.array_equal(laplacian_of(Topology(4)), np.zeros((4, 4)))


def test_spectrum_k3(k3):
    s = spectral_summary(k3)
    assert np.allclose(s.eigenvalues, [0, 3, 3], atol=1e-12)
    assert s.algebraic_connectivity == pytest.approx(3)
    assert s.relative_degree == 1.0


def test_spectrum_path_matches_direct_eigensolve(path3):
    s = spectral_summary(path3)
    # characteristic polynomial of the path Laplacian: -l (l - 1) (l - 3)
    assert np.allclose(s.eigenvalues, np.sort(np.roots([1, -4, 3, 0]).real), atol=1e-12)
    assert s.algebraic_connectivity == pytest.approx(1)


def test_disconnected_pair():
    s = spectral_summary(Topology(2))
    assert s.algebraic_connectivity == pytest.approx(0, abs=1e-12)
    assert s.relative_degree == 0.0
    assert not Topology(2).is_connected()


def test_adjacency_edges_consistent():
    t = Topology(4, {(0, 1), (2, 1), (1, 0), (3, 2)})
    assert t.edges == frozenset({(0, 1), (1, 2), (2, 3)})
    A = t.adjacency
    assert np.array_equal(A, A.T) and np.all(np.diag(A) == 0)
    assert Topology.from_adjacency(A) == t
    assert t.neighbors(1) == [0, 2]


def test_invalid_topologies():
    with pytest.raises(ValueError, match="self-loop"):
        Topology(3, {(1, 1)})
    with pytest.raises(ValueError, match="out of range"):
        Topology(3, {(0, 3)})
    with pytest.raises(ValueError, match="symmetric"):
        Topology.from_adjacency([[0, 1], [0, 0]])


def test_rgg_threshold_radius_connected():
    r = default_radius(20)
    assert r == pytest.approx(0.3870, abs=1e-4)
    t = generate_rgg(20, r, np.random.default_rng(3))
    assert t.n_nodes == 20 and t.is_connected()


def test_rgg_max_radius_is_complete():
    t = generate_rgg(2, math.sqrt(2), np.random.default_rng(0))
    assert t.edges == frozenset({(0, 1)})
    assert spectral_summary(generate_rgg(6, math.sqrt(2), np.random.default_rng(1))).relative_degree == 1


@pytest.mark.parametrize("seed", range(10))
def test_rgg_invariants(seed):
    t = generate_rgg(15, 0.5, np.random.default_rng(seed))
    L = t.laplacian
    assert np.array_equal(L, L.T)
    assert np.all(np.abs(L.sum(axis=1)) <= 1e-12)
    s = spectral_summary(t)
    assert s.algebraic_connectivity > 1e-9
    assert np.all(np.diff(s.eigenvalues) >= 0)
    assert abs(s.eigenvalues[0]) < 1e-9


def test_rgg_deterministic():
    a = generate_rgg(20, 0.4, np.random.default_rng(7))
    b = generate_rgg(20, 0.4, np.random.default_rng(7))
    assert a.edges == b.edges


def test_rgg_relative_degree_plausible():
    # connected 20-node graphs at radius 0.6 land near the middle of the reported band
    degs = [spectral_summary(generate_rgg(20, 0.6, np.random.default_rng(s))).relative_degree
            for s in range(20)]
    assert 0.3736 <= np.mean(degs) <= 0.6578


def test_rgg_failure_message():
    with pytest.raises(GraphGenerationError, match=r"n=30, radius=0.01 after 3 attempts"):
        generate_rgg(30, 0.01, np.random.default_rng(0), max_attempts=3)


def test_rgg_preconditions():
    with pytest.raises(ValueError):
        generate_rgg(1, 0.5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        generate_rgg(5, 0.0, np.random.default_rng(0))


def test_edge_list_round_trip(tmp_path):
    t = generate_rgg(12, 0.5, np.random.default_rng(2))
    p = tmp_path / "g.edges"
    write_edge_list(t, p)
    assert read_edge_list(p) == t


def test_edge_list_comments_and_errors(tmp_path):
    p = tmp_path / "g.edges"
    p.write_text("# triangle\n3\n0 1\n1 2  # tail\n\n0 2\n")
    assert read_edge_list(p) == Topology.complete(3)
    p.write_text("3\n0 1\n1 x\n")
    with pytest.raises(ValueError, match=r"line 3"):
        read_edge_list(p)
    p.write_text("3\n0 5\n")
    with pytest.raises(ValueError, match="out of range"):
        read_edge_list(p)
