import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egodiff.errors import ContractError, NormalizationError
from egodiff.graph import (DenseEgoGraph, SparseNetwork, batch_normalized_energy, binarize,
                           dirichlet_energy, dirichlet_energy_edges, normalized_energy,
                           normalized_laplacian, symmetrize)

from conftest import random_adjacency

K2 = np.array([[0.0, 1.0], [1.0, 0.0]])
P3 = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])


def test_laplacian_k2():
    lap = normalized_laplacian(K2)
    np.testing.assert_allclose(lap.l, [[1, -1], [-1, 1]])
    np.testing.assert_allclose(lap.deg, [1, 1])


def test_laplacian_empty_graph_is_zero():
    assert np.all(normalized_laplacian(np.zeros((3, 3))).l == 0)


def test_laplacian_path3():
    l = normalized_laplacian(P3).l
    np.testing.assert_allclose(np.diag(l), [1, 1, 1])
    assert l[0, 1] == pytest.approx(-1 / np.sqrt(2))
    assert l[1, 2] == pytest.approx(-1 / np.sqrt(2))
    assert l[0, 2] == 0


@pytest.mark.parametrize("a", [
    np.array([[0.0, 1.0], [0.0, 0.0]]),
    np.array([[0.0, 0.5], [0.5, 0.0]]),
    np.array([[1.0, 1.0], [1.0, 0.0]]),
])
def test_laplacian_rejects_bad_input(a):
    with pytest.raises(ContractError):
        normalized_laplacian(a)


def test_dirichlet_energy_examples():
    assert dirichlet_energy(np.ones((2, 3)), normalized_laplacian(K2)) == pytest.approx(0.0)
    assert dirichlet_energy([1.0, -1.0], normalized_laplacian(K2)) == pytest.approx(4.0)
    assert dirichlet_energy([1.0, 0.0, 1.0], normalized_laplacian(P3)) == pytest.approx(2.0)
    assert dirichlet_energy_edges(np.array([1.0, 0.0, 1.0]), P3) == pytest.approx(2.0)


def test_dirichlet_energy_shape_mismatch():
    with pytest.raises(ContractError):
        dirichlet_energy(np.ones((3, 1)), normalized_laplacian(K2))


def test_normalized_energy_examples():
    assert normalized_energy([1.0, -1.0], K2) == pytest.approx(2.0, abs=1e-12)
    assert normalized_energy([1.0, 0.0, 1.0], P3) == pytest.approx(1.0, abs=1e-12)
    # constants are only in the kernel when degrees agree
    assert normalized_energy(np.full((2, 2), 3.0), K2) == pytest.approx(0.0, abs=1e-12)
    c5 = np.roll(np.eye(5), 1, axis=1)
    assert normalized_energy(np.full((5, 1), -2.0), c5 + c5.T) == pytest.approx(0.0, abs=1e-12)
    assert normalized_energy(np.full((3, 2), 3.0), P3) == pytest.approx(
        2 * (1 - 2 ** -0.5) ** 2 / 3, rel=1e-12)


def test_normalized_energy_zero_features_raises():
    with pytest.raises(NormalizationError):
        normalized_energy(np.zeros((2, 1)), K2)


def test_normalized_energy_ignores_masked_rows():
    x = np.array([[1.0], [-1.0], [0.0]])
    a = np.zeros((3, 3))
    a[:2, :2] = K2
    g = DenseEgoGraph(x, a, np.array([True, True, False]))
    assert normalized_energy(g) == pytest.approx(2.0)
    x2 = x.copy()
    x2[2] = 99.0
    assert normalized_energy(x2, a, g.mask) == pytest.approx(2.0)


def test_symmetrize():
    a = np.zeros((2, 2))
    a[0, 1] = 1
    np.testing.assert_array_equal(symmetrize(a), K2)
    np.testing.assert_array_equal(symmetrize(K2), K2)
    np.testing.assert_array_equal(symmetrize(np.ones((2, 2))), K2)


def test_binarize_threshold():
    a = np.array([[0.9, 0.6], [0.4, 0.2]])
    np.testing.assert_array_equal(binarize(a), K2)


def test_energy_bounds_random(rng):
    for _ in range(1000):
        n = rng.integers(1, 13)
        a = random_adjacency(rng, n, rng.uniform(0.1, 0.9))
        x = rng.standard_normal((n, rng.integers(1, 4)))
        e = normalized_energy(x, a)
        rho = np.linalg.eigvalsh(normalized_laplacian(a).l).max() if n else 0.0
        assert -1e-12 <= e <= 2.0 + 1e-12
        assert e <= rho + 1e-9


def test_trace_and_edge_forms_agree(rng):
    for _ in range(200):
        n = rng.integers(2, 12)
        a = random_adjacency(rng, n)
        x = rng.standard_normal((n, 3))
        tr = dirichlet_energy(x, normalized_laplacian(a))
        ed = dirichlet_energy_edges(x, a)
        assert tr == pytest.approx(ed, rel=1e-9, abs=1e-12)


def test_laplacian_psd(rng):
    for _ in range(200):
        n = rng.integers(1, 12)
        l = normalized_laplacian(random_adjacency(rng, n)).l
        np.testing.assert_allclose(l, l.T)
        assert np.linalg.eigvalsh(l).min() >= -1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31 - 1))
def test_energy_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    a = random_adjacency(rng, n)
    x = rng.standard_normal((n, 2))
    p = rng.permutation(n)
    lap, lap_p = normalized_laplacian(a), normalized_laplacian(a[np.ix_(p, p)])
    assert dirichlet_energy(x, lap) == pytest.approx(dirichlet_energy(x[p], lap_p), abs=1e-10)
    assert normalized_energy(x, a) == pytest.approx(normalized_energy(x[p], a[np.ix_(p, p)]),
                                                    abs=1e-10)


def test_batch_energy_matches_single(rng):
    xs, as_, ms, expected = [], [], [], []
    for _ in range(20):
        n = rng.integers(2, 7)
        a = np.zeros((7, 7))
        a[:n, :n] = random_adjacency(rng, n)
        x = np.zeros((7, 2))
        x[:n] = rng.standard_normal((n, 2))
        m = np.arange(7) < n
        xs.append(x), as_.append(a), ms.append(m)
        expected.append(normalized_energy(x, a, m))
    e, flags = batch_normalized_energy(np.array(xs), np.array(as_), np.array(ms))
    np.testing.assert_allclose(e, expected, atol=1e-12)
    assert not flags.any()


def test_batch_energy_flags_zero_features():
    e, flags = batch_normalized_energy(np.zeros((1, 2, 1)), K2[None], np.ones((1, 2), bool))
    assert e[0] == 0.0 and flags[0]


def test_sparse_network_canonicalizes():
    net = SparseNetwork(3, [(1, 0), (0, 1), (2, 2), (1, 2)], np.zeros((3, 1)))
    np.testing.assert_array_equal(net.edges, [[0, 1], [1, 2]])
    indptr, indices = net.csr
    np.testing.assert_array_equal(indptr, [0, 1, 3, 4])
    np.testing.assert_array_equal(indices, [1, 0, 2, 1])


def test_sparse_network_validation():
    with pytest.raises(ContractError):
        SparseNetwork(2, [(0, 2)], np.zeros((2, 1)))
    with pytest.raises(ContractError):
        SparseNetwork(2, [(0, 1)], np.zeros((3, 1)))
    with pytest.raises(ContractError):
        SparseNetwork(2, [(0, 1)], np.zeros((2, 1)), labels=[0, 2])
