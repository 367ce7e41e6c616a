"""Both kernel backends must agree; the numpy path is the oracle for numba."""
import numpy as np
import pytest

from egodiff import _kernels as K
from egodiff.graph import SparseNetwork

from conftest import random_adjacency

pytestmark = pytest.mark.skipif(not K.HAS_NUMBA, reason="numba not installed")


def _net(rng, n, p):
    a = random_adjacency(rng, n, p)
    return SparseNetwork(n, list(zip(*np.nonzero(np.triu(a)))), np.zeros((n, 1)))


def test_bfs_backends_agree(rng):
    for _ in range(40):
        net = _net(rng, int(rng.integers(1, 40)), 0.1)
        indptr, indices = net.csr
        for k in (1, 2, 3):
            v = int(rng.integers(net.num_nodes))
            np.testing.assert_array_equal(K.bfs_ball_numpy(indptr, indices, v, k),
                                          K.bfs_ball_numba(indptr, indices, v, k))


def test_induced_backends_agree(rng):
    for _ in range(40):
        net = _net(rng, int(rng.integers(2, 40)), 0.2)
        indptr, indices = net.csr
        nodes = np.sort(rng.choice(net.num_nodes, size=int(rng.integers(1, net.num_nodes)),
                                   replace=False)).astype(np.int64)
        np.testing.assert_array_equal(K.induced_adjacency_numpy(indptr, indices, nodes),
                                      K.induced_adjacency_numba(indptr, indices, nodes))


def test_energy_backends_agree(rng):
    b, n, f = 30, 9, 3
    a = np.stack([random_adjacency(rng, n, 0.3) for _ in range(b)])
    mask = np.arange(n)[None] < rng.integers(1, n + 1, size=b)[:, None]
    x = rng.standard_normal((b, n, f)) * mask[..., None]
    a = a * mask[:, :, None] * mask[:, None, :]
    e1, s1 = K.masked_energy_numpy(x, a, mask)
    e2, s2 = K.masked_energy_numba(x, a, mask)
    np.testing.assert_allclose(e1, e2, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(s1, s2, rtol=1e-12)


def test_elu_backends_agree(rng):
    x = rng.standard_normal((5, 7, 3)) * 4
    o1, d1 = K.elu_numpy(x)
    o2, d2 = K.elu_numba(x)
    np.testing.assert_allclose(o1, o2, rtol=1e-14)
    np.testing.assert_allclose(d1, d2, rtol=1e-14)
    np.testing.assert_allclose(o1, np.where(x > 0, x, np.exp(x) - 1), atol=1e-14)


def test_backend_flag_reported():
    assert K.backend() in ("numba", "numpy")


SNIPPET = """
import numpy as np
from egodiff import backend
from egodiff.graph import batch_normalized_energy
from egodiff.ego import extract_ego
from egodiff.io import SynthConfig, generate_synthetic
net = generate_synthetic(SynthConfig(num_nodes=80, p_in=0.2, structural_fraction=0.1, clique_size=4, seed=4))
g = extract_ego(net, 5, 2)
e, _ = batch_normalized_energy(g.x[None], g.a[None], g.mask[None])
print(backend(), repr(g.node_ids.tolist()), repr(float(e[0])))
"""


def test_env_flag_switches_backend():
    import os
    import subprocess
    import sys
    outs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, EGODIFF_DISABLE_NUMBA=flag)
        outs[flag] = subprocess.run([sys.executable, "-c", SNIPPET], env=env, check=True,
                                    capture_output=True, text=True).stdout.split(" ", 1)
    assert outs["0"][0] == "numba" and outs["1"][0] == "numpy"
    ids0, e0 = outs["0"][1].rsplit(" ", 1)
    ids1, e1 = outs["1"][1].rsplit(" ", 1)
    assert ids0 == ids1
    assert float(e0) == pytest.approx(float(e1), rel=1e-10)
