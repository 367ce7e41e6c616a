"""Hot loops used by ego extraction and energy scoring.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature. Set ``EGODIFF_DISABLE_NUMBA=1`` to force the numpy path (also
used automatically when numba is not importable).
"""
import os

import numpy as np

_DISABLED = os.environ.get("EGODIFF_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED

DEG_EPS = 1e-12


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def bfs_ball_numpy(indptr, indices, v, k):
    """Nodes within ``k`` hops of ``v``: center first, rest ascending."""
    n = indptr.shape[0] - 1
    seen = np.zeros(n, dtype=np.bool_)
    seen[v] = True
    frontier = np.array([v], dtype=np.int64)
    for _ in range(k):
        if frontier.size == 0:
            break
        starts, stops = indptr[frontier], indptr[frontier + 1]
        lens = stops - starts
        if lens.sum() == 0:
            break
        offs = np.repeat(starts - np.cumsum(lens) + lens, lens) + np.arange(lens.sum())
        nbrs = np.unique(indices[offs])
        nbrs = nbrs[~seen[nbrs]]
        seen[nbrs] = True
        frontier = nbrs
    rest = np.flatnonzero(seen)
    rest = rest[rest != v]
    return np.concatenate((np.array([v], dtype=np.int64), rest.astype(np.int64)))


def induced_adjacency_numpy(indptr, indices, nodes):
    """Dense symmetric 0/1 adjacency of the subgraph induced by ``nodes``."""
    m = nodes.shape[0]
    order = np.argsort(nodes)
    sorted_nodes = nodes[order]
    a = np.zeros((m, m))
    for slot in range(m):
        u = nodes[slot]
        nb = indices[indptr[u]:indptr[u + 1]]
        pos = np.searchsorted(sorted_nodes, nb)
        pos = np.minimum(pos, m - 1)
        hit = sorted_nodes[pos] == nb
        cols = order[pos[hit]]
        a[slot, cols] = 1.0
    np.fill_diagonal(a, 0.0)
    return a


def masked_energy_numpy(x, a, mask):
    """Per-graph Dirichlet energy and squared feature norm for a padded batch.

    x: (B, N, F); a: (B, N, N) binary symmetric; mask: (B, N).
    """
    w = mask.astype(np.float64)
    xm = x * w[:, :, None]
    am = a * w[:, :, None] * w[:, None, :]
    deg = am.sum(axis=-1)
    dinv = np.zeros_like(deg)
    nz = deg > DEG_EPS
    dinv[nz] = 1.0 / np.sqrt(deg[nz])
    y = xm * dinv[:, :, None]
    sq = (y * y).sum(axis=-1)
    cross = np.einsum("bij,bif,bjf->b", am, y, y)
    energy = (deg * sq).sum(axis=-1) - cross
    norm2 = (xm * xm).sum(axis=(1, 2))
    return np.maximum(energy, 0.0), norm2


def elu_numpy(x):
    """ELU and its derivative."""
    neg = np.expm1(np.minimum(x, 0.0))
    pos = x > 0
    return np.where(pos, x, neg), np.where(pos, 1.0, neg + 1.0)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def bfs_ball_numba(indptr, indices, v, k):
        n = indptr.shape[0] - 1
        dist = np.full(n, -1, dtype=np.int64)
        queue = np.empty(n, dtype=np.int64)
        dist[v] = 0
        queue[0] = v
        head, tail = 0, 1
        while head < tail:
            u = queue[head]
            head += 1
            if dist[u] >= k:
                continue
            for p in range(indptr[u], indptr[u + 1]):
                w = indices[p]
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    queue[tail] = w
                    tail += 1
        out = np.empty(tail, dtype=np.int64)
        out[0] = v
        j = 1
        for u in range(n):
            if u != v and dist[u] >= 0:
                out[j] = u
                j += 1
        return out

    @njit(cache=True)
    def induced_adjacency_numba(indptr, indices, nodes):
        m = nodes.shape[0]
        n = indptr.shape[0] - 1
        slot = np.full(n, -1, dtype=np.int64)
        for i in range(m):
            slot[nodes[i]] = i
        a = np.zeros((m, m))
        for i in range(m):
            u = nodes[i]
            for p in range(indptr[u], indptr[u + 1]):
                j = slot[indices[p]]
                if j >= 0 and j != i:
                    a[i, j] = 1.0
        return a

    @njit(cache=True)
    def masked_energy_numba(x, a, mask):
        b, n, f = x.shape
        energy = np.zeros(b)
        norm2 = np.zeros(b)
        dinv = np.empty(n)
        for g in range(b):
            for i in range(n):
                d = 0.0
                if mask[g, i]:
                    for j in range(n):
                        if mask[g, j]:
                            d += a[g, i, j]
                dinv[i] = 1.0 / np.sqrt(d) if d > DEG_EPS else 0.0
            e = 0.0
            s = 0.0
            for i in range(n):
                if not mask[g, i]:
                    continue
                for c in range(f):
                    s += x[g, i, c] * x[g, i, c]
                for j in range(i + 1, n):
                    if mask[g, j] and a[g, i, j] != 0.0:
                        w = a[g, i, j]
                        for c in range(f):
                            diff = x[g, i, c] * dinv[i] - x[g, j, c] * dinv[j]
                            e += w * diff * diff
            energy[g] = e
            norm2[g] = s
        return energy, norm2


    @njit(cache=True)
    def _elu_flat(x, out, deriv):
        for i in range(x.size):
            v = x[i]
            if v > 0.0:
                out[i] = v
                deriv[i] = 1.0
            else:
                e = np.expm1(v)
                out[i] = e
                deriv[i] = e + 1.0

    def elu_numba(x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        out = np.empty_like(x)
        deriv = np.empty_like(x)
        _elu_flat(x.reshape(-1), out.reshape(-1), deriv.reshape(-1))
        return out, deriv


if USE_NUMBA:
    elu = elu_numba
    bfs_ball = bfs_ball_numba
    induced_adjacency = induced_adjacency_numba
    masked_energy = masked_energy_numba
else:
    elu = elu_numpy
    bfs_ball = bfs_ball_numpy
    induced_adjacency = induced_adjacency_numpy
    masked_energy = masked_energy_numpy


def backend():
    return "numba" if USE_NUMBA else "numpy"
