"""Sparse and dense graph containers, normalized Laplacian, Dirichlet energy."""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ContractError, NormalizationError

DEG_EPS = _kernels.DEG_EPS


def _canonical_edges(edges, num_nodes, directed):
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        raise ContractError(f"edge endpoint outside [0, {num_nodes})")
    e = e[e[:, 0] != e[:, 1]]
    if not directed:
        e = np.sort(e, axis=1)
    if e.size:
        e = np.unique(e, axis=0)
    return e


@dataclass(frozen=True, eq=False)
class SparseNetwork:
    """The full attributed network: edge list, feature matrix, optional labels.

    Edges are canonicalized on construction (self-loops and duplicates dropped;
    undirected edges stored as ``(min, max)``).
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    directed: bool = False
    name: str = "network"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.shape[0] != self.num_nodes:
            raise ContractError(
                f"features have {feats.shape[0]} rows, expected {self.num_nodes}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(
            self, "edges", _canonical_edges(self.edges, self.num_nodes, self.directed))
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (self.num_nodes,):
                raise ContractError("labels length must equal num_nodes")
            if not np.isin(lab, (0, 1)).all():
                raise ContractError("labels must be 0/1")
            object.__setattr__(self, "labels", lab)

    @property
    def num_features(self):
        return self.features.shape[1]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @cached_property
    def csr(self):
        """Undirected neighbor lists as ``(indptr, indices)``, indices sorted."""
        e = self.edges
        src = np.concatenate((e[:, 0], e[:, 1]))
        dst = np.concatenate((e[:, 1], e[:, 0]))
        pairs = np.unique(np.stack((src, dst), axis=1), axis=0) if src.size else np.zeros((0, 2), np.int64)
        counts = np.bincount(pairs[:, 0], minlength=self.num_nodes)
        indptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return indptr, np.ascontiguousarray(pairs[:, 1], dtype=np.int64)

    def degrees(self):
        indptr, _ = self.csr
        return np.diff(indptr)

    def with_features(self, features):
        return SparseNetwork(self.num_nodes, self.edges, features, self.labels,
                             self.directed, self.name)


@dataclass(frozen=True, eq=False)
class DenseEgoGraph:
    """A small dense ``(x, a)`` pair with a node mask; ``node_ids`` maps slots to
    original network indices (``-1`` on padding)."""

    x: np.ndarray
    a: np.ndarray
    mask: np.ndarray
    center: int = 0
    node_ids: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        n = self.a.shape[0]
        if self.a.shape != (n, n) or self.x.shape[0] != n or self.mask.shape != (n,):
            raise ContractError("inconsistent ego-graph shapes")
        if not self.mask[self.center]:
            raise ContractError("center slot must be a real node")

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def f(self):
        return self.x.shape[1]

    @property
    def num_real(self):
        return int(self.mask.sum())

    def real(self):
        """Copy restricted to real slots (order preserved)."""
        idx = np.flatnonzero(self.mask)
        ids = None if self.node_ids is None else self.node_ids[idx]
        center = int(np.searchsorted(idx, self.center))
        return DenseEgoGraph(self.x[idx], self.a[np.ix_(idx, idx)],
                             np.ones(idx.size, dtype=bool), center, ids)


@dataclass(frozen=True)
class Laplacian:
    l: np.ndarray
    deg: np.ndarray


def symmetrize(a):
    """Elementwise ``max(a, a.T)`` with the diagonal cleared."""
    a = np.asarray(a, dtype=np.float64)
    s = np.maximum(a, a.T)
    np.fill_diagonal(s, 0.0)
    return s


def binarize(a, threshold=0.5):
    """Threshold a (possibly continuous) adjacency into a symmetric 0/1 matrix."""
    b = (np.asarray(a) > threshold).astype(np.float64)
    b = np.maximum(b, np.swapaxes(b, -1, -2))
    idx = np.arange(b.shape[-1])
    b[..., idx, idx] = 0.0
    return b


def _check_adjacency(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError("adjacency must be square")
    if not np.array_equal(a, a.T):
        raise ContractError("adjacency must be symmetric (call symmetrize first)")
    if not np.isin(a, (0.0, 1.0)).all():
        raise ContractError("adjacency must be binary")
    if np.any(np.diag(a) != 0):
        raise ContractError("adjacency must have a zero diagonal")


def normalized_laplacian(a, mask=None):
    """``D^{+/2} (D - A) D^{+/2}``; isolated (and masked) nodes give zero rows."""
    a = np.asarray(a, dtype=np.float64)
    _check_adjacency(a)
    if mask is not None:
        w = np.asarray(mask, dtype=np.float64)
        a = a * w[:, None] * w[None, :]
    deg = a.sum(axis=1)
    dinv = np.zeros_like(deg)
    nz = deg > DEG_EPS
    dinv[nz] = 1.0 / np.sqrt(deg[nz])
    l = dinv[:, None] * (np.diag(deg) - a) * dinv[None, :]
    return Laplacian(l, deg)


def dirichlet_energy(x, lap):
    """``Tr(X^T L X)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != lap.l.shape[0]:
        raise ContractError(f"feature rows {x.shape[0]} != Laplacian size {lap.l.shape[0]}")
    return float(max(np.sum(x * (lap.l @ x)), 0.0))


def dirichlet_energy_edges(x, a):
    """Edge-sum form: sum over undirected edges of ``|x_i/sqrt(d_i) - x_j/sqrt(d_j)|^2``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    deg = a.sum(axis=1)
    total = 0.0
    for i, j in zip(*np.nonzero(np.triu(a, 1))):
        di = 1.0 / np.sqrt(deg[i]) if deg[i] > DEG_EPS else 0.0
        dj = 1.0 / np.sqrt(deg[j]) if deg[j] > DEG_EPS else 0.0
        total += float(np.sum((x[i] * di - x[j] * dj) ** 2))
    return total


def normalized_energy(x, a=None, mask=None):
    """Dirichlet energy divided by the squared Frobenius norm of the features.

    Accepts either a ``DenseEgoGraph`` (with binary adjacency) or ``(x, a, mask)``.
    The result lies in ``[0, 2]``. Raises ``NormalizationError`` when the masked
    features are all zero.
    """
    if isinstance(x, DenseEgoGraph):
        x, a, mask = x.x, x.a, x.mask
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if mask is not None:
        idx = np.flatnonzero(mask)
        x, a = x[idx], np.asarray(a)[np.ix_(idx, idx)]
    norm2 = float(np.sum(x * x))
    if norm2 == 0.0:
        raise NormalizationError("normalized energy undefined for all-zero features")
    return dirichlet_energy(x, normalized_laplacian(a)) / norm2


def batch_normalized_energy(x, a, mask):
    """Vectorized normalized energy over a padded batch.

    Returns ``(energy, degenerate)`` where degenerate graphs (all-zero features)
    get energy 0 and a True flag.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    energy, norm2 = _kernels.masked_energy(x, a, mask)
    degenerate = norm2 == 0.0
    out = np.where(degenerate, 0.0, energy / np.where(degenerate, 1.0, norm2))
    return np.clip(out, 0.0, 2.0), degenerate
