"""k-hop ego-graph extraction, hub truncation and padded batching."""
from dataclasses import dataclass
from typing import List

import numpy as np

from . import _kernels
from .errors import ContractError
from .graph import DenseEgoGraph, SparseNetwork


@dataclass(frozen=True)
class EgoConfig:
    hops: int = 1
    max_nodes: int = 32

    def __post_init__(self):
        if self.hops < 1:
            raise ContractError("hops must be >= 1")
        if self.max_nodes < 2:
            raise ContractError("max_nodes must be >= 2")


@dataclass(frozen=True, eq=False)
class EgoBatch:
    x: np.ndarray         # (B, N, F)
    a: np.ndarray         # (B, N, N)
    mask: np.ndarray      # (B, N) bool
    centers: np.ndarray   # (B,)
    node_ids: np.ndarray  # (B, N), -1 on padding

    def __len__(self):
        return self.x.shape[0]

    @property
    def n_max(self):
        return self.x.shape[1]


def extract_ego(net: SparseNetwork, v: int, k: int = 1) -> DenseEgoGraph:
    """Induced k-hop ego-graph of ``v`` (edges taken as undirected).

    Slot 0 holds the center; remaining nodes follow in ascending original index.
    """
    if not 0 <= v < net.num_nodes:
        raise ContractError(f"node {v} out of range [0, {net.num_nodes})")
    indptr, indices = net.csr
    nodes = _kernels.bfs_ball(indptr, indices, np.int64(v), np.int64(k))
    a = _kernels.induced_adjacency(indptr, indices, nodes)
    return DenseEgoGraph(net.features[nodes].copy(), a, np.ones(nodes.size, dtype=bool),
                         0, nodes)


def truncate(ego: DenseEgoGraph, m: int, rng: np.random.Generator) -> DenseEgoGraph:
    """Keep the center plus ``m - 1`` uniformly drawn other nodes, re-inducing edges."""
    if m < 1:
        raise ContractError("m must be >= 1")
    ego = ego if ego.mask.all() else ego.real()
    if ego.n <= m:
        return ego
    others = np.array([i for i in range(ego.n) if i != ego.center], dtype=np.int64)
    keep = np.sort(np.concatenate(([ego.center], rng.choice(others, m - 1, replace=False))))
    center = int(np.searchsorted(keep, ego.center))
    ids = None if ego.node_ids is None else ego.node_ids[keep]
    return DenseEgoGraph(ego.x[keep], ego.a[np.ix_(keep, keep)], np.ones(m, dtype=bool),
                         center, ids)


def sample_ego(net, v, cfg: EgoConfig, rng):
    return truncate(extract_ego(net, v, cfg.hops), cfg.max_nodes, rng)


def build_batch(egos: List[DenseEgoGraph]) -> EgoBatch:
    """Zero-pad ego-graphs to a common size. Real slots come first in each slice."""
    if not egos:
        raise ContractError("cannot batch an empty list")
    f = egos[0].f
    if any(g.f != f for g in egos):
        raise ContractError("feature dimension mismatch in batch")
    egos = [g if g.mask.all() else g.real() for g in egos]
    n_max = max(g.n for g in egos)
    b = len(egos)
    x = np.zeros((b, n_max, f))
    a = np.zeros((b, n_max, n_max))
    mask = np.zeros((b, n_max), dtype=bool)
    ids = np.full((b, n_max), -1, dtype=np.int64)
    centers = np.zeros(b, dtype=np.int64)
    for i, g in enumerate(egos):
        n = g.n
        x[i, :n] = g.x
        a[i, :n, :n] = g.a
        mask[i, :n] = True
        centers[i] = g.center
        if g.node_ids is not None:
            ids[i, :n] = g.node_ids
    return EgoBatch(x, a, mask, centers, ids)


def unbatch(batch: EgoBatch) -> List[DenseEgoGraph]:
    out = []
    for i in range(len(batch)):
        n = int(batch.mask[i].sum())
        ids = batch.node_ids[i, :n].copy()
        out.append(DenseEgoGraph(batch.x[i, :n].copy(), batch.a[i, :n, :n].copy(),
                                 np.ones(n, dtype=bool), int(batch.centers[i]),
                                 None if (ids < 0).all() else ids))
    return out


def replicate(batch: EgoBatch, times: int) -> EgoBatch:
    """Repeat every slice ``times`` times consecutively."""
    rep = lambda arr: np.repeat(arr, times, axis=0)
    return EgoBatch(rep(batch.x), rep(batch.a), rep(batch.mask), rep(batch.centers),
                    rep(batch.node_ids))
