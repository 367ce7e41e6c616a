"""Reconstruction-based anomaly scores, solver error profiles and energy records."""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .ego import EgoConfig, build_batch, extract_ego, replicate, truncate
from .errors import ContractError, SolverDivergence
from .graph import DenseEgoGraph, batch_normalized_energy, binarize
from .sde import VpSde, feature_entry_mask, pair_mask
from .solvers import NoiseSource, SolverConfig, integrate_reverse

PENALTIES = ("snr", "sqrt_snr", "none")
DISSIMILARITIES = ("matrix", "energy")

_TRUNC_STREAM = 0
_RECON_STREAM = 1


@dataclass(frozen=True)
class ScoringConfig:
    levels: int = 4
    samples_per_level: int = 3
    alpha: float = 0.5
    penalty: str = "snr"
    dissimilarity: str = "matrix"
    solver: SolverConfig = field(default_factory=SolverConfig)
    binarize_threshold: float = 0.5
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1 or self.samples_per_level < 1:
            raise ContractError("levels and samples_per_level must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError("alpha must lie in [0, 1]")
        if self.penalty not in PENALTIES:
            raise ContractError(f"penalty must be one of {PENALTIES}")
        if self.dissimilarity not in DISSIMILARITIES:
            raise ContractError(f"dissimilarity must be one of {DISSIMILARITIES}")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")


def reconstruction_levels(k, t_max=1.0):
    """Interior uniform grid ``i T / (K + 1)`` for ``i = 1..K``."""
    if k < 1:
        raise ContractError("K must be >= 1")
    return [i * t_max / (k + 1) for i in range(1, k + 1)]


def penalty_weights(taus, penalty, sde: VpSde):
    taus = np.asarray(taus, dtype=np.float64)
    if penalty == "snr":
        return sde.snr(taus)
    if penalty == "sqrt_snr":
        return np.sqrt(sde.snr(taus))
    if penalty == "none":
        return np.ones_like(taus)
    raise ContractError(f"unknown penalty {penalty!r}")


def aggregate_scores(dissim, weights):
    """``sum_i sum_j weight_i * d_ij`` for ``dissim`` shaped ``(nodes, K, S)``."""
    return np.einsum("nks,k->n", np.asarray(dissim, dtype=np.float64), weights)


def _real_counts(mask):
    return np.asarray(mask, dtype=np.float64).sum(axis=-1)


def error_terms(x, a, x_hat, a_hat, mask):
    """Per-graph ``|X - X_hat|_F / (N F)`` and ``|A - A_hat|_F / N^2`` on real slots."""
    n = _real_counts(mask)
    f = x.shape[-1]
    fm = feature_entry_mask(mask, f)
    w = np.asarray(mask, dtype=np.float64)
    full = w[:, :, None] * w[:, None, :]
    ex = np.sqrt((((x - x_hat) * fm) ** 2).sum(axis=(1, 2))) / (n * f)
    ea = np.sqrt((((a - a_hat) * full) ** 2).sum(axis=(1, 2))) / (n * n)
    return ex, ea


def matrix_distance(g: DenseEgoGraph, g_hat: DenseEgoGraph, alpha):
    """``(1 - alpha) |A - A_hat|_F / N^2 + alpha |X - X_hat|_F / (N F)``."""
    if g.x.shape != g_hat.x.shape or g.a.shape != g_hat.a.shape:
        raise ContractError("matrix_distance needs graphs of identical shape")
    ex, ea = error_terms(g.x[None], g.a[None], g_hat.x[None], g_hat.a[None], g.mask[None])
    return float((1.0 - alpha) * ea[0] + alpha * ex[0])


def energy_shift(g: DenseEgoGraph, g_hat: DenseEgoGraph, threshold=0.5):
    """Absolute difference of normalized energies (reconstruction binarized).

    All-zero feature matrices contribute energy 0 instead of raising.
    """
    e0, _ = batch_normalized_energy(g.x[None], binarize(g.a, threshold)[None], g.mask[None])
    e1, _ = batch_normalized_energy(g_hat.x[None], binarize(g_hat.a, threshold)[None],
                                    g.mask[None])
    return float(abs(e0[0] - e1[0]))


def _rngs(seed, node_ids, level, samples):
    return [np.random.default_rng([seed, _RECON_STREAM, int(v), level, j])
            for v in node_ids for j in range(samples)]


def perturb_with(noise: NoiseSource, x0, a0, mask, tau, sde: VpSde):
    m, s = sde.moments(tau)
    fm = feature_entry_mask(mask, x0.shape[-1])
    pm = pair_mask(mask)
    return m * x0 * fm + s * noise.features(), m * a0 * pm + s * noise.adjacency()


def reconstruct_batch(batch, tau, score_fn, sde: VpSde, solver: SolverConfig, noise):
    """Corrupt with the transition kernel at ``tau`` then integrate back to 0."""
    x_tau, a_tau = perturb_with(noise, batch.x, batch.a, batch.mask, tau, sde)
    return integrate_reverse(x_tau, a_tau, batch.mask, tau, score_fn, sde, solver, noise)


def reconstruct(ego: DenseEgoGraph, tau, model, sde: VpSde, solver: SolverConfig, rng):
    """Single-graph reconstruction operator; returns a ``DenseEgoGraph`` with
    continuous adjacency."""
    batch = build_batch([ego])
    noise = NoiseSource([rng], batch.mask, ego.f)
    xh, ah = reconstruct_batch(batch, tau, model.score_fn(sde), sde, solver, noise)
    n = batch.x.shape[1]
    return DenseEgoGraph(xh[0, :n], ah[0, :n, :n], batch.mask[0].copy(), ego.center,
                         ego.node_ids)


def scoring_ego(net, v, ego_cfg: EgoConfig, seed):
    """The (possibly truncated) ego-graph a node is scored on; fixed per (seed, node)."""
    rng = np.random.default_rng([seed, _TRUNC_STREAM, int(v)])
    return truncate(extract_ego(net, v, ego_cfg.hops), ego_cfg.max_nodes, rng)


@dataclass(eq=False)
class ScoreReport:
    node_ids: np.ndarray          # (n,)
    taus: np.ndarray              # (K,)
    weights: np.ndarray           # (K,)
    err_x: np.ndarray             # (n, K, S)
    err_a: np.ndarray             # (n, K, S)
    energy_orig: np.ndarray       # (n,)
    energy_recon: np.ndarray      # (n, K, S)
    zero_feature: np.ndarray      # (n, K, S) reconstruction had all-zero features
    edgeless: np.ndarray          # (n, K, S) binarized reconstruction had no edges
    alpha: float
    dissimilarity_kind: str
    labels: Optional[np.ndarray] = None

    @property
    def dissimilarity(self):
        if self.dissimilarity_kind == "energy":
            return np.abs(self.energy_orig[:, None, None] - self.energy_recon)
        return (1.0 - self.alpha) * self.err_a + self.alpha * self.err_x

    @property
    def scores(self):
        return aggregate_scores(self.dissimilarity, self.weights)

    def ranking(self):
        """Node ids by descending score; ties broken by ascending node id."""
        order = np.lexsort((self.node_ids, -self.scores))
        return self.node_ids[order]

    def with_options(self, alpha=None, dissimilarity=None, weights=None):
        return replace(self,
                       alpha=self.alpha if alpha is None else alpha,
                       dissimilarity_kind=dissimilarity or self.dissimilarity_kind,
                       weights=self.weights if weights is None else np.asarray(weights))


def _run_levels(net, nodes, model, sde, ego_cfg, taus, samples, solver, seed, batch_size,
                threshold):
    """Shared loop: per node chunk and level, reconstruct ``samples`` copies."""
    n, k = len(nodes), len(taus)
    err_x = np.zeros((n, k, samples))
    err_a = np.zeros((n, k, samples))
    e_rec = np.zeros((n, k, samples))
    zero_f = np.zeros((n, k, samples), dtype=bool)
    edgeless = np.zeros((n, k, samples), dtype=bool)
    e_orig = np.zeros(n)
    score_fn = model.score_fn(sde)
    for start in range(0, n, batch_size):
        chunk = nodes[start:start + batch_size]
        egos = [scoring_ego(net, v, ego_cfg, seed) for v in chunk]
        batch = build_batch(egos)
        sl = slice(start, start + len(chunk))
        e_orig[sl], _ = batch_normalized_energy(batch.x, batch.a, batch.mask)
        rep = replicate(batch, samples)
        for i, tau in enumerate(taus):
            noise = NoiseSource(_rngs(seed, chunk, i, samples), rep.mask, net.num_features)
            try:
                xh, ah = reconstruct_batch(rep, tau, score_fn, sde, solver, noise)
            except SolverDivergence as exc:
                raise SolverDivergence(
                    f"{exc} (nodes {chunk[0]}..{chunk[-1]}, tau={tau:g})", exc.step) from exc
            ex, ea = error_terms(rep.x, rep.a, xh, ah, rep.mask)
            ab = binarize(ah, threshold)
            er, degenerate = batch_normalized_energy(xh, ab, rep.mask)
            shape = (len(chunk), samples)
            err_x[sl, i] = ex.reshape(shape)
            err_a[sl, i] = ea.reshape(shape)
            e_rec[sl, i] = er.reshape(shape)
            zero_f[sl, i] = degenerate.reshape(shape)
            edgeless[sl, i] = (ab.sum(axis=(1, 2)) == 0).reshape(shape)
    return err_x, err_a, e_orig, e_rec, zero_f, edgeless


def score_all(net, model, sde: VpSde, ego_cfg: EgoConfig, cfg: ScoringConfig, nodes=None):
    """Score every node (or ``nodes``) of ``net``; features must already be standardized."""
    if net.num_features != model.config.num_features:
        raise ContractError(
            f"network has {net.num_features} features, model expects "
            f"{model.config.num_features}")
    nodes = np.arange(net.num_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    taus = np.array(reconstruction_levels(cfg.levels, sde.t_max))
    err_x, err_a, e_orig, e_rec, zero_f, edgeless = _run_levels(
        net, nodes, model, sde, ego_cfg, taus, cfg.samples_per_level, cfg.solver, cfg.seed,
        cfg.batch_size, cfg.binarize_threshold)
    labels = None if net.labels is None else net.labels[nodes]
    return ScoreReport(nodes, taus, penalty_weights(taus, cfg.penalty, sde), err_x, err_a,
                       e_orig, e_rec, zero_f, edgeless, cfg.alpha, cfg.dissimilarity, labels)


def node_score(net, v, model, sde, ego_cfg, cfg: ScoringConfig):
    """Score of a single node; identical to its entry in :func:`score_all`."""
    return float(score_all(net, model, sde, ego_cfg, cfg, nodes=[v]).scores[0])


def solver_error_profile(net, model, sde: VpSde, ego_cfg: EgoConfig, kinds, taus,
                         nodes, seed=0, samples=1, base: SolverConfig = None,
                         batch_size=64):
    """Mean feature and adjacency reconstruction errors per solver kind and tau.

    Returns rows ``(solver, tau, error_x, error_a)``.
    """
    base = base or SolverConfig()
    nodes = np.asarray(nodes, dtype=np.int64)
    rows = []
    for kind in kinds:
        solver = replace(base, kind=kind)
        err_x, err_a, *_ = _run_levels(net, nodes, model, sde, ego_cfg, list(taus), samples,
                                       solver, seed, batch_size, 0.5)
        for i, tau in enumerate(taus):
            rows.append((kind, float(tau), float(err_x[:, i].mean()),
                         float(err_a[:, i].mean())))
    return rows


def energy_records(report: ScoreReport):
    """Rows ``(node_id, tau, sample, energy_orig, energy_recon, signed_diff)``."""
    out = []
    for r, v in enumerate(report.node_ids):
        for i, tau in enumerate(report.taus):
            for j in range(report.energy_recon.shape[2]):
                eo, er = report.energy_orig[r], report.energy_recon[r, i, j]
                out.append((int(v), float(tau), j, float(eo), float(er), float(eo - er)))
    return out


def energy_histogram_data(net, model, sde, ego_cfg, cfg: ScoringConfig, nodes=None):
    return energy_records(score_all(net, model, sde, ego_cfg, cfg, nodes))
