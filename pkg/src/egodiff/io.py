"""Graph bundles on disk, synthetic anomaly networks, CSV report writers."""
import csv
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, DataError
from .graph import SparseNetwork


def fmt(v):
    """17 significant digits: round-trips any float64."""
    return f"{float(v):.17g}"


# --------------------------------------------------------------------------
# bundles
# --------------------------------------------------------------------------

def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [ln.rstrip("\n").rstrip("\r") for ln in fh if ln.strip()]


def load_bundle(path) -> SparseNetwork:
    """Read ``meta.json``, ``edges.tsv``, ``features.tsv`` and optional ``labels.tsv``."""
    meta_path = os.path.join(path, "meta.json")
    if not os.path.isdir(path):
        raise DataError(f"bundle directory {path!r} does not exist")
    for req in ("meta.json", "edges.tsv", "features.tsv"):
        if not os.path.isfile(os.path.join(path, req)):
            raise DataError(f"bundle {path!r} is missing {req}")
    with open(meta_path, encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{meta_path}: invalid JSON ({exc})") from exc
    for key in ("num_nodes", "num_features"):
        if key not in meta:
            raise DataError(f"{meta_path}: missing key {key!r}")
    n, f = int(meta["num_nodes"]), int(meta["num_features"])

    epath = os.path.join(path, "edges.tsv")
    edges = []
    for lineno, line in enumerate(_read_lines(epath), 1):
        parts = line.split("\t")
        try:
            if len(parts) != 2:
                raise ValueError
            s, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"{epath}:{lineno}: expected 'src<TAB>dst', got {line!r}") from None
        if not (0 <= s < n and 0 <= d < n):
            raise DataError(f"{epath}:{lineno}: endpoint outside [0, {n})")
        edges.append((s, d))

    fpath = os.path.join(path, "features.tsv")
    rows = _read_lines(fpath)
    if len(rows) != n:
        raise DataError(f"{fpath}: {len(rows)} rows, meta.json says {n}")
    feats = np.empty((n, f))
    for lineno, line in enumerate(rows, 1):
        parts = line.split("\t")
        if len(parts) != f:
            raise DataError(f"{fpath}:{lineno}: {len(parts)} values, expected {f}")
        try:
            feats[lineno - 1] = [float(p) for p in parts]
        except ValueError:
            raise DataError(f"{fpath}:{lineno}: non-numeric value") from None

    labels = None
    lpath = os.path.join(path, "labels.tsv")
    if os.path.isfile(lpath):
        lrows = _read_lines(lpath)
        if len(lrows) != n:
            raise DataError(f"{lpath}: {len(lrows)} lines, meta.json says {n}")
        labels = np.empty(n, dtype=np.int64)
        for lineno, line in enumerate(lrows, 1):
            if line.strip() not in ("0", "1"):
                raise DataError(f"{lpath}:{lineno}: expected 0 or 1, got {line!r}")
            labels[lineno - 1] = int(line)
    return SparseNetwork(n, np.array(edges, dtype=np.int64).reshape(-1, 2), feats, labels,
                         bool(meta.get("directed", False)), str(meta.get("name", "network")))


def save_bundle(net: SparseNetwork, path):
    os.makedirs(path, exist_ok=True)
    meta = {"name": net.name, "num_nodes": net.num_nodes, "num_features": net.num_features,
            "directed": net.directed}
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(path, "edges.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{s}\t{d}\n" for s, d in net.edges)
    with open(os.path.join(path, "features.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines("\t".join(fmt(v) for v in row) + "\n" for row in net.features)
    lpath = os.path.join(path, "labels.tsv")
    if net.labels is not None:
        with open(lpath, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{int(v)}\n" for v in net.labels)
    elif os.path.exists(lpath):
        os.remove(lpath)
    return path


# --------------------------------------------------------------------------
# synthetic networks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    num_nodes: int = 500
    num_features: int = 8
    blocks: int = 4
    p_in: float = 0.08
    p_out: float = 0.004
    contextual_fraction: float = 0.025
    structural_fraction: float = 0.025
    clique_size: int = 12
    feature_shift: float = 15.0
    block_separation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("contextual_fraction", "structural_fraction"):
            if not 0.0 <= getattr(self, name) <= 0.5:
                raise ContractError(f"{name} must lie in [0, 0.5]")
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise ContractError("need 0 <= p_out < p_in <= 1")
        if self.num_nodes < 2 or self.num_features < 1 or self.blocks < 1:
            raise ContractError("num_nodes >= 2, num_features >= 1, blocks >= 1 required")


@dataclass(frozen=True, eq=False)
class SynthInfo:
    blocks: np.ndarray        # block id per node
    block_means: np.ndarray   # (blocks, F)
    contextual: np.ndarray    # node ids
    structural: np.ndarray    # node ids
    cliques: list             # list of node-id arrays


def generate_synthetic(cfg: SynthConfig, return_info=False):
    """Stochastic block model with planted contextual and structural outliers.

    Contextual outliers get features pushed ``feature_shift`` (l2, in units of
    the per-feature noise std) along a random direction. Structural outliers are
    wired into disjoint cliques of ``clique_size``.
    """
    rng = np.random.default_rng(cfg.seed)
    n, f = cfg.num_nodes, cfg.num_features
    n_struct = int(round(cfg.structural_fraction * n))
    n_ctx = int(round(cfg.contextual_fraction * n))
    if n_struct:
        if cfg.clique_size < 2 or cfg.clique_size > n_struct:
            raise ContractError(
                f"clique_size={cfg.clique_size} infeasible for {n_struct} structural outliers")
        n_struct -= n_struct % cfg.clique_size
    if n_struct + n_ctx > n:
        raise ContractError("more planted outliers than nodes")

    blocks = rng.permutation(np.arange(n) % cfg.blocks)
    iu, ju = np.triu_indices(n, 1)
    same = blocks[iu] == blocks[ju]
    p = np.where(same, cfg.p_in, cfg.p_out)
    keep = rng.random(p.size) < p
    edges = [np.stack((iu[keep], ju[keep]), axis=1)]

    means = rng.standard_normal((cfg.blocks, f)) * cfg.block_separation
    feats = means[blocks] + rng.standard_normal((n, f))

    chosen = rng.permutation(n)
    structural = np.sort(chosen[:n_struct])
    contextual = np.sort(chosen[n_struct:n_struct + n_ctx])
    cliques = []
    order = rng.permutation(structural)
    for c in range(0, n_struct, cfg.clique_size):
        members = np.sort(order[c:c + cfg.clique_size])
        cliques.append(members)
        ci, cj = np.triu_indices(members.size, 1)
        edges.append(np.stack((members[ci], members[cj]), axis=1))

    for v in contextual:
        mu = means[blocks[v]]
        while True:
            u = rng.standard_normal(f)
            u /= np.linalg.norm(u)
            cand = feats[v] + cfg.feature_shift * u
            if np.linalg.norm(cand - mu) > cfg.feature_shift / 2:
                feats[v] = cand
                break

    labels = np.zeros(n, dtype=np.int64)
    labels[structural] = 1
    labels[contextual] = 1
    net = SparseNetwork(n, np.concatenate(edges), feats, labels, False, "synthetic")
    if return_info:
        return net, SynthInfo(blocks, means, contextual, structural, cliques)
    return net


# --------------------------------------------------------------------------
# CSV reports
# --------------------------------------------------------------------------

def _writer(path):
    fh = open(path, "w", encoding="utf-8", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_score_csv(report, path):
    """``node_id,score[,label]`` sorted by descending score (ties: ascending id)."""
    fh, w = _writer(path)
    with fh:
        has_labels = report is not None and report.labels is not None
        w.writerow(["node_id", "score", "label"] if has_labels else ["node_id", "score"])
        if report is None or len(report.node_ids) == 0:
            return path
        scores = report.scores
        pos = {int(v): i for i, v in enumerate(report.node_ids)}
        for v in report.ranking():
            i = pos[int(v)]
            row = [int(v), fmt(scores[i])]
            if has_labels:
                row.append(int(report.labels[i]))
            w.writerow(row)
    return path


def write_breakdown_csv(report, path):
    """``node_id,tau,sample,dissimilarity,energy_orig,energy_recon``."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["node_id", "tau", "sample", "dissimilarity", "energy_orig", "energy_recon"])
        if report is None:
            return path
        d = report.dissimilarity
        for r, v in enumerate(report.node_ids):
            for i, tau in enumerate(report.taus):
                for j in range(d.shape[2]):
                    w.writerow([int(v), fmt(tau), j, fmt(d[r, i, j]),
                                fmt(report.energy_orig[r]), fmt(report.energy_recon[r, i, j])])
    return path


def write_solver_profile_csv(rows, path):
    fh, w = _writer(path)
    with fh:
        w.writerow(["solver", "tau", "error_x", "error_a"])
        for kind, tau, ex, ea in rows:
            w.writerow([kind, fmt(tau), fmt(ex), fmt(ea)])
    return path


def write_energy_csv(records, path):
    fh, w = _writer(path)
    with fh:
        w.writerow(["node_id", "tau", "sample", "energy_orig", "energy_recon", "signed_diff"])
        for v, tau, j, eo, er, diff in records:
            w.writerow([v, fmt(tau), j, fmt(eo), fmt(er), fmt(diff)])
    return path


def write_eval_csv(per_trial, path):
    """``trial,metric,value`` rows followed by ``mean``/``std``/``max`` per metric.

    ``per_trial`` is a list of ``{metric: value}`` dicts, one per trial.
    """
    metrics = list(per_trial[0]) if per_trial else []
    fh, w = _writer(path)
    with fh:
        w.writerow(["trial", "metric", "value"])
        for t, row in enumerate(per_trial):
            for m in metrics:
                w.writerow([t, m, fmt(row[m])])
        for agg, fn in (("mean", np.mean), ("std", np.std), ("max", np.max)):
            for m in metrics:
                w.writerow([agg, m, fmt(fn([row[m] for row in per_trial]))])
    return path


def read_score_csv(path):
    """Returns ``(node_ids, scores, labels_or_None)`` from a score CSV."""
    if not os.path.isfile(path):
        raise DataError(f"score file {path!r} not found")
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["node_id", "score"]:
        raise DataError(f"{path}: header must start with node_id,score")
    has_label = len(rows[0]) > 2 and rows[0][2] == "label"
    ids, scores, labels = [], [], []
    for lineno, row in enumerate(rows[1:], 2):
        try:
            ids.append(int(row[0]))
            scores.append(float(row[1]))
            if has_label:
                labels.append(int(row[2]))
        except (ValueError, IndexError):
            raise DataError(f"{path}:{lineno}: malformed row {row!r}") from None
    return (np.array(ids, dtype=np.int64), np.array(scores),
            np.array(labels, dtype=np.int64) if has_label else None)


def synth_config_dict(cfg: SynthConfig):
    return asdict(cfg)
