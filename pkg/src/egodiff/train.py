"""Feature scaling, denoising score-matching training and Adam updates."""
import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .ego import EgoConfig, build_batch, sample_ego
from .errors import ContractError, NumericalError
from .graph import SparseNetwork
from .model import ModelConfig, ParamStore, ScoreModel, loss_and_grads, save_checkpoint
from .sde import VpSde, feature_entry_mask, pair_mask, symmetric_noise

log = logging.getLogger(__name__)

STD_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: Optional[int] = None          # None = full batch
    lr: float = 0.01
    weight_decay: float = 0.01
    hidden_dim: int = 16
    hidden_dim_grid: tuple = (8, 12, 16)
    lr_grid: tuple = (0.1, 0.05, 0.01)
    alpha_grid: tuple = (0.8, 0.5, 0.2)
    seed: int = 0
    ego: EgoConfig = field(default_factory=EgoConfig)
    sde: VpSde = field(default_factory=VpSde)

    def __post_init__(self):
        if not (self.hidden_dim_grid and self.lr_grid and self.alpha_grid):
            raise ContractError("hyperparameter grids must be non-empty")
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")


@dataclass(frozen=True)
class FeatureScaler:
    std: np.ndarray        # divisor per column (1.0 where left unscaled)
    constant: np.ndarray   # True for columns left untouched

    def apply(self, net: SparseNetwork) -> SparseNetwork:
        if net.num_features != self.std.size:
            raise ContractError(
                f"scaler built for {self.std.size} features, network has {net.num_features}")
        return net.with_features(net.features / self.std)


def standardize_features(net: SparseNetwork):
    """Divide each column by its population standard deviation (no centering).

    Columns with std below 1e-12 are left untouched and flagged as constant.
    """
    if net.num_nodes < 2:
        raise ContractError("standardization needs at least two nodes")
    std = net.features.std(axis=0)
    constant = std < STD_EPS
    div = np.where(constant, 1.0, std)
    scaler = FeatureScaler(div, constant)
    return scaler.apply(net), scaler


@dataclass(frozen=True)
class HyperParams:
    lr: float
    hidden_dim: int
    alpha: float


def draw_hyperparameters(cfg: TrainConfig, trial_index: int) -> HyperParams:
    """Uniform draw from each grid, seeded by ``(seed, trial_index)``."""
    rng = np.random.default_rng([cfg.seed, trial_index])
    return HyperParams(
        lr=float(cfg.lr_grid[rng.integers(len(cfg.lr_grid))]),
        hidden_dim=int(cfg.hidden_dim_grid[rng.integers(len(cfg.hidden_dim_grid))]),
        alpha=float(cfg.alpha_grid[rng.integers(len(cfg.alpha_grid))]),
    )


def sample_times(sde: VpSde, size, rng):
    return rng.uniform(sde.t_eps, sde.t_max, size=size)


def dsm_step(model: ScoreModel, batch, sde: VpSde, rng, oracle_hook=None):
    """One DSM evaluation: draw ``t`` per graph and the noise, return
    ``(loss_x, loss_a, grads_theta, grads_phi)``.

    ``oracle_hook(z_x, z_a) -> (eps_x, eps_a)`` replaces the networks (test hook;
    gradients are then ``None``).
    """
    b = len(batch)
    t = sample_times(sde, b, rng)
    z_x = rng.standard_normal(batch.x.shape)
    z_a = symmetric_noise(batch.a.shape, rng)
    if oracle_hook is not None:
        fm, pm = feature_entry_mask(batch.mask, batch.x.shape[-1]), pair_mask(batch.mask)
        ex, ea = oracle_hook(z_x * fm, z_a * pm)
        lx = float((((ex - z_x) * fm) ** 2).sum() / max(fm.sum(), 1))
        la = float((((ea - z_a) * pm) ** 2).sum() / max(pm.sum(), 1))
        return lx, la, None, None
    return loss_and_grads(model, batch.x, batch.a, batch.mask, t, z_x, z_a, sde)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: ParamStore, grads: ParamStore, state: AdamState, lr,
                weight_decay=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    """Adam with bias correction and decoupled weight decay. Updates in place."""
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * ((m / c1) / (np.sqrt(v / c2) + eps) + weight_decay * p)
        if not np.isfinite(p).all():
            raise NumericalError(f"parameter '{k}' became non-finite after Adam step")
    return params, state


def batches_per_epoch(num_nodes, batch_size):
    if batch_size is None:
        return 1
    return max(1, math.ceil(num_nodes / batch_size))


def random_batch(net, ego_cfg: EgoConfig, size, rng):
    nodes = rng.integers(net.num_nodes, size=size)
    return build_batch([sample_ego(net, int(v), ego_cfg, rng) for v in nodes])


def evaluate_loss(model, net, sde, ego_cfg, seed, n_batches=10, batch_size=64):
    """Mean DSM losses on a fixed, seeded set of batches (no parameter change)."""
    rng = np.random.default_rng([seed, 7919])
    lx = la = 0.0
    for _ in range(n_batches):
        batch = random_batch(net, ego_cfg, batch_size, rng)
        t = sample_times(sde, len(batch), rng)
        z_x = rng.standard_normal(batch.x.shape)
        z_a = symmetric_noise(batch.a.shape, rng)
        x, a, *_ = loss_and_grads(model, batch.x, batch.a, batch.mask, t, z_x, z_a, sde,
                                  need_grads=False)
        lx += x
        la += a
    return lx / n_batches, la / n_batches


@dataclass
class TrainResult:
    model: ScoreModel
    losses: List[tuple]                  # (epoch, loss_x, loss_a)
    checkpoint: Optional[str] = None
    loss_csv: Optional[str] = None


def write_loss_csv(path, losses):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss_x", "loss_a"])
        for epoch, lx, la in losses:
            w.writerow([epoch, f"{lx:.17g}", f"{la:.17g}"])


def train(net: SparseNetwork, cfg: TrainConfig, model_cfg: ModelConfig = None,
          lr=None, out_dir=None, scaler: FeatureScaler = None, tag="") -> TrainResult:
    """Fit both score networks on ego-graphs of uniformly drawn nodes.

    ``net`` must already be standardized. One epoch is
    ``ceil(num_nodes / batch_size)`` batches. When ``out_dir`` is given, a
    checkpoint directory and a ``epoch,loss_x,loss_a`` CSV are written there.
    """
    model_cfg = model_cfg or ModelConfig(net.num_features, cfg.hidden_dim)
    lr = cfg.lr if lr is None else lr
    rng = np.random.default_rng(cfg.seed)
    model = ScoreModel.init(model_cfg, rng)
    size = net.num_nodes if cfg.batch_size is None else cfg.batch_size
    state_t, state_p = AdamState(), AdamState()
    losses = []
    for epoch in range(1, cfg.epochs + 1):
        sx = sa = 0.0
        nb = batches_per_epoch(net.num_nodes, cfg.batch_size)
        for _ in range(nb):
            batch = random_batch(net, cfg.ego, size, rng)
            lx, la, gt, gp = dsm_step(model, batch, cfg.sde, rng)
            adam_update(model.theta, gt, state_t, lr, cfg.weight_decay)
            adam_update(model.phi, gp, state_p, lr, cfg.weight_decay)
            sx += lx
            sa += la
        losses.append((epoch, sx / nb, sa / nb))
        log.debug("epoch %d loss_x=%.4f loss_a=%.4f", epoch, sx / nb, sa / nb)
    result = TrainResult(model, losses)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, f"checkpoint{tag}")
        save_checkpoint(ckpt, model, cfg.sde,
                        None if scaler is None else scaler.std,
                        extra={"lr": lr, "seed": cfg.seed, "epochs": cfg.epochs})
        result.checkpoint = ckpt
        result.loss_csv = os.path.join(out_dir, f"loss{tag}.csv")
        write_loss_csv(result.loss_csv, losses)
    return result
