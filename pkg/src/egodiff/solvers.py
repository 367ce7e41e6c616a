"""Reverse-time integrators for the coupled feature/adjacency system.

``score_fn(x, a, mask, t) -> (score_x, score_a)`` is evaluated on batched
state ``x: (B, N, F)``, ``a: (B, N, N)``. Noise for the adjacency channel is
symmetric with a zero diagonal; padding stays exactly zero throughout.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SolverDivergence
from .sde import VpSde, feature_entry_mask, pair_mask

SOLVER_KINDS = ("em", "reverse", "em+langevin", "reverse+langevin")


@dataclass(frozen=True)
class SolverConfig:
    kind: str = "em"
    steps_per_unit_time: int = 100
    corrector_target_snr: float = 0.16
    corrector_steps: int = 1
    corrector_order: str = "after"

    def __post_init__(self):
        if self.kind == "s4":
            raise ContractError("the S4 solver is not implemented; choose one of "
                                + ", ".join(SOLVER_KINDS))
        if self.kind not in SOLVER_KINDS:
            raise ContractError(f"unknown solver kind {self.kind!r}")
        if self.steps_per_unit_time < 1:
            raise ContractError("steps_per_unit_time must be >= 1")
        if self.corrector_target_snr <= 0 or self.corrector_steps < 0:
            raise ContractError("corrector settings must be positive")
        if self.corrector_order not in ("before", "after"):
            raise ContractError("corrector_order must be 'before' or 'after'")

    @property
    def predictor(self):
        return self.kind.split("+")[0]

    @property
    def uses_corrector(self):
        return self.kind.endswith("+langevin")


def num_steps(tau, t_max, steps_per_unit_time=100):
    """``floor(steps_per_unit_time * tau / T)``, at least 1."""
    raw = steps_per_unit_time * tau / t_max
    # 100 * 0.6 evaluates to 60.000000000000014 and 100 * 0.29 to 28.999999999999996
    return max(1, int(math.floor(raw + 1e-9)))


def em_step(state, t, dt, score, sde: VpSde, z=None):
    """One reverse Euler-Maruyama step from ``t`` to ``t - dt``.

    ``state - [f(state, t) - g^2 score] dt + g sqrt(dt) z``; ``z=None`` gives the mean.
    """
    if dt <= 0:
        raise ContractError("dt must be positive")
    beta = float(sde.beta(t))
    out = state - (-0.5 * beta * state - beta * score) * dt
    if z is not None:
        out = out + math.sqrt(beta * dt) * z
    return out


def reverse_step(state, t, dt, score, sde: VpSde, z=None):
    """Ancestral-style VP discretization with ``beta_i = beta(t) dt``."""
    beta_i = float(sde.beta(t)) * dt
    if beta_i >= 1.0:
        raise ContractError(f"discrete beta_i={beta_i} must be < 1")
    out = (2.0 - math.sqrt(1.0 - beta_i)) * state + beta_i * score
    if z is not None:
        out = out + math.sqrt(beta_i) * z
    return out


def _group_norm(v):
    if v.ndim <= 1:
        return np.sqrt(np.sum(v * v))
    return np.sqrt(np.sum(v * v, axis=tuple(range(1, v.ndim))))


def langevin_correct(state, score, target_snr, z):
    """``state + delta * score + sqrt(2 delta) z`` with
    ``delta = 2 (target_snr |z| / |score|)^2`` per leading-axis group.

    Groups whose score norm is zero are left unchanged.
    """
    if target_snr <= 0:
        raise ContractError("target_snr must be positive")
    sn = _group_norm(score)
    zn = _group_norm(z)
    safe = np.where(sn > 0, sn, 1.0)
    delta = np.where(sn > 0, 2.0 * (target_snr * zn / safe) ** 2, 0.0)
    shape = np.shape(delta) + (1,) * (state.ndim - np.ndim(delta))
    delta = np.reshape(delta, shape)
    return state + delta * score + np.sqrt(2.0 * delta) * z


class NoiseSource:
    """Per-slice generators so every batch element draws its own stream.

    Draws are made at the slice's real size and zero-padded, which keeps results
    independent of batch composition and padding width.
    """

    def __init__(self, rngs, mask, num_features):
        self.rngs = list(rngs)
        self.mask = np.asarray(mask, dtype=bool)
        self.sizes = self.mask.sum(axis=1)
        self.f = num_features
        self._tri = {}

    @classmethod
    def shared(cls, rng, mask, num_features):
        return cls([rng] * len(mask), mask, num_features)

    def features(self):
        b, n = self.mask.shape
        z = np.zeros((b, n, self.f))
        for i, (g, k) in enumerate(zip(self.rngs, self.sizes)):
            z[i, :k] = g.standard_normal((k, self.f))
        return z

    def adjacency(self):
        b, n = self.mask.shape
        z = np.zeros((b, n, n))
        for i, (g, k) in enumerate(zip(self.rngs, self.sizes)):
            if k < 2:
                continue
            iu = self._tri.get(k)
            if iu is None:
                iu = self._tri[k] = np.triu_indices(k, 1)
            vals = g.standard_normal(iu[0].size)
            zi = z[i]
            zi[iu] = vals
            zi[iu[1], iu[0]] = vals
        return z


def integrate_reverse(x_tau, a_tau, mask, tau, score_fn, sde: VpSde, cfg: SolverConfig,
                      noise: NoiseSource, stochastic=True):
    """Integrate the reverse system from ``tau`` back to 0.

    Runs ``num_steps(tau)`` predictor steps; corrector kinds interleave
    ``corrector_steps`` Langevin updates per predictor step. The last predictor
    step emits its mean. ``stochastic=False`` zeroes the diffusion coefficient
    (no noise and no score term), leaving only the drift reversal.
    """
    if not sde.t_eps <= tau <= sde.t_max:
        raise ContractError(f"tau={tau} outside [{sde.t_eps}, {sde.t_max}]")
    mask = np.asarray(mask, dtype=bool)
    fm = feature_entry_mask(mask, x_tau.shape[-1])
    pm = pair_mask(mask)
    x = np.asarray(x_tau, dtype=np.float64) * fm
    a = np.asarray(a_tau, dtype=np.float64) * pm
    n = num_steps(tau, sde.t_max, cfg.steps_per_unit_time)
    dt = tau / n
    step = em_step if cfg.predictor == "em" else reverse_step
    b = x.shape[0]

    def scores(x, a, t):
        if not stochastic:
            return np.zeros_like(x), np.zeros_like(a)
        sx, sa = score_fn(x, a, mask, np.full(b, t))
        return sx * fm, sa * pm

    def correct(x, a, t):
        for _ in range(cfg.corrector_steps):
            sx, sa = scores(x, a, t)
            x = langevin_correct(x, sx, cfg.corrector_target_snr, noise.features())
            a = langevin_correct(a, sa, cfg.corrector_target_snr, noise.adjacency())
        return x, a

    for i in range(n):
        t = tau - i * dt
        last = i == n - 1
        if cfg.uses_corrector and stochastic and cfg.corrector_order == "before":
            x, a = correct(x, a, t)
        sx, sa = scores(x, a, t)
        zx = None if (last or not stochastic) else noise.features()
        za = None if (last or not stochastic) else noise.adjacency()
        if stochastic:
            x = step(x, t, dt, sx, sde, zx)
            a = step(a, t, dt, sa, sde, za)
        else:
            x = _drift_only(step, x, t, dt, sde)
            a = _drift_only(step, a, t, dt, sde)
        if cfg.uses_corrector and stochastic and cfg.corrector_order == "after" and not last:
            x, a = correct(x, a, t - dt)
        x, a = x * fm, a * pm
        if not (np.isfinite(x).all() and np.isfinite(a).all()):
            raise SolverDivergence(f"non-finite state at reverse step {i}", step=i)
    return x, a


def _drift_only(step, state, t, dt, sde):
    if step is em_step:
        return state + 0.5 * float(sde.beta(t)) * state * dt
    beta_i = float(sde.beta(t)) * dt
    return (2.0 - math.sqrt(1.0 - beta_i)) * state
