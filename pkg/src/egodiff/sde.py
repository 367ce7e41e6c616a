"""Variance-preserving forward diffusion with closed-form transition moments."""
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class VpSde:
    """``dG = -beta(t)/2 G dt + sqrt(beta(t)) dw`` with a linear schedule."""

    beta_min: float = 0.1
    beta_max: float = 1.0
    t_max: float = 1.0
    t_eps: float = 1e-5

    def __post_init__(self):
        if not 0 < self.beta_min <= self.beta_max:
            raise ContractError("need 0 < beta_min <= beta_max")
        if self.t_max <= 0 or not 0 < self.t_eps < self.t_max:
            raise ContractError("need T > 0 and 0 < t_eps < T")

    def _check_t(self, t, lo=0.0):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < lo) or np.any(t > self.t_max):
            raise ContractError(f"t outside [{lo}, {self.t_max}]")
        return t

    def beta(self, t):
        t = self._check_t(t)
        return self.beta_min + (self.beta_max - self.beta_min) * t

    def beta_integral(self, t):
        """``int_0^t beta(s) ds``."""
        t = self._check_t(t)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def moments(self, t):
        """Signal decay factor ``m_t`` and noise scale ``sigma_t``."""
        b = self.beta_integral(t)
        return np.exp(-0.5 * b), np.sqrt(-np.expm1(-b))

    def snr(self, t):
        t = self._check_t(t, lo=self.t_eps)
        m, s = self.moments(t)
        return m * m / (s * s)

    def drift(self, x, t):
        return -0.5 * self.beta(t) * x

    def diffusion(self, t):
        return np.sqrt(self.beta(t))


@dataclass(frozen=True, eq=False)
class Perturbation:
    noisy: np.ndarray
    noise: np.ndarray
    t: np.ndarray


def _expand(t, ndim):
    """Reshape scalar or per-batch ``t`` for broadcasting against ``ndim`` arrays."""
    t = np.asarray(t, dtype=np.float64)
    return t.reshape(t.shape + (1,) * (ndim - t.ndim))


def feature_entry_mask(mask, f):
    return np.broadcast_to(np.asarray(mask, dtype=np.float64)[..., None], mask.shape + (f,))


def pair_mask(mask):
    """Off-diagonal pairs of real nodes."""
    w = np.asarray(mask, dtype=np.float64)
    pm = w[..., :, None] * w[..., None, :]
    n = pm.shape[-1]
    return pm * (1.0 - np.eye(n))


def symmetric_noise(shape, rng):
    """Standard normal on the strict upper triangle, mirrored, zero diagonal."""
    z = np.triu(rng.standard_normal(shape), 1)
    return z + np.swapaxes(z, -1, -2)


def perturb_features(sde: VpSde, x0, mask, t, rng, noise=None):
    """Sample ``X_t ~ N(m_t X_0, sigma_t^2 I)`` on real rows; padding stays zero."""
    x0 = np.asarray(x0, dtype=np.float64)
    m, s = sde.moments(t)
    w = feature_entry_mask(mask, x0.shape[-1])
    z = (rng.standard_normal(x0.shape) if noise is None else noise) * w
    noisy = _expand(m, x0.ndim) * x0 * w + _expand(s, x0.ndim) * z
    return Perturbation(noisy, z, np.asarray(t, dtype=np.float64))


def perturb_adjacency(sde: VpSde, a0, mask, t, rng, noise=None):
    """Symmetric perturbation of the adjacency; diagonal and padding stay zero."""
    a0 = np.asarray(a0, dtype=np.float64)
    if not np.array_equal(a0, np.swapaxes(a0, -1, -2)):
        raise ContractError("adjacency must be symmetric")
    m, s = sde.moments(t)
    pm = pair_mask(mask)
    z = (symmetric_noise(a0.shape, rng) if noise is None else noise) * pm
    noisy = _expand(m, a0.ndim) * a0 * pm + _expand(s, a0.ndim) * z
    return Perturbation(noisy, z, np.asarray(t, dtype=np.float64))


def score_target(sde: VpSde, pert: Perturbation, clean):
    """Conditional score ``-(X_t - m_t X_0) / sigma_t^2`` (equals ``-Z/sigma_t``)."""
    t = pert.t
    if np.any(t < sde.t_eps):
        raise ContractError("score target undefined below t_eps")
    m, s = sde.moments(t)
    nd = pert.noisy.ndim
    resid = pert.noisy - _expand(m, nd) * np.asarray(clean)
    return -resid / _expand(s * s, nd)
