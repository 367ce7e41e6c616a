"""Score networks for node features (GCN trunk) and adjacency (GMH trunk).

Both networks predict standardized noise; the score is ``-eps_hat / sigma_t``.
Time enters only through that output scaling.
"""
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, concat, scatter_symmetric
from .errors import ContractError, DataError, NumericalError
from .sde import VpSde, feature_entry_mask, pair_mask

CHECKPOINT_FORMAT = "egodiff-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    num_features: int
    hidden_dim: int = 16
    gmh_heads: int = 4
    gmh_out_channels: int = 4
    adjacency_powers: int = 2
    activation: str = "elu"

    def __post_init__(self):
        if self.num_features < 1 or self.hidden_dim < 1:
            raise ContractError("num_features and hidden_dim must be >= 1")
        if self.hidden_dim % self.gmh_heads:
            raise ContractError(
                f"gmh_heads={self.gmh_heads} must divide hidden_dim={self.hidden_dim}")
        if self.adjacency_powers < 1 or self.gmh_out_channels < 1:
            raise ContractError("adjacency_powers and gmh_out_channels must be >= 1")
        if self.activation != "elu":
            raise ContractError("only the ELU activation is supported")


class ParamStore(dict):
    """Ordered name -> float64 array mapping. Insertion order is the manifest order."""

    def copy(self):
        return ParamStore((k, v.copy()) for k, v in self.items())

    def manifest(self):
        return [{"name": k, "shape": list(v.shape), "dtype": "f64"} for k, v in self.items()]

    def flatten(self):
        if not self:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.values()])

    def unflatten(self, flat):
        out, pos = ParamStore(), 0
        for k, v in self.items():
            out[k] = np.asarray(flat[pos:pos + v.size], dtype=np.float64).reshape(v.shape)
            pos += v.size
        return out

    def all_finite(self):
        return all(np.isfinite(v).all() for v in self.values())


def theta_shapes(cfg: ModelConfig):
    f, h = cfg.num_features, cfg.hidden_dim
    return [
        ("gcn.w_adj", (f, h)), ("gcn.w_self", (f, h)), ("gcn.b", (h,)),
        ("mlp0.w", (f + h, h)), ("mlp0.b", (h,)),
        ("mlp1.w", (h, h)), ("mlp1.b", (h,)),
        ("mlp2.w", (h, f)), ("mlp2.b", (f,)),
    ]


def phi_shapes(cfg: ModelConfig):
    f, h, c = cfg.num_features, cfg.hidden_dim, cfg.adjacency_powers
    maps = 2 * cfg.gmh_heads * c
    out = cfg.gmh_out_channels
    return [
        ("gmh.wq", (c, f, h)), ("gmh.wk", (c, f, h)),
        ("gmh.inner0.w", (maps, h)), ("gmh.inner0.b", (h,)),
        ("gmh.inner1.w", (h, out)), ("gmh.inner1.b", (out,)),
        ("mlp0.w", (out + c, h)), ("mlp0.b", (h,)),
        ("mlp1.w", (h, h)), ("mlp1.b", (h,)),
        ("mlp2.w", (h, 1)), ("mlp2.b", (1,)),
    ]


def _init_store(shapes, rng):
    store = ParamStore()
    for name, shape in shapes:
        if name.endswith(".b"):
            store[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[-2])
            store[name] = rng.uniform(-bound, bound, size=shape)
    return store


def init_params(cfg: ModelConfig, rng):
    """Fresh ``(theta, phi)``: weights ~ U(+-1/sqrt(fan_in)), biases zero."""
    return _init_store(theta_shapes(cfg), rng), _init_store(phi_shapes(cfg), rng)


# --------------------------------------------------------------------------
# layers (operate on Tensor parameters; inputs may be plain arrays)
# --------------------------------------------------------------------------

def _as_tensor(v):
    return v if isinstance(v, Tensor) else Tensor(v)


def _check(t, layer):
    if not np.isfinite(t.data).all():
        raise NumericalError(f"non-finite activations in layer '{layer}'")
    return t


def _row_mask(mask):
    return np.asarray(mask, dtype=np.float64)[..., None]


def adjacency_channels(a, powers=2):
    """Stack ``[A, A^2, ..., A^powers]`` along a new axis after the batch axis."""
    chans = [a]
    for _ in range(powers - 1):
        chans.append(chans[-1] @ a)
    return np.stack(chans, axis=-3)


def gcn_layer(x, a, params, mask, prefix="gcn."):
    """``ELU((A + I) X W_adj + X W_self + b)`` with masked rows zeroed."""
    x = _as_tensor(x)
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != x.shape[-2] or a.shape[-2] != a.shape[-1]:
        raise ContractError("gcn_layer: shape mismatch between x and a")
    ax = Tensor(a) @ x + x
    h = (ax @ params[prefix + "w_adj"] + x @ params[prefix + "w_self"]
         + params[prefix + "b"]).elu()
    return _check(h * _row_mask(mask), "gcn")


def real_pairs(mask, include_diag):
    """Flat ``(b, i, j)`` index arrays of real node pairs with ``i < j`` (or ``<=``)."""
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[1]
    iu, ju = np.triu_indices(n, 0 if include_diag else 1)
    keep = mask[:, iu] & mask[:, ju]
    b, k = np.nonzero(keep)
    return b, iu[k], ju[k]


def _pair_maps(x, chans, params, pairs, heads, prefix):
    """Per-pair logit maps, shape ``(P, 2 * heads * C)``.

    For head ``h`` and channel ``c``: the symmetrized scaled query-key logit
    ``s = (q_i.k_j + q_j.k_i) / (2 sqrt(d))`` and its gated copy ``s * A_c[i, j]``.
    """
    wq = params[prefix + "wq"]
    c, _, hdim = wq.shape
    d = hdim // heads
    b, n, f = x.shape
    pb, pi, pj = pairs
    xe = x.reshape(b, 1, n, f)
    q = (xe @ wq).transpose(0, 2, 1, 3).reshape(b * n, c * hdim)
    k = (xe @ params[prefix + "wk"]).transpose(0, 2, 1, 3).reshape(b * n, c * hdim)
    ri, rj = pb * n + pi, pb * n + pj
    p = ri.size
    qi, qj = q.take(ri).reshape(p, c, heads, d), q.take(rj).reshape(p, c, heads, d)
    ki, kj = k.take(ri).reshape(p, c, heads, d), k.take(rj).reshape(p, c, heads, d)
    logits = (qi * kj + qj * ki).sum(axis=-1) * (0.5 / np.sqrt(d))
    gate = chans[pb, :, pi, pj][:, :, None]
    return concat([logits, logits * gate], axis=2).reshape(p, 2 * heads * c)


def _inner_mlp(maps, params, prefix):
    h = (maps @ params[prefix + "inner0.w"] + params[prefix + "inner0.b"]).elu()
    return h @ params[prefix + "inner1.w"] + params[prefix + "inner1.b"]


def gmh_layer(x, adj_channels, params, mask, heads=4, prefix="gmh."):
    """Graph multi-head attention over adjacency channels.

    Per head and channel the layer forms a symmetrized scaled query-key logit
    and its adjacency-gated copy; the ``2 * heads * C`` maps are mixed per node
    pair by a two-layer ELU MLP into the output channels.

    Returns ``(x_out, attn)`` with ``attn`` shaped ``(B, out_channels, N, N)``,
    zero outside real pairs. ``x_out`` is ``None`` unless ``params`` carries
    ``wv``/``bv`` (``ELU(sum_c attn_c X W_v + b_v)``).
    """
    x = _as_tensor(x)
    chans = np.asarray(adj_channels, dtype=np.float64)
    c = params[prefix + "wq"].shape[0]
    if chans.shape[-3] != c:
        raise ContractError(f"gmh_layer expects {c} adjacency channels, got {chans.shape[-3]}")
    b, n, _ = x.shape
    pairs = real_pairs(mask, include_diag=True)
    vals = _check(_inner_mlp(_pair_maps(x, chans, params, pairs, heads, prefix), params, prefix),
                  "gmh")
    out = vals.shape[-1]
    attn = concat([scatter_symmetric(vals[:, ch], (b, n, n), *pairs)
                   .reshape(b, 1, n, n) for ch in range(out)], axis=1)
    x_out = None
    if prefix + "wv" in params:
        agg = attn.sum(axis=1) @ x
        x_out = _check((agg @ params[prefix + "wv"] + params[prefix + "bv"]).elu()
                       * _row_mask(mask), "gmh.node")
    return x_out, attn


def _mlp3(h, params, prefix="mlp"):
    h = (h @ params[prefix + "0.w"] + params[prefix + "0.b"]).elu()
    h = (h @ params[prefix + "1.w"] + params[prefix + "1.b"]).elu()
    return h @ params[prefix + "2.w"] + params[prefix + "2.b"]


def eps_x(x, a, mask, theta):
    """Predicted feature noise, shape ``(B, N, F)``; masked rows zero."""
    h = gcn_layer(x, a, theta, mask)
    out = _mlp3(concat([_as_tensor(x), h], axis=-1), theta)
    return _check(out * _row_mask(mask), "mlp_x")


def eps_a(x, a, mask, phi, cfg: ModelConfig):
    """Predicted adjacency noise, symmetric with zero diagonal, shape ``(B, N, N)``.

    Only real off-diagonal pairs ``i < j`` are evaluated; inputs there are
    symmetric, so mirroring equals explicit ``(S + S^T) / 2`` symmetrization.
    """
    x = _as_tensor(x)
    chans = adjacency_channels(np.asarray(a, dtype=np.float64), cfg.adjacency_powers)
    b, n, _ = x.shape
    pairs = real_pairs(mask, include_diag=False)
    attn = _check(_inner_mlp(_pair_maps(x, chans, phi, pairs, cfg.gmh_heads, "gmh."), phi,
                             "gmh."), "gmh")
    pb, pi, pj = pairs
    feats = concat([attn, Tensor(chans[pb, :, pi, pj])], axis=1)
    out = _mlp3(feats, phi).reshape(-1)
    return _check(scatter_symmetric(out, (b, n, n), *pairs), "mlp_a")


def _batched(x, a, mask):
    x, a, mask = np.asarray(x, float), np.asarray(a, float), np.asarray(mask, bool)
    single = x.ndim == 2
    if single:
        x, a, mask = x[None], a[None], mask[None]
    return single, x, a, mask


def _wrap(store):
    return {k: Tensor(v) for k, v in store.items()}


def _sigma(sde, t, b):
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
    if np.any(t < sde.t_eps) or np.any(t > sde.t_max):
        raise ContractError("t must lie in [t_eps, T]")
    return sde.moments(t)[1]


class ScoreModel:
    """Parameter stores for both score networks plus inference helpers."""

    def __init__(self, cfg: ModelConfig, theta: ParamStore, phi: ParamStore):
        self.config = cfg
        self.theta = theta
        self.phi = phi

    @classmethod
    def init(cls, cfg: ModelConfig, rng):
        return cls(cfg, *init_params(cfg, rng))

    def predict_noise(self, x, a, mask):
        single, x, a, mask = _batched(x, a, mask)
        ex = eps_x(x, a, mask, _wrap(self.theta)).data
        ea = eps_a(x, a, mask, _wrap(self.phi), self.config).data
        return (ex[0], ea[0]) if single else (ex, ea)

    def score_x(self, x, a, mask, t, sde):
        single, x, a, mask = _batched(x, a, mask)
        sig = _sigma(sde, t, x.shape[0])
        out = -eps_x(x, a, mask, _wrap(self.theta)).data / sig[:, None, None]
        return out[0] if single else out

    def score_a(self, x, a, mask, t, sde):
        single, x, a, mask = _batched(x, a, mask)
        sig = _sigma(sde, t, x.shape[0])
        out = -eps_a(x, a, mask, _wrap(self.phi), self.config).data / sig[:, None, None]
        return out[0] if single else out

    def score_fn(self, sde):
        """Callable ``(x, a, mask, t) -> (score_x, score_a)`` for the solvers."""
        theta, phi = _wrap(self.theta), _wrap(self.phi)

        def fn(x, a, mask, t):
            sig = _sigma(sde, t, x.shape[0])[:, None, None]
            return (-eps_x(x, a, mask, theta).data / sig,
                    -eps_a(x, a, mask, phi, self.config).data / sig)

        return fn

    def copy(self):
        return ScoreModel(self.config, self.theta.copy(), self.phi.copy())


def _masked_mse(pred, target, weights):
    """Mean squared error over entries with weight 1 (global count)."""
    count = float(weights.sum())
    if count == 0:
        return Tensor(0.0), 0.0
    diff = pred - target
    return (diff * diff * weights).sum() / count, count


def loss_and_grads(model: ScoreModel, x0, a0, mask, t, z_x, z_a, sde: VpSde,
                   need_grads=True):
    """Denoising score-matching losses with ``lambda(t) = sigma_t^2``.

    With that weighting each objective is the mean of ``|eps_hat - Z|^2`` over
    real entries (features: real rows; adjacency: off-diagonal real pairs).
    ``t``, ``z_x`` and ``z_a`` are explicit draws so the function is
    deterministic. Returns ``(loss_x, loss_a, grads_theta, grads_phi)``.
    """
    x0, a0, mask = np.asarray(x0, float), np.asarray(a0, float), np.asarray(mask, bool)
    t = np.asarray(t, dtype=np.float64)
    m, s = sde.moments(t)
    fm = feature_entry_mask(mask, x0.shape[-1])
    pm = pair_mask(mask)
    z_x = z_x * fm
    z_a = z_a * pm
    xt = m[:, None, None] * x0 * fm + s[:, None, None] * z_x
    at = m[:, None, None] * a0 * pm + s[:, None, None] * z_a

    theta = {k: Tensor(v, requires_grad=need_grads) for k, v in model.theta.items()}
    phi = {k: Tensor(v, requires_grad=need_grads) for k, v in model.phi.items()}
    lx, _ = _masked_mse(eps_x(xt, at, mask, theta), z_x, fm)
    la, _ = _masked_mse(eps_a(xt, at, mask, phi, model.config), z_a, pm)
    loss_x, loss_a = float(lx.data), float(la.data)
    if not (np.isfinite(loss_x) and np.isfinite(loss_a)):
        raise NumericalError(f"non-finite DSM loss (x={loss_x}, a={loss_a})")
    if not need_grads:
        return loss_x, loss_a, None, None
    if lx.requires_grad:
        lx.backward()
    if la.requires_grad:
        la.backward()
    gt = ParamStore((k, np.zeros_like(v) if p.grad is None else p.grad)
                    for (k, v), p in zip(model.theta.items(), theta.values()))
    gp = ParamStore((k, np.zeros_like(v) if p.grad is None else p.grad)
                    for (k, v), p in zip(model.phi.items(), phi.values()))
    return loss_x, loss_a, gt, gp


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(path, model: ScoreModel, sde: VpSde, scaler_std=None, extra=None):
    """Write ``manifest.json`` and ``params.bin`` (little-endian f64, manifest order)."""
    os.makedirs(path, exist_ok=True)
    entries, chunks = [], []
    for prefix, store in (("theta.", model.theta), ("phi.", model.phi)):
        for name, v in store.items():
            entries.append({"name": prefix + name, "shape": list(v.shape), "dtype": "f64"})
            chunks.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "params": entries,
        "model": asdict(model.config),
        "sde": asdict(sde),
        "scaler_std": None if scaler_std is None else [float(v) for v in scaler_std],
        "extra": extra or {},
    }
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(path, "params.bin"), "wb") as fh:
        fh.write(b"".join(chunks))
    return path


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`. Returns ``(model, sde, manifest)``."""
    mpath = os.path.join(path, "manifest.json")
    bpath = os.path.join(path, "params.bin")
    if not (os.path.isfile(mpath) and os.path.isfile(bpath)):
        raise DataError(f"checkpoint directory {path!r} lacks manifest.json or params.bin")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{mpath}: unsupported checkpoint format {manifest.get('format')!r}")
    raw = np.fromfile(bpath, dtype="<f8")
    expected = sum(int(np.prod(e["shape"])) for e in manifest["params"])
    if raw.size != expected:
        raise DataError(f"{bpath}: holds {raw.size} values, manifest expects {expected}")
    theta, phi, pos = ParamStore(), ParamStore(), 0
    for e in manifest["params"]:
        size = int(np.prod(e["shape"]))
        arr = raw[pos:pos + size].astype(np.float64).reshape(e["shape"])
        pos += size
        prefix, name = e["name"].split(".", 1)
        (theta if prefix == "theta" else phi)[name] = arr
    cfg = ModelConfig(**manifest["model"])
    sde = VpSde(**manifest["sde"])
    return ScoreModel(cfg, theta, phi), sde, manifest
