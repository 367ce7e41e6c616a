import numpy as np
import pytest

from egodiff.ego import EgoConfig, build_batch, extract_ego
from egodiff.graph import SparseNetwork
from egodiff.io import SynthConfig, generate_synthetic
from egodiff.model import ModelConfig, ParamStore, ScoreModel, load_checkpoint
from egodiff.sde import VpSde
from egodiff.train import (AdamState, TrainConfig, adam_update, draw_hyperparameters, dsm_step,
                           standardize_features, train)

SDE = VpSde()


def _net(features):
    f = np.asarray(features, dtype=float)
    return SparseNetwork(len(f), [(i, i + 1) for i in range(len(f) - 1)], f)


def test_standardize_examples():
    net, sc = standardize_features(_net([[0.0, 5.0], [2.0, 5.0], [0.0, 5.0], [2.0, 5.0]]))
    assert net.features[:, 0].std() == pytest.approx(1.0)
    np.testing.assert_array_equal(net.features[:, 1], 5.0)
    np.testing.assert_array_equal(sc.constant, [False, True])


def test_standardize_idempotent(rng):
    net, _ = standardize_features(_net(rng.standard_normal((30, 4)) * [1, 3, 0.1, 10]))
    _, sc2 = standardize_features(net)
    np.testing.assert_allclose(sc2.std, 1.0, atol=1e-9)


def test_draw_hyperparameters():
    cfg = TrainConfig(lr_grid=(0.05,), hidden_dim_grid=(12,), alpha_grid=(0.2,))
    hp = draw_hyperparameters(cfg, 3)
    assert (hp.lr, hp.hidden_dim, hp.alpha) == (0.05, 12, 0.2)
    cfg = TrainConfig(seed=4)
    assert draw_hyperparameters(cfg, 1) == draw_hyperparameters(cfg, 1)


def test_draw_hyperparameters_uniform():
    cfg = TrainConfig()
    draws = [draw_hyperparameters(cfg, i).lr for i in range(10000)]
    sigma = np.sqrt(10000 * (1 / 3) * (2 / 3))
    for v in cfg.lr_grid:
        assert abs(draws.count(v) - 10000 / 3) < 3 * sigma


def _batch(rng, pad=0):
    net = generate_synthetic(SynthConfig(num_nodes=60, p_in=0.2, structural_fraction=0.1, clique_size=4, seed=1))
    egos = [extract_ego(net, int(v), 1) for v in rng.choice(60, 8, replace=False)]
    b = build_batch(egos)
    if pad:
        b = type(b)(np.pad(b.x, ((0, 0), (0, pad), (0, 0))),
                    np.pad(b.a, ((0, 0), (0, pad), (0, pad))),
                    np.pad(b.mask, ((0, 0), (0, pad))), b.centers,
                    np.pad(b.node_ids, ((0, 0), (0, pad)), constant_values=-1))
    return b


def test_oracle_network_has_zero_loss(rng):
    lx, la, _, _ = dsm_step(None, _batch(rng), SDE, rng, oracle_hook=lambda zx, za: (zx, za))
    assert lx == 0.0 and la == 0.0


def test_zero_network_loss_near_one(rng):
    b = _batch(rng)
    vals = [sum(dsm_step(None, b, SDE, rng, oracle_hook=lambda zx, za: (0 * zx, 0 * za))[:2])
            / 2 for _ in range(200)]
    assert np.mean(vals) == pytest.approx(1.0, abs=0.05)


def test_loss_invariant_to_padding():
    rng = np.random.default_rng(0)
    model = ScoreModel.init(ModelConfig(num_features=8, hidden_dim=8), rng)
    b0, b1 = _batch(np.random.default_rng(5)), _batch(np.random.default_rng(5), pad=3)
    t = np.linspace(0.1, 0.9, len(b0))
    from egodiff.model import loss_and_grads
    from egodiff.solvers import NoiseSource
    n0 = NoiseSource([np.random.default_rng(i) for i in range(len(b0))], b0.mask, 8)
    n1 = NoiseSource([np.random.default_rng(i) for i in range(len(b1))], b1.mask, 8)
    l0 = loss_and_grads(model, b0.x, b0.a, b0.mask, t, n0.features(), n0.adjacency(), SDE)
    l1 = loss_and_grads(model, b1.x, b1.a, b1.mask, t, n1.features(), n1.adjacency(), SDE)
    assert l0[0] == pytest.approx(l1[0], rel=1e-12)
    assert l0[1] == pytest.approx(l1[1], rel=1e-12)
    for k in l0[2]:
        np.testing.assert_allclose(l0[2][k], l1[2][k], rtol=1e-9, atol=1e-14)


def test_adam_first_step():
    p = ParamStore(w=np.array([1.0, -2.0]))
    g = ParamStore(w=np.array([0.3, -5.0]))
    adam_update(p, g, AdamState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_allclose(p["w"], [1.0 - 0.1, -2.0 + 0.1], rtol=1e-6)


def test_adam_zero_grad_and_decay():
    p = ParamStore(w=np.array([1.0, -2.0]))
    zero = ParamStore(w=np.zeros(2))
    adam_update(p, zero, AdamState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    adam_update(p, zero, AdamState(), lr=0.1, weight_decay=0.01)
    np.testing.assert_allclose(p["w"], np.array([1.0, -2.0]) * (1 - 0.001))


def _small_cfg(**kw):
    base = dict(epochs=3, batch_size=16, lr=0.01, hidden_dim=8, seed=2, ego=EgoConfig(1, 8))
    base.update(kw)
    return TrainConfig(**base)


def test_train_reproducible(tmp_path):
    net, sc = standardize_features(generate_synthetic(SynthConfig(num_nodes=40, structural_fraction=0.125, clique_size=5, seed=3)))
    r1 = train(net, _small_cfg(), out_dir=tmp_path / "a", scaler=sc)
    r2 = train(net, _small_cfg(), out_dir=tmp_path / "b", scaler=sc)
    assert r1.losses == r2.losses
    assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()
    for p in r1.model.theta.values():
        assert np.isfinite(p).all()


def test_zero_epochs_is_initialization(tmp_path):
    net, _ = standardize_features(generate_synthetic(SynthConfig(num_nodes=40, structural_fraction=0.125, clique_size=5, seed=3)))
    res = train(net, _small_cfg(epochs=0), out_dir=tmp_path)
    init = ScoreModel.init(ModelConfig(net.num_features, 8), np.random.default_rng(2))
    loaded, _, _ = load_checkpoint(res.checkpoint)
    for k in init.theta:
        assert np.array_equal(init.theta[k], loaded.theta[k])
    for k in init.phi:
        assert np.array_equal(init.phi[k], loaded.phi[k])
    assert res.losses == []
