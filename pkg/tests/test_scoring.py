import numpy as np
import pytest

from egodiff.ego import EgoConfig, extract_ego
from egodiff.errors import ContractError
from egodiff.graph import DenseEgoGraph
from egodiff.io import SynthConfig, generate_synthetic
from egodiff.model import ModelConfig, ScoreModel
from egodiff.scoring import (ScoringConfig, aggregate_scores, energy_histogram_data,
                             energy_shift, matrix_distance, node_score, penalty_weights,
                             reconstruct, reconstruction_levels, score_all, solver_error_profile)
from egodiff.sde import VpSde
from egodiff.solvers import SolverConfig
from egodiff.train import standardize_features

SDE = VpSde()
EGO = EgoConfig(1, 6)


@pytest.fixture(scope="module")
def setup():
    net, _ = standardize_features(generate_synthetic(
        SynthConfig(num_nodes=40, p_in=0.3, structural_fraction=0.125, clique_size=5, seed=2)))
    model = ScoreModel.init(ModelConfig(net.num_features, 8), np.random.default_rng(0))
    return net, model


def _g(x, a):
    x = np.asarray(x, float).reshape(len(x), -1)
    return DenseEgoGraph(x, np.asarray(a, float), np.ones(len(x), bool))


K2 = [[0, 1], [1, 0]]


def test_levels():
    np.testing.assert_allclose(reconstruction_levels(4), [0.2, 0.4, 0.6, 0.8])
    assert reconstruction_levels(1) == [0.5]
    assert all(0 < t < 2 for t in reconstruction_levels(7, 2.0))
    with pytest.raises(ContractError):
        reconstruction_levels(0)


def test_matrix_distance_examples():
    g = _g([1, 0], K2)
    assert matrix_distance(g, g, 0.5) == 0.0
    h = _g([0, 0], np.zeros((2, 2)))
    assert matrix_distance(g, h, 0.5) == pytest.approx(0.5 * np.sqrt(2) / 4 + 0.5 * 0.5)
    assert matrix_distance(g, h, 1.0) == pytest.approx(0.5)
    assert matrix_distance(g, h, 0.5) == matrix_distance(h, g, 0.5)


def test_energy_shift_examples():
    g = _g([1, -1], K2)
    assert energy_shift(g, g) == 0.0
    assert energy_shift(g, _g([1, -1], np.zeros((2, 2)))) == pytest.approx(2.0)
    assert energy_shift(g, _g([0, 0], K2)) == pytest.approx(2.0)


def test_penalties_and_aggregation():
    taus = reconstruction_levels(4)
    snr = SDE.snr(np.array(taus))
    ones = np.ones((1, 4, 3))
    assert aggregate_scores(ones, penalty_weights(taus, "none", SDE))[0] == 12.0
    assert aggregate_scores(ones, penalty_weights(taus, "snr", SDE))[0] == pytest.approx(
        3 * snr.sum())
    np.testing.assert_allclose(penalty_weights(taus, "sqrt_snr", SDE), np.sqrt(snr))
    d = np.random.default_rng(0).random((10, 4, 3))
    w = penalty_weights(taus, "snr", SDE)
    np.testing.assert_allclose(aggregate_scores(2.5 * d, w), 2.5 * aggregate_scores(d, w))
    with pytest.raises(ContractError):
        penalty_weights(taus, "log", SDE)


def test_reconstruct_near_zero_is_closer(setup):
    net, model = setup
    rng = np.random.default_rng(1)
    near, far = [], []
    for v in range(40):
        g = extract_ego(net, v, 1)
        near.append(matrix_distance(g, reconstruct(g, 1e-5, model, SDE, SolverConfig(), rng), .5))
        far.append(matrix_distance(g, reconstruct(g, 0.8, model, SDE, SolverConfig(), rng), .5))
    assert np.mean(near) < np.mean(far)


def test_reconstruct_deterministic(setup):
    net, model = setup
    g = extract_ego(net, 3, 1)
    r1 = reconstruct(g, 0.4, model, SDE, SolverConfig(), np.random.default_rng(5))
    r2 = reconstruct(g, 0.4, model, SDE, SolverConfig(), np.random.default_rng(5))
    assert np.array_equal(r1.x, r2.x) and np.array_equal(r1.a, r2.a)


def test_score_all_contract(setup):
    net, model = setup
    cfg = ScoringConfig(levels=2, samples_per_level=2, batch_size=16)
    rep = score_all(net, model, SDE, EGO, cfg)
    s = rep.scores
    assert s.shape == (40,) and np.all(np.isfinite(s)) and np.all(s >= 0)
    assert sorted(rep.ranking().tolist()) == list(range(40))
    assert np.all(np.diff(s[rep.ranking()]) <= 0)
    # per-node streams: batching and subsetting do not change a node's score
    rep2 = score_all(net, model, SDE, EGO, ScoringConfig(levels=2, samples_per_level=2,
                                                          batch_size=7))
    assert np.array_equal(rep.err_x, rep2.err_x)
    assert node_score(net, 11, model, SDE, EGO, cfg) == pytest.approx(s[11], rel=1e-12)
    e = rep.with_options(dissimilarity="energy").dissimilarity
    assert np.all((e >= 0) & (e <= 2))


def test_single_term_score(setup):
    net, model = setup
    cfg = ScoringConfig(levels=1, samples_per_level=1, penalty="none")
    rep = score_all(net, model, SDE, EGO, cfg, nodes=[0, 1])
    np.testing.assert_allclose(rep.scores, rep.dissimilarity[:, 0, 0])


def test_ranking_ties():
    from egodiff.scoring import ScoreReport
    z = np.zeros((3, 1, 1))
    rep = ScoreReport(np.array([5, 2, 9]), np.array([0.5]), np.array([1.0]), z, z,
                      np.zeros(3), z, z.astype(bool), z.astype(bool), 0.5, "matrix")
    np.testing.assert_array_equal(rep.ranking(), [2, 5, 9])


def test_feature_mismatch(setup):
    net, _ = setup
    model = ScoreModel.init(ModelConfig(3, 8), np.random.default_rng(0))
    with pytest.raises(ContractError):
        score_all(net, model, SDE, EGO, ScoringConfig())


def test_energy_records(setup):
    net, model = setup
    rec = energy_histogram_data(net, model, SDE, EGO, ScoringConfig(levels=2,
                                                                     samples_per_level=3),
                                nodes=[0, 1, 2, 3])
    assert len(rec) == 4 * 2 * 3
    for _, _, _, eo, er, d in rec:
        assert 0 <= eo <= 2 and 0 <= er <= 2 and -2 <= d <= 2


def test_solver_profile_shape(setup):
    net, model = setup
    kinds = ["em", "reverse", "em+langevin", "reverse+langevin"]
    rows = solver_error_profile(net, model, SDE, EGO, kinds, [0.2, 0.4, 0.6, 0.8], [0, 1])
    assert len(rows) == 16
    assert all(ex >= 0 and ea >= 0 for _, _, ex, ea in rows)
