import numpy as np
import pytest

from gnsde.autodiff import Tensor, add, softmax_rows
from gnsde.baselines import (
    EnsembleModel,
    ensemble_predict,
    gcn_forward,
    gnode_forward,
    make_gcn,
    make_gnode,
    mc_dropout_predict,
)
from gnsde.datasets import gen_voting
from gnsde.graph import SparseGraph, gcn_layer, normalize
from gnsde.model import GraphModel, ModelConfig, PredictiveSummary, Task, dropout_mask, mc_predict, train
from gnsde.sde import TimeGrid

SQUARE = SparseGraph(4, np.array([[0, 1], [1, 2], [2, 3], [3, 0]]))
X = np.random.default_rng(0).uniform(-1, 1, (4, 3))


class TestGcn:
    def test_edgeless_is_mlp(self):
        m = make_gcn(3, 3, hidden=5)
        p = {k: v.data for k, v in m.params.items()}
        mlp = np.tanh(X @ p["encoder.W"] + p["encoder.b"]) @ p["projection.W"] + p["projection.b"]
        np.testing.assert_allclose(gcn_forward(m, X, normalize(SparseGraph(4))).data, mlp, rtol=1e-13)

    def test_permutation_equivariance(self):
        m = make_gcn(3, 3, hidden=5)
        perm = np.array([2, 0, 3, 1])
        xp = np.empty_like(X)
        xp[perm] = X
        out = gcn_forward(m, X, normalize(SQUARE)).data
        outp = gcn_forward(m, xp, normalize(SQUARE.permuted(perm))).data
        np.testing.assert_allclose(outp[perm], out, rtol=1e-12, atol=1e-14)

    def test_training_reduces_loss(self):
        d = gen_voting(90, 0.5, seed=0)
        grid = TimeGrid(0, 1, 1)
        m = make_gcn(2, 3, hidden=16)
        trace = train(m, Tensor(d.features), normalize(d.graph), Task.static(grid, d.labels, d.train_mask), grid, epochs=40)
        assert trace[-1]["loss"] < trace[0]["loss"]
        assert trace[-1]["kl"] == 0.0

    def test_wrong_kind(self):
        with pytest.raises(ValueError):
            gcn_forward(make_gnode(3, 3, latent=4), X, normalize(SQUARE))


class TestGnode:
    def test_zero_drift_is_projection_of_encoding(self):
        m = make_gnode(3, 3, latent=4, hidden_dim=5)
        for k, v in m.params.items():
            if k.startswith("drift"):
                v.data = np.zeros_like(v.data)
        adj = normalize(SQUARE)
        direct = m.project(m.encode(Tensor(X), adj), adj).data
        np.testing.assert_array_equal(gnode_forward(m, X, adj, TimeGrid(0, 1, 7)).data, direct)

    def test_single_unit_step_is_residual_block(self):
        m = make_gnode(3, 3, latent=4, hidden_dim=5)
        adj = normalize(SQUARE)
        p = m.params
        z0 = m.encode(Tensor(X), adj)
        h = concat_time(z0, 0.0)
        f = gcn_layer(adj, gcn_layer(adj, h, p["drift0.W"], p["drift0.b"], "tanh"), p["drift1.W"], p["drift1.b"])
        expected = m.project(add(z0, f), adj).data
        out = gnode_forward(m, X, adj, TimeGrid(0.0, 1.0, 1)).data
        assert np.abs(out - expected).max() < 1e-12


def concat_time(z, t):
    from gnsde.autodiff import concat_cols

    return concat_cols([z, np.full((z.shape[0], 1), t)])


class TestMcDropout:
    def test_mask_expectation(self):
        rng = np.random.default_rng(0)
        rate = 0.3
        act = np.array([1.0, -2.0, 0.5])
        draws = np.stack([dropout_mask(rng, 3, rate) * (1 - rate) * act for _ in range(10_000)])
        np.testing.assert_allclose(draws.mean(axis=0), (1 - rate) * act, atol=0.02)

    def test_inverted_scaling_unbiased(self):
        rng = np.random.default_rng(1)
        m = np.stack([dropout_mask(rng, 4, 0.2) for _ in range(20_000)])
        np.testing.assert_allclose(m.mean(axis=0), 1.0, atol=0.02)

    def test_tiny_rate_zero_variance(self):
        m = make_gnode(3, 3, latent=4, hidden_dim=5, dropout=0.2)
        s = mc_dropout_predict(m, X, normalize(SQUARE), TimeGrid(0, 1, 4), 10, rate=1e-12)
        np.testing.assert_allclose(s.variance, 0.0, atol=1e-30)

    def test_single_pass_zero_variance(self):
        m = make_gcn(3, 3, hidden=5, dropout=0.5)
        s = mc_dropout_predict(m, X, normalize(SQUARE), TimeGrid(0, 1, 1), 1)
        np.testing.assert_array_equal(s.variance, 0.0)

    def test_dropout_gives_spread(self):
        m = make_gcn(3, 3, hidden=5, dropout=0.5)
        s = mc_dropout_predict(m, X, normalize(SQUARE), TimeGrid(0, 1, 1), 20)
        assert s.variance.max() > 0

    def test_reproducible(self):
        m = make_gnode(3, 3, latent=4, hidden_dim=5, dropout=0.3)
        a = mc_dropout_predict(m, X, normalize(SQUARE), TimeGrid(0, 1, 3), 6, seed=4)
        b = mc_dropout_predict(m, X, normalize(SQUARE), TimeGrid(0, 1, 3), 6, seed=4)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_rate_zero_model_equals_deterministic(self):
        det = make_gnode(3, 3, latent=4, hidden_dim=5)
        adj, grid = normalize(SQUARE), TimeGrid(0, 1, 3)
        s = mc_predict(det, X, adj, grid, 3)
        np.testing.assert_allclose(s.probs, softmax_rows(gnode_forward(det, X, adj, grid)).data, rtol=1e-15)
        np.testing.assert_allclose(s.variance, 0.0, atol=1e-30)

    @pytest.mark.parametrize("rate", [0.0, 1.0, -0.1])
    def test_invalid_rate(self, rate):
        with pytest.raises(ValueError):
            mc_dropout_predict(make_gcn(3, 3, hidden=5), X, normalize(SQUARE), TimeGrid(0, 1, 1), 2, rate=rate)


class TestEnsemble:
    def test_identical_members(self):
        m = make_gcn(3, 3, hidden=5)
        s = ensemble_predict([m, m], X, normalize(SQUARE), TimeGrid(0, 1, 1))
        np.testing.assert_array_equal(s.variance, 0.0)
        np.testing.assert_allclose(s.probs, softmax_rows(gcn_forward(m, X, normalize(SQUARE))).data, rtol=1e-15)

    def test_two_regressors(self):
        s = PredictiveSummary.from_samples(np.array([[2.0], [4.0]]), categorical=False)
        assert s.mean[0] == 3.0 and s.variance[0] == 1.0

    def test_regression_members(self):
        ms = [GraphModel(ModelConfig(3, 1, kind="gcn", head="gaussian", hidden_dim=4, init_seed=i)) for i in range(2)]
        for m, c in zip(ms, (2.0, 4.0)):
            m.params["projection.W"].data[:] = 0.0
            m.params["projection.b"].data[:] = c
        s = ensemble_predict(ms, X, normalize(SQUARE), TimeGrid(0, 1, 1))
        np.testing.assert_array_equal(s.mean, 3.0)
        np.testing.assert_array_equal(s.variance, 1.0)

    def test_normalized_and_order_invariant(self):
        ens = EnsembleModel(ModelConfig(3, 3, kind="gcn", hidden_dim=5), k=5)
        adj, grid = normalize(SQUARE), TimeGrid(0, 1, 1)
        a = ensemble_predict(ens.members, X, adj, grid)
        b = ensemble_predict(ens.members[::-1], X, adj, grid)
        np.testing.assert_allclose(a.probs.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(a.probs, b.probs, rtol=1e-14)
        assert len({m.params["encoder.W"].data.tobytes() for m in ens.members}) == 5

    def test_needs_two(self):
        with pytest.raises(ValueError):
            EnsembleModel(ModelConfig(3, 3, kind="gcn"), k=1)
        with pytest.raises(ValueError):
            ensemble_predict([make_gcn(3, 3)], X, normalize(SQUARE), TimeGrid(0, 1, 1))
