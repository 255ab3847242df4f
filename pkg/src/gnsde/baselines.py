"""Comparison models: plain GCN, GN-ODE, MC-dropout variants, deep ensemble."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .autodiff import Tensor, no_grad, softmax_rows
from .model import GraphModel, ModelConfig, PredictiveSummary, TrainConfig, mc_predict, train
from .sde import TimeGrid


def make_gcn(in_dim: int, out_dim: int, hidden: int = 64, **kw) -> GraphModel:
    return GraphModel(ModelConfig(in_dim, out_dim, kind="gcn", hidden_dim=hidden, **kw))


def make_gnode(in_dim: int, out_dim: int, latent: int = 64, **kw) -> GraphModel:
    return GraphModel(ModelConfig(in_dim, out_dim, kind="gnode", latent_dim=latent, **kw))


def gcn_forward(model: GraphModel, X, adj) -> Tensor:
    """Logits of a two-layer GCN (tanh hidden)."""
    if model.kind != "gcn":
        raise ValueError("gcn_forward needs a 'gcn' model")
    X = X if isinstance(X, Tensor) else Tensor(X)
    return model.forward(X, adj, TimeGrid(0.0, 1.0, 1)).outputs[0]


def gnode_forward(model: GraphModel, X, adj, grid: TimeGrid) -> Tensor:
    """Logits after Euler integration of the GCN drift from the encoding."""
    if model.kind != "gnode":
        raise ValueError("gnode_forward needs a 'gnode' model")
    X = X if isinstance(X, Tensor) else Tensor(X)
    return model.forward(X, adj, grid).outputs[0]


def mc_dropout_predict(model: GraphModel, X, adj, grid: TimeGrid, n_samples: int = 50, rate: float | None = None, seed: int = 0, readout=None) -> PredictiveSummary:
    """N passes with dropout left on at inference.

    ``rate`` overrides the model's own dropout rate for prediction only.
    """
    rate = model.config.dropout if rate is None else rate
    if not 0.0 < rate < 1.0:
        raise ValueError(f"dropout rate must lie in (0, 1), got {rate}")
    if rate != model.config.dropout:
        model = GraphModel(replace(model.config, dropout=rate), model.params)
    return mc_predict(model, X, adj, grid, n_samples, seed, readout)


class EnsembleModel:
    """K independently initialised and trained copies of one architecture."""

    def __init__(self, config: ModelConfig, k: int = 5):
        if k < 2:
            raise ValueError("an ensemble needs at least two members")
        self.members = [GraphModel(replace(config, init_seed=config.init_seed + i)) for i in range(k)]

    @property
    def config(self) -> ModelConfig:
        return self.members[0].config

    def fit(self, X, adj, task, grid, epochs: int, optimizer: TrainConfig | dict | None = None, seed: int = 0) -> list:
        return [train(m, X, adj, task, grid, epochs, optimizer, seed + 1000 * i) for i, m in enumerate(self.members)]

    def predict(self, X, adj, grid: TimeGrid, readout=None) -> PredictiveSummary:
        return ensemble_predict(self.members, X, adj, grid, readout)


def ensemble_predict(members, X, adj, grid: TimeGrid, readout=None) -> PredictiveSummary:
    """Average member outputs: class probabilities, or regression means."""
    members = list(members)
    if len(members) < 2:
        raise ValueError("ensemble_predict needs at least two members")
    X = X if isinstance(X, Tensor) else Tensor(X)
    categorical = members[0].config.head == "categorical"
    ro = [grid.steps] if readout is None else readout
    draws = []
    with no_grad():
        for m in members:
            outs = m.forward(X, adj, grid, ro, with_kl=False).outputs
            draws.append(np.stack([softmax_rows(o).data if categorical else o.data for o in outs]))
    samples = np.stack(draws)
    if readout is None:
        samples = samples[:, 0]
    return PredictiveSummary.from_samples(samples, categorical)
