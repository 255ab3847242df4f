"""Latent graph neural SDEs with Monte-Carlo predictive uncertainty."""

from ._kernels import BACKEND
from .autodiff import Adam, Tensor, no_grad
from .graph import NormalizedAdjacency, SparseGraph, gcn_layer, normalize, spmm
from .model import GraphModel, ModelConfig, PredictiveSummary, Task, elbo, mc_predict, predictive_entropy, train
from .sde import TimeGrid, integrate_ode, integrate_sde, kl_path_integral, sample_brownian

__version__ = "0.1.0"
