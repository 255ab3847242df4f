"""Latent graph neural SDE and its deterministic relatives.

One class covers the three model kinds so they share encoder and projection
code and differ only in the dynamics between them:

* ``gnsde``  encoder -> posterior SDE (GCN drift, constant diffusion) -> projection
* ``gnode``  encoder -> Euler-integrated GCN drift -> projection
* ``gcn``    GCN encoder (tanh) -> projection, no dynamics
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import (
    Adam,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    add_row,
    concat_cols,
    cross_entropy,
    gather,
    glorot_uniform,
    matmul,
    mul,
    no_grad,
    scale,
    softmax_rows,
    square,
    tsum,
)
from .graph import NormalizedAdjacency, activation, gcn_layer
from .sde import (
    TimeGrid,
    integrate_ode,
    integrate_sde,
    kl_path_integral,
    sample_brownian,
)

log = logging.getLogger(__name__)

KINDS = ("gnsde", "gnode", "gcn")
HEADS = ("categorical", "gaussian")


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, msg: str = "non-finite loss"):
        super().__init__(f"epoch {epoch}: {msg}")
        self.epoch = epoch


@dataclass
class ModelConfig:
    in_dim: int
    out_dim: int
    kind: str = "gnsde"
    head: str = "categorical"
    latent_dim: int = 64
    hidden_dim: int = 64
    encoder: str = "gcn"
    projection: str = "gcn"
    drift_layers: int = 2
    time_channel: bool = True
    sigma: float = 1.0
    prior_const: float = 0.0
    prior_decay: float = 0.0  # prior drift is prior_const - prior_decay * z
    dropout: float = 0.0
    obs_var: float = 0.25
    init_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.encoder not in ("linear", "gcn") or self.projection not in ("linear", "gcn"):
            raise ValueError("encoder/projection must be 'linear' or 'gcn'")
        if self.kind == "gnsde" and not self.sigma > 0:
            raise ValueError("diffusion sigma must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.drift_layers < 1:
            raise ValueError("drift needs at least one layer")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown model fields: {', '.join(sorted(extra))}")
        return cls(**d)


@dataclass
class Task:
    """What the likelihood sees: targets at grid indices ``readout``.

    ``targets`` and ``mask`` have shape (len(readout), n); for static tasks
    the single readout is the last grid index.
    """

    readout: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.readout = np.asarray(self.readout, dtype=np.int64).reshape(-1)
        self.targets = np.asarray(self.targets).reshape(len(self.readout), -1)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(self.targets.shape)

    @classmethod
    def static(cls, grid: TimeGrid, labels, mask) -> "Task":
        return cls([grid.steps], np.asarray(labels)[None, :], np.asarray(mask)[None, :])

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass
class PredictiveSummary:
    """Monte-Carlo predictive statistics.

    ``samples`` holds one output per path: class probabilities for the
    categorical head, predicted means for the gaussian head.
    """

    samples: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    probs: np.ndarray | None = None
    entropy: np.ndarray | None = None

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def from_samples(cls, samples: np.ndarray, categorical: bool) -> "PredictiveSummary":
        samples = np.asarray(samples, dtype=np.float64)
        mean = samples.mean(axis=0)
        variance = ((samples - mean) ** 2).mean(axis=0)
        if not categorical:
            return cls(samples, mean, variance)
        return cls(samples, mean, variance, probs=mean, entropy=predictive_entropy(mean))


def predictive_entropy(probs) -> np.ndarray:
    """Row entropy ``-sum p log p`` with 0 log 0 = 0."""
    p = np.asarray(probs.data if isinstance(probs, Tensor) else probs, dtype=np.float64)
    if (p < -1e-12).any() or np.abs(p.sum(axis=-1) - 1.0).max() > 1e-6:
        raise ValueError("predictive_entropy: rows must be probability vectors")
    p = np.clip(p, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return np.maximum(-terms.sum(axis=-1), 0.0)


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout mask: Bernoulli(1 - rate) keeps scaled by 1 / (1 - rate)."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


@dataclass
class Forward:
    outputs: list  # raw projection output per readout index
    path: object = None
    kl: Tensor | None = None


class GraphModel:
    def __init__(self, config: ModelConfig, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params()

    # ------------------------------------------------------------------ setup
    def _init_params(self) -> dict:
        c = self.config
        rng = np.random.default_rng(c.init_seed)
        p = {}

        def dense(name, fan_in, fan_out):
            p[f"{name}.W"] = glorot_uniform(rng, fan_in, fan_out, name=f"{name}.W")
            p[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b")

        width = c.hidden_dim if c.kind == "gcn" else c.latent_dim
        dense("encoder", c.in_dim, width)
        if c.kind != "gcn":
            dims = [c.latent_dim + int(c.time_channel)] + [c.hidden_dim] * (c.drift_layers - 1) + [c.latent_dim]
            for i in range(c.drift_layers):
                dense(f"drift{i}", dims[i], dims[i + 1])
        dense("projection", width, c.out_dim)
        return p

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def latent_width(self) -> int:
        return self.config.hidden_dim if self.kind == "gcn" else self.config.latent_dim

    def parameters(self) -> list:
        return [self.params[k] for k in sorted(self.params)]

    def copy(self) -> "GraphModel":
        cfg = ModelConfig(**asdict(self.config))
        return GraphModel(cfg, {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()})

    # --------------------------------------------------------------- pieces
    def _dense(self, name, adj, x, use_graph: bool, act=None):
        W, b = self.params[f"{name}.W"], self.params[f"{name}.b"]
        if use_graph:
            return gcn_layer(adj, x, W, b, act)
        if x.shape[1] != W.shape[0]:
            raise ShapeError(f"{name}: features {x.shape} do not fit weights {W.shape}")
        return activation(act)(add_row(matmul(x, W), b))

    def _maybe_drop(self, h: Tensor, masks: dict | None, key: str) -> Tensor:
        if masks is None or key not in masks:
            return h
        return mul(h, Tensor(masks[key]))

    def encode(self, X: Tensor, adj: NormalizedAdjacency, masks: dict | None = None) -> Tensor:
        if X.data.ndim != 2 or X.shape[0] != adj.n:
            raise ShapeError(f"encode: features {X.shape} do not match a {adj.n}-node graph")
        if self.kind == "gcn":
            h = self._dense("encoder", adj, X, True, "tanh")
            return self._maybe_drop(h, masks, "encoder")
        return self._dense("encoder", adj, X, self.config.encoder == "gcn")

    def posterior_drift(self, z: Tensor, t: float, adj: NormalizedAdjacency, masks: dict | None = None) -> Tensor:
        """GCN stack over ``[z, t]``; tanh on hidden layers, linear output."""
        c = self.config
        if z.data.ndim != 2 or z.shape != (adj.n, c.latent_dim):
            raise ShapeError(f"drift: latent {z.shape} does not match ({adj.n}, {c.latent_dim})")
        h = concat_cols([z, np.full((adj.n, 1), float(t))]) if c.time_channel else z
        for i in range(c.drift_layers):
            last = i == c.drift_layers - 1
            h = self._dense(f"drift{i}", adj, h, True, None if last else "tanh")
            if not last:
                h = self._maybe_drop(h, masks, f"drift{i}")
        return h

    def prior_drift(self):
        c = self.config
        if c.prior_decay == 0.0 and c.prior_const == 0.0:
            return None
        if c.prior_decay == 0.0:
            return lambda z, t: Tensor(np.full(z.shape, c.prior_const))
        return lambda z, t: add(scale(z, -c.prior_decay), c.prior_const)

    def project(self, z: Tensor, adj: NormalizedAdjacency) -> Tensor:
        return self._dense("projection", adj, z, self.config.projection == "gcn")

    def sample_masks(self, rng: np.random.Generator | None, n: int) -> dict | None:
        rate = self.config.dropout
        if rng is None or rate == 0.0:
            return None
        if self.kind == "gcn":
            return {"encoder": dropout_mask(rng, (n, self.config.hidden_dim), rate)}
        return {
            f"drift{i}": dropout_mask(rng, (n, self.config.hidden_dim), rate)
            for i in range(self.config.drift_layers - 1)
        }

    # -------------------------------------------------------------- forward
    def forward(
        self,
        X: Tensor,
        adj: NormalizedAdjacency,
        grid: TimeGrid,
        readout=None,
        seed: int = 0,
        dropout_rng: np.random.Generator | None = None,
        with_kl: bool = True,
        sigma: float | None = None,
    ) -> Forward:
        """Run encoder, dynamics and projection; outputs are raw (pre-softmax).

        ``dropout_rng`` switches dropout on (masks are drawn once per pass and
        shared by every solver step). ``sigma`` overrides the diffusion.
        """
        readout = [grid.steps] if readout is None else [int(r) for r in np.atleast_1d(readout)]
        masks = self.sample_masks(dropout_rng, adj.n)
        z0 = self.encode(X, adj, masks)
        if self.kind == "gcn":
            out = self.project(z0, adj)
            return Forward([out] * len(readout))

        def drift(z, t):
            return self.posterior_drift(z, t, adj, masks)

        kl = None
        if self.kind == "gnode":
            path = integrate_ode(z0, grid, drift)
        else:
            g = self.config.sigma if sigma is None else float(sigma)
            bm = sample_brownian(grid, z0.shape, seed)
            path = integrate_sde(z0, grid, drift, g, bm)
            if with_kl:
                kl = kl_path_integral(path, None, self.prior_drift(), g)
        outs = {}
        for r in readout:
            if r not in outs:
                outs[r] = self.project(path.states[r], adj)
        return Forward([outs[r] for r in readout], path, kl)

    # ----------------------------------------------------------------- I/O
    def save(self, path) -> None:
        arrays = {f"param/{k}": v.data for k, v in self.params.items()}
        meta = {"model_kind": self.kind, "config": asdict(self.config)}
        arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "GraphModel":
        with np.load(Path(path), allow_pickle=False) as npz:
            meta = json.loads(bytes(npz["__meta__"]).decode())
            params = {
                k[len("param/"):]: Tensor(npz[k], requires_grad=True, name=k[len("param/"):])
                for k in npz.files
                if k.startswith("param/")
            }
        return cls(ModelConfig.from_dict(meta["config"]), params)



def save_checkpoint(models, path, name: str | None = None) -> None:
    """One npz holding every member of a (possibly single-model) ensemble."""
    models = list(models)
    arrays = {}
    for i, m in enumerate(models):
        arrays.update({f"member{i}/param/{k}": v.data for k, v in m.params.items()})
    meta = {"name": name or models[0].kind, "members": [asdict(m.config) for m in models]}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[str, list]:
    """Inverse of ``save_checkpoint``; also accepts a single ``GraphModel.save`` file."""
    with np.load(Path(path), allow_pickle=False) as npz:
        meta = json.loads(bytes(npz["__meta__"]).decode())
        if "members" not in meta:
            return meta["model_kind"], [GraphModel.load(path)]
        models = []
        for i, cfg in enumerate(meta["members"]):
            prefix = f"member{i}/param/"
            params = {k[len(prefix):]: Tensor(npz[k], requires_grad=True, name=k[len(prefix):]) for k in npz.files if k.startswith(prefix)}
            models.append(GraphModel(ModelConfig.from_dict(cfg), params))
    return meta["name"], models

def _gaussian_nll_tensor(outputs: list, task: Task, var: float) -> Tensor:
    total = None
    for r, out in enumerate(outputs):
        rows = np.flatnonzero(task.mask[r])
        if rows.size == 0:
            continue
        mu = gather(out, (rows, np.zeros_like(rows)))
        err = tsum(square(add(mu, -task.targets[r, rows].astype(np.float64))))
        total = err if total is None else add(total, err)
    m = task.count
    return add(scale(total, 1.0 / (2.0 * var * m)), 0.5 * np.log(2.0 * np.pi * var))


def _categorical_nll_tensor(outputs: list, task: Task) -> Tensor:
    total = None
    m = task.count
    for r, out in enumerate(outputs):
        mask = task.mask[r]
        if not mask.any():
            continue
        ce = scale(cross_entropy(softmax_rows(out), task.targets[r].astype(np.int64), mask), mask.sum() / m)
        total = ce if total is None else add(total, ce)
    return total


def elbo(model: GraphModel, X: Tensor, adj: NormalizedAdjacency, task: Task, grid: TimeGrid, seed: int = 0, dropout_rng=None):
    """Single-path negative ELBO per observed target.

    loss = (sum of -log p(target | projected latent) + KL path integral) / m,
    with m the number of observed targets; dividing by m only rescales the
    bound. Returns ``(loss, diagnostics)``.
    """
    if task.count == 0:
        raise ValueError("elbo: empty observation mask")
    fw = model.forward(X, adj, grid, task.readout, seed=seed, dropout_rng=dropout_rng)
    if model.config.head == "categorical":
        nll = _categorical_nll_tensor(fw.outputs, task)
    else:
        nll = _gaussian_nll_tensor(fw.outputs, task, model.config.obs_var)
    loss = nll
    kl_value = 0.0
    if fw.kl is not None:
        loss = add(nll, scale(fw.kl, 1.0 / task.count))
        kl_value = fw.kl.item()
    diag = {"loss": loss.item(), "nll": nll.item(), "kl": kl_value, "kl_scaled": kl_value / task.count}
    return loss, diag


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class Trainer:
    """Holds optimizer state so training can resume (active learning)."""

    model: GraphModel
    cfg: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        self.opt = Adam(self.model.parameters(), self.cfg.lr, self.cfg.betas, self.cfg.eps)
        self.rng = np.random.default_rng(self.seed)
        self.epoch = 0

    def run(self, X, adj, task, grid, epochs: int | None = None) -> list:
        epochs = self.cfg.epochs if epochs is None else epochs
        trace = []
        for _ in range(epochs):
            bseed = int(self.rng.integers(2**63))
            drop_rng = np.random.default_rng(int(self.rng.integers(2**63))) if self.model.config.dropout else None
            self.opt.zero_grad()
            try:
                loss, diag = elbo(self.model, X, adj, task, grid, seed=bseed, dropout_rng=drop_rng)
                loss.backward()
                self.opt.step()
            except (NonFiniteError, FloatingPointError) as exc:
                raise TrainingDiverged(self.epoch, str(exc)) from exc
            if not np.isfinite(diag["loss"]):
                raise TrainingDiverged(self.epoch)
            trace.append({"epoch": self.epoch, **diag})
            log.debug("epoch %d loss %.6f nll %.6f kl %.6f", self.epoch, diag["loss"], diag["nll"], diag["kl"])
            self.epoch += 1
        return trace


def train(model, X, adj, task, grid, epochs: int = 100, optimizer: TrainConfig | dict | None = None, seed: int = 0) -> list:
    """Adam on the single-path ELBO, fresh Brownian seed every epoch."""
    cfg = optimizer if isinstance(optimizer, TrainConfig) else TrainConfig.from_dict(optimizer or {})
    return Trainer(model, cfg, seed).run(X, adj, task, grid, epochs)


def mc_predict(model: GraphModel, X, adj, grid: TimeGrid, n_samples: int = 50, base_seed: int = 0, readout=None, sigma: float | None = None) -> PredictiveSummary:
    """Monte-Carlo posterior predictive over ``n_samples`` stochastic passes.

    Pass ``k`` (1-based) uses Brownian seed ``base_seed + k``; dropout models
    draw their masks from the same seed. Without ``readout`` the summary is
    static, shaped (n, ...); with it, shaped (len(readout), n, ...).
    """
    if n_samples < 1:
        raise ValueError("mc_predict needs at least one sample")
    X = X if isinstance(X, Tensor) else Tensor(X)
    categorical = model.config.head == "categorical"
    ro = [grid.steps] if readout is None else readout
    draws = []
    with no_grad():
        for k in range(1, n_samples + 1):
            drop_rng = np.random.default_rng(base_seed + k) if model.config.dropout else None
            fw = model.forward(X, adj, grid, ro, seed=base_seed + k, dropout_rng=drop_rng, with_kl=False, sigma=sigma)
            outs = [softmax_rows(o).data if categorical else o.data for o in fw.outputs]
            draws.append(np.stack(outs))
    samples = np.stack(draws)
    if readout is None:
        samples = samples[:, 0]
    return PredictiveSummary.from_samples(samples, categorical)
