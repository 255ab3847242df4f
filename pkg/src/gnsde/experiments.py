"""Experiment drivers: robustness sweeps, active learning, temporal regression.

Every driver is a pure function of its configuration and seeds. Sweep cells
are independent units of work; with ``parallel > 1`` they run in a process
pool and results are merged in cell order, so the CSVs never depend on
scheduling.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .baselines import ensemble_predict
from .datasets import (
    EXTRAP_WINDOW,
    INTERP_WINDOW,
    NodeClassificationData,
    TemporalRegressionData,
    add_feature_noise,
    gen_three_node,
    gen_voting,
    three_node_truth,
)
from .graph import normalize
from .metrics import VARIANCE_METRICS, accuracy, fmt, mean_true_logprob, selective_accuracy, variance_threshold_eval
from .model import (
    GraphModel,
    ModelConfig,
    PredictiveSummary,
    Task,
    TrainConfig,
    Trainer,
    TrainingDiverged,
    mc_predict,
)
from .sde import TimeGrid

log = logging.getLogger(__name__)

MODEL_NAMES = ("gnsde", "gnode", "gcn", "ensemble", "gcn_dropout", "gnode_dropout")
CURVE_EXPERIMENTS = ("train_fraction", "node_count", "entropy_threshold", "noise_loglik")
ACQUISITIONS = ("random", "max_entropy")
DEFAULT_SEEDS = (0, 1, 2)

TRAIN_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
NODE_COUNTS = (100, 200, 300, 400, 500)
ENTROPY_THRESHOLDS = (math.inf, 1.6, 1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)
NOISE_LEVELS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
REGRESSION_THRESHOLDS = (math.inf, 3.0, 2.5, 2.0, 1.5, 1.0, 0.5)

CURVE_COLUMNS = ("experiment", "model", "x", "metric", "mean", "sd", "coverage", "n_ok", "n_absent", "n_failed")
AL_COLUMNS = ("acquisition", "model", "seed", "round", "labeled", "chosen", "accuracy", "accuracy_all")
TABLE2_COLUMNS = (
    ("model", "threshold", "coverage")
    + VARIANCE_METRICS
    + tuple(f"{m}_sd" for m in VARIANCE_METRICS)
    + ("n_ok", "n_absent", "n_failed")
)
VARIANCE_COLUMNS = ("model", "region", "mean_variance", "sd", "n_ok", "n_failed")
PREDICTION_COLUMNS = ("model", "seed", "t", "node", "truth", "mean", "variance")
REGIONS = ("train", "interp", "extrap")

# metric names double as documentation in the CSV
ACCURACY = "accuracy"
TRUE_LOGPROB = "mean_log_prob_true_class"


class PoolExhausted(ValueError):
    pass


# ---------------------------------------------------------------- model setup

VOTING_DEFAULTS = {"n": 300, "train_frac": 0.5, "homophily": 0.7, "noise_sd": 1.5}


@dataclass
class ClassificationSetup:
    """Everything a classification cell needs besides its seed."""

    data: dict = field(default_factory=lambda: dict(VOTING_DEFAULTS))
    model: dict = field(default_factory=dict)
    grid: TimeGrid = field(default_factory=lambda: TimeGrid(0.0, 1.0, 20))
    optimizer: TrainConfig = field(default_factory=TrainConfig)
    n_samples: int = 50
    dropout: float = 0.2
    ensemble_k: int = 5
    ensemble_kind: str = "gcn"


@dataclass
class RegressionSetup:
    n_obs: int = 60
    noise_sd: float = 0.5
    # model time = data time * time_scale; keeps the latent horizon short
    time_scale: float = 0.1
    steps: int = 120
    obs_var: float = 0.05
    model: dict = field(default_factory=dict)
    optimizer: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=300))
    n_samples: int = 50
    dropout: float = 0.2
    ensemble_k: int = 5
    ensemble_kind: str = "gnode"

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, 12.0 * self.time_scale, self.steps)


def model_spec(name: str, setup) -> tuple[str, float]:
    """(architecture kind, dropout rate) for a model name."""
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; valid: {', '.join(MODEL_NAMES)}")
    if name == "ensemble":
        return setup.ensemble_kind, 0.0
    if name.endswith("_dropout"):
        return name[: -len("_dropout")], setup.dropout
    return name, 0.0


class Learner:
    """One named model (or ensemble) with resumable optimizer state."""

    def __init__(self, name: str, in_dim: int, out_dim: int, setup, seed: int, head: str = "categorical", **extra):
        kind, rate = model_spec(name, setup)
        cfg = ModelConfig.from_dict({**setup.model, **extra, "in_dim": in_dim, "out_dim": out_dim, "kind": kind, "head": head, "dropout": rate, "init_seed": seed})
        k = setup.ensemble_k if name == "ensemble" else 1
        if name == "ensemble" and k < 2:
            raise ValueError("an ensemble needs at least two members")
        self.name = name
        self.setup = setup
        self.seed = seed
        self.models = [GraphModel(replace(cfg, init_seed=seed + i)) for i in range(k)]
        self.trainers = [Trainer(m, setup.optimizer, seed + 1000 * i) for i, m in enumerate(self.models)]

    @property
    def stochastic(self) -> bool:
        m = self.models[0]
        return m.kind == "gnsde" or m.config.dropout > 0

    def fit(self, X, adj, task, grid, epochs=None) -> list:
        return [t.run(X, adj, task, grid, epochs) for t in self.trainers]

    def predict(self, X, adj, grid, readout=None) -> PredictiveSummary:
        if len(self.models) > 1:
            return ensemble_predict(self.models, X, adj, grid, readout)
        n = self.setup.n_samples if self.stochastic else 1
        return mc_predict(self.models[0], X, adj, grid, n, base_seed=self.seed, readout=readout)


# ---------------------------------------------------------------- csv helpers


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in columns])
    return path


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _mean_sd(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return mean, sd


def _map_cells(fn, cells, parallel: int):
    if parallel > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(fn, cells))
    return [fn(c) for c in cells]


# ------------------------------------------------------------ robustness sweeps


@dataclass(frozen=True)
class CurveCell:
    experiment: str
    model: str
    seed: int
    xs: tuple
    setup: ClassificationSetup

    def key(self) -> str:
        xs = ",".join(fmt(x) for x in self.xs)
        return f"{self.experiment} model={self.model} seed={self.seed} x=[{xs}]"


def default_grid(experiment: str) -> tuple:
    return {
        "train_fraction": TRAIN_FRACTIONS,
        "node_count": NODE_COUNTS,
        "entropy_threshold": ENTROPY_THRESHOLDS,
        "noise_loglik": NOISE_LEVELS,
    }[experiment]


def curve_cells(experiment: str, models, setup: ClassificationSetup, seeds=DEFAULT_SEEDS, grid=None) -> list:
    if experiment not in CURVE_EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; valid: {', '.join(CURVE_EXPERIMENTS)}")
    xs = tuple(default_grid(experiment) if grid is None else grid)
    if not xs:
        raise ValueError("empty sweep grid")
    if experiment == "train_fraction" and not all(0 < x < 1 for x in xs):
        raise ValueError("train fractions must lie in (0, 1)")
    if experiment == "node_count" and not all(int(x) == x and x >= 3 for x in xs):
        raise ValueError("node counts must be integers >= 3")
    for m in models:
        model_spec(m, setup)
    cells = []
    for m in models:
        if experiment in ("train_fraction", "node_count"):
            cells += [CurveCell(experiment, m, s, (x,), setup) for x in xs for s in seeds]
        else:
            # one trained model per seed is evaluated at every grid point
            cells += [CurveCell(experiment, m, s, xs, setup) for s in seeds]
    return cells


def _voting(setup: ClassificationSetup, seed: int, **override) -> NodeClassificationData:
    kw = {**setup.data, **override}
    return gen_voting(seed=seed, **kw)


def _fit_classifier(name, data: NodeClassificationData, setup, seed) -> Learner:
    learner = Learner(name, data.features.shape[1], data.num_classes, setup, seed)
    task = Task.static(setup.grid, data.labels, data.train_mask)
    learner.fit(Tensor(data.features), normalize(data.graph), task, setup.grid)
    return learner


def run_curve_cell(cell: CurveCell) -> list:
    """Returns ``[(x, metric, value, coverage), ...]`` or ``None`` on divergence."""
    s = cell.setup
    try:
        if cell.experiment in ("train_fraction", "node_count"):
            x = cell.xs[0]
            kw = {"train_frac": x} if cell.experiment == "train_fraction" else {"n": int(x)}
            data = _voting(s, cell.seed, **kw)
            learner = _fit_classifier(cell.model, data, s, cell.seed)
            summary = learner.predict(Tensor(data.features), normalize(data.graph), s.grid)
            return [(x, ACCURACY, accuracy(summary.probs, data.labels, data.test_mask), 1.0)]
        data = _voting(s, cell.seed)
        learner = _fit_classifier(cell.model, data, s, cell.seed)
        adj = normalize(data.graph)
        if cell.experiment == "entropy_threshold":
            summary = learner.predict(Tensor(data.features), adj, s.grid)
            res = selective_accuracy(summary, data.labels, data.test_mask, cell.xs)
            return [(r.threshold, ACCURACY, r.value, r.coverage) for r in res]
        out = []
        for i, sd in enumerate(cell.xs):
            noisy = add_feature_noise(data, sd, seed=cell.seed * 7919 + i + 1)
            summary = learner.predict(Tensor(noisy.features), adj, s.grid)
            out.append((sd, TRUE_LOGPROB, mean_true_logprob(summary.probs, data.labels, data.test_mask), 1.0))
        return out
    except TrainingDiverged as exc:
        log.warning("%s diverged at epoch %d", cell.key(), exc.epoch)
        return None


def aggregate_curve(cells, results) -> list:
    """Merge per-seed records into one row per (model, x, metric)."""
    order, groups, failed = [], {}, {}
    for cell in cells:
        for x in cell.xs:
            k = (cell.model, x)
            if k not in failed:
                order.append(k)
                failed[k] = 0
    for cell, res in zip(cells, results):
        if res is None:
            for x in cell.xs:
                failed[(cell.model, x)] += 1
            continue
        for x, metric, value, cov in res:
            groups.setdefault((cell.model, x), {}).setdefault(metric, []).append((value, cov))
    experiment = cells[0].experiment if cells else ""
    rows = []
    for k in order:
        metrics = groups.get(k) or {ACCURACY if experiment != "noise_loglik" else TRUE_LOGPROB: []}
        for metric, recs in metrics.items():
            mean, sd = _mean_sd([v for v, _ in recs])
            rows.append(
                {
                    "experiment": experiment,
                    "model": k[0],
                    "x": k[1],
                    "metric": metric,
                    "mean": mean,
                    "sd": sd,
                    "coverage": float(np.mean([c for _, c in recs])) if recs else None,
                    "n_ok": sum(v is not None for v, _ in recs),
                    "n_absent": sum(v is None for v, _ in recs),
                    "n_failed": failed[k],
                }
            )
    return rows


def run_curve(experiment: str, models, setup: ClassificationSetup | None = None, seeds=DEFAULT_SEEDS, grid=None, parallel: int = 1) -> list:
    """Train each model per grid point and seed; rows follow ``CURVE_COLUMNS``."""
    setup = setup or ClassificationSetup()
    cells = curve_cells(experiment, models, setup, seeds, grid)
    results = _map_cells(run_curve_cell, cells, parallel)
    return aggregate_curve(cells, results)


# ------------------------------------------------------------- active learning


@dataclass
class ALRound:
    labeled: int
    chosen: int | None
    # accuracy on nodes still unlabeled; None once every node is labeled
    accuracy: float | None
    accuracy_all: float


@dataclass
class ActiveLearningTrace:
    acquisition: str
    model: str
    seed: int
    rounds: list = field(default_factory=list)

    @property
    def final_accuracy(self) -> float | None:
        return self.rounds[-1].accuracy

    def rows(self) -> list:
        return [
            {
                "acquisition": self.acquisition,
                "model": self.model,
                "seed": self.seed,
                "round": i,
                "labeled": r.labeled,
                "chosen": r.chosen,
                "accuracy": r.accuracy,
                "accuracy_all": r.accuracy_all,
            }
            for i, r in enumerate(self.rounds)
        ]


def acquire(acquisition: str, summary: PredictiveSummary, labeled: np.ndarray, rng: np.random.Generator) -> int:
    pool = np.flatnonzero(~labeled)
    if pool.size == 0:
        raise PoolExhausted("no unlabeled nodes left to acquire")
    if acquisition == "random":
        return int(rng.choice(pool))
    if acquisition == "max_entropy":
        # argmax returns the first maximum, i.e. the lowest node id on ties
        return int(pool[np.argmax(summary.entropy[pool])])
    raise ValueError(f"unknown acquisition {acquisition!r}; valid: {', '.join(ACQUISITIONS)}")


def active_learning(
    model_kind: str,
    data: NodeClassificationData,
    start: int,
    end: int,
    epochs_per_round: int = 5,
    acquisition: str = "max_entropy",
    seed: int = 0,
    setup: ClassificationSetup | None = None,
) -> ActiveLearningTrace:
    """Grow a labeled set one node per round from ``start`` to ``end`` nodes.

    The pool is every node of ``data``. Each round warm-starts training for
    ``epochs_per_round`` epochs, records accuracy on the still-unlabeled nodes
    (and on all nodes), then acquires one node. The initial labeled set
    depends only on ``seed``, so acquisitions compared at equal seeds share it.
    """
    if acquisition not in ACQUISITIONS:
        raise ValueError(f"unknown acquisition {acquisition!r}; valid: {', '.join(ACQUISITIONS)}")
    if start < 1 or end < start:
        raise ValueError(f"need 1 <= start <= end, got start={start} end={end}")
    if end > data.n:
        raise PoolExhausted(f"end={end} exceeds the pool of {data.n} nodes")
    if epochs_per_round < 1:
        raise ValueError("epochs_per_round must be positive")
    setup = setup or ClassificationSetup()
    rng = np.random.default_rng(seed)
    labeled = np.zeros(data.n, dtype=bool)
    labeled[rng.choice(data.n, size=start, replace=False)] = True
    X, adj, grid = Tensor(data.features), normalize(data.graph), setup.grid
    learner = Learner(model_kind, data.features.shape[1], data.num_classes, setup, seed)
    trace = ActiveLearningTrace(acquisition, model_kind, seed)
    while True:
        try:
            learner.fit(X, adj, Task.static(grid, data.labels, labeled), grid, epochs_per_round)
        except TrainingDiverged as exc:
            raise TrainingDiverged(exc.epoch, f"active learning at {labeled.sum()} labels: {exc}") from exc
        summary = learner.predict(X, adj, grid)
        acc = accuracy(summary.probs, data.labels, ~labeled) if (~labeled).any() else None
        acc_all = accuracy(summary.probs, data.labels)
        n_lab = int(labeled.sum())
        if n_lab == end:
            trace.rounds.append(ALRound(n_lab, None, acc, acc_all))
            return trace
        chosen = acquire(acquisition, summary, labeled, rng)
        trace.rounds.append(ALRound(n_lab, chosen, acc, acc_all))
        log.debug("al %s seed %d: %d labeled, acc %s, picked %d", acquisition, seed, n_lab, acc, chosen)
        labeled[chosen] = True


@dataclass(frozen=True)
class ALCell:
    model: str
    acquisition: str
    seed: int
    n: int
    start: int
    end: int
    epochs_per_round: int
    setup: ClassificationSetup

    def key(self) -> str:
        return f"active model={self.model} acquisition={self.acquisition} seed={self.seed} {self.start}->{self.end}"


def run_al_cell(cell: ALCell) -> ActiveLearningTrace:
    data = _voting(cell.setup, cell.seed, n=cell.n)
    return active_learning(cell.model, data, cell.start, cell.end, cell.epochs_per_round, cell.acquisition, cell.seed, cell.setup)


def active_cells(model, setup, seeds=DEFAULT_SEEDS, n=100, start=10, end=80, epochs_per_round=5, acquisitions=ACQUISITIONS) -> list:
    return [ALCell(model, a, s, n, start, end, epochs_per_round, setup) for a in acquisitions for s in seeds]


def run_active(model="gnsde", setup=None, seeds=DEFAULT_SEEDS, n=100, start=10, end=80, epochs_per_round=5, acquisitions=ACQUISITIONS, parallel=1) -> dict:
    """``{acquisition: [trace per seed]}``."""
    setup = setup or ClassificationSetup()
    cells = active_cells(model, setup, seeds, n, start, end, epochs_per_round, acquisitions)
    traces = _map_cells(run_al_cell, cells, parallel)
    out = {a: [] for a in acquisitions}
    for c, t in zip(cells, traces):
        out[c.acquisition].append(t)
    return out


# ------------------------------------------------------------ temporal regression


@dataclass(frozen=True)
class RegressionCell:
    model: str
    seed: int
    thresholds: tuple
    setup: RegressionSetup

    def key(self) -> str:
        return f"table2 model={self.model} seed={self.seed}"


def regression_task(data: TemporalRegressionData, setup: RegressionSetup):
    """Grid, readout indices and a train-only task with standardised targets."""
    grid = setup.grid
    idx = grid.nearest_index(data.times * setup.time_scale)
    scale = float(data.values[data.train].std())
    mask = np.repeat(data.train[:, None], 3, axis=1)
    return grid, idx, scale, Task(idx, data.values / scale, mask)


def fit_regression(name: str, data: TemporalRegressionData, setup: RegressionSetup, seed: int):
    """Mean and variance at every grid point, in data units: (steps + 1, 3) each."""
    grid, idx, scale, task = regression_task(data, setup)
    learner = Learner(name, data.features.shape[1], 1, setup, seed, head="gaussian", obs_var=setup.obs_var)
    X, adj = Tensor(data.features), normalize(data.graph)
    learner.fit(X, adj, task, grid)
    s = learner.predict(X, adj, grid, readout=list(range(grid.steps + 1)))
    return s.mean[..., 0] * scale, s.variance[..., 0] * scale**2


def run_regression_cell(cell: RegressionCell):
    s = cell.setup
    data = gen_three_node(s.n_obs, seed=cell.seed, noise_sd=s.noise_sd)
    try:
        mean, var = fit_regression(cell.model, data, s, cell.seed)
    except TrainingDiverged as exc:
        log.warning("%s diverged at epoch %d", cell.key(), exc.epoch)
        return None
    idx = s.grid.nearest_index(data.times * s.time_scale)
    at_obs = PredictiveSummary(samples=np.zeros((1,) + mean[idx].shape), mean=mean[idx], variance=var[idx])
    test = np.repeat(data.test[:, None], 3, axis=1)
    table = variance_threshold_eval(at_obs, data.values, cell.thresholds, mask=test)
    regions = {
        "train": data.train,
        "interp": data.window(*INTERP_WINDOW),
        "extrap": data.window(*EXTRAP_WINDOW),
    }
    profile = {r: (float(var[idx][m].mean()) if m.any() else None) for r, m in regions.items()}
    return {"table": table, "variance": profile, "mean": mean, "var": var}


def regression_cells(models, setup: RegressionSetup, seeds=DEFAULT_SEEDS, thresholds=REGRESSION_THRESHOLDS) -> list:
    for m in models:
        model_spec(m, setup)
        if m == "gcn" or m == "gcn_dropout":
            raise ValueError(f"{m} has no time dynamics; use gnsde, gnode, gnode_dropout or ensemble")
    return [RegressionCell(m, s, tuple(thresholds), setup) for m in models for s in seeds]


def table2_regression(models=("gnsde", "gnode_dropout"), setup: RegressionSetup | None = None, seeds=DEFAULT_SEEDS, thresholds=REGRESSION_THRESHOLDS, parallel: int = 1) -> dict:
    """Variance-threshold metrics, variance profile by region, and predictions.

    Returns ``{"metrics": rows, "variance": rows, "predictions": rows}`` with
    columns ``TABLE2_COLUMNS``, ``VARIANCE_COLUMNS`` and ``PREDICTION_COLUMNS``.
    """
    setup = setup or RegressionSetup()
    cells = regression_cells(models, setup, seeds, thresholds)
    results = _map_cells(run_regression_cell, cells, parallel)
    grid_t = setup.grid.points() / setup.time_scale
    truth = three_node_truth(grid_t)
    metrics, variance, predictions = [], [], []
    for m in models:
        mine = [(c, r) for c, r in zip(cells, results) if c.model == m]
        ok = [r for _, r in mine if r is not None]
        n_failed = len(mine) - len(ok)
        for i, tau in enumerate(thresholds):
            per_seed = [r["table"][i] for r in ok]
            row = {"model": m, "threshold": tau, "n_failed": n_failed}
            row["coverage"] = float(np.mean([p["coverage"] for p in per_seed])) if per_seed else None
            row["n_ok"] = sum(p["MAE"] is not None for p in per_seed)
            row["n_absent"] = len(per_seed) - row["n_ok"]
            for name in VARIANCE_METRICS:
                row[name], row[f"{name}_sd"] = _mean_sd([p[name] for p in per_seed])
            metrics.append(row)
        for region in REGIONS:
            mean, sd = _mean_sd([r["variance"][region] for r in ok])
            variance.append({"model": m, "region": region, "mean_variance": mean, "sd": sd, "n_ok": len(ok), "n_failed": n_failed})
        for c, r in mine:
            if r is None:
                continue
            for j, t in enumerate(grid_t):
                for node in range(3):
                    predictions.append(
                        {"model": m, "seed": c.seed, "t": t, "node": "ABC"[node], "truth": truth[j, node], "mean": r["mean"][j, node], "variance": r["var"][j, node]}
                    )
    return {"metrics": metrics, "variance": variance, "predictions": predictions}
