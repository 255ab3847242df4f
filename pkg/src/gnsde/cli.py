"""Command-line entry point: ``gnsde train | predict | experiment``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(divergence, non-finite integration). ``GNSDE_LOG`` selects verbosity
(error, info, debug).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .baselines import ensemble_predict
from .config import CONFIG_ECHO, ConfigError, RunConfig
from .datasets import DatasetFormatError, gen_three_node, gen_voting, load_planetoid
from .experiments import (
    ACQUISITIONS,
    AL_COLUMNS,
    CURVE_COLUMNS,
    CURVE_EXPERIMENTS,
    ENTROPY_THRESHOLDS,
    PREDICTION_COLUMNS,
    REGRESSION_THRESHOLDS,
    TABLE2_COLUMNS,
    VARIANCE_COLUMNS,
    Learner,
    PoolExhausted,
    active_cells,
    curve_cells,
    regression_cells,
    regression_task,
    run_active,
    run_curve,
    table2_regression,
    write_csv,
)
from .graph import normalize
from .metrics import fmt
from .model import Task, TrainingDiverged, load_checkpoint, mc_predict, save_checkpoint
from .plotting import Series, line_plot, save_svg
from .sde import IntegrationError

log = logging.getLogger("gnsde")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
EXPERIMENTS = ("fig2_curves", "fig3_active", "table2_regression")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
FIG2_MODELS = ("gnsde", "gnode", "gcn", "ensemble")
TABLE2_MODELS = ("gnsde", "gnode_dropout")
AL_SAMPLES = 20
CHECKPOINT = "model.npz"
TRACE = "trace.csv"
PREDICTIONS = "predictions.csv"
TRACE_COLUMNS = ("member", "epoch", "loss", "nll", "kl", "kl_scaled")


class UsageError(Exception):
    pass


class ShapeMismatch(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gnsde", description="Latent graph neural SDEs: training, prediction and experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required: bool):
        sp.add_argument("--config", required=config_required, help="YAML run configuration")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="seed override")
        sp.add_argument("--dry-run", action="store_true", help="print the plan and exit")

    t = sub.add_parser("train", help="train one model and write a checkpoint")
    common(t, True)
    pr = sub.add_parser("predict", help="per-node predictions from a checkpoint")
    common(pr, True)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--n-samples", type=int, help="Monte-Carlo passes (overrides the config)")
    pr.add_argument("--thresholds", help="comma-separated uncertainty thresholds, 'inf' allowed")
    e = sub.add_parser("experiment", help="run a named experiment")
    e.add_argument("name", help=f"one of: {', '.join(EXPERIMENTS)}")
    common(e, False)
    e.add_argument("--parallel", type=int, help="worker processes for sweep cells")
    return p


# ---------------------------------------------------------------- helpers


def _setup_logging() -> None:
    name = os.environ.get("GNSDE_LOG", "error").strip().lower()
    level = LOG_LEVELS.get(name)
    if level is None:
        print(f"gnsde: ignoring GNSDE_LOG={name!r}; valid: {', '.join(LOG_LEVELS)}", file=sys.stderr)
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.seeds = [args.seed]
    if getattr(args, "parallel", None) is not None:
        if args.parallel < 1:
            raise ConfigError("--parallel", "must be at least 1")
        cfg.parallel = args.parallel
    path = cfg.data.get("path")
    if path is not None and args.config and not Path(path).is_absolute():
        # relative data paths are anchored at the config file
        cfg.data["path"] = str((Path(args.config).parent / path).resolve())
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigError("out", "required field is missing (set it in the config or pass --out)")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_data(cfg: RunConfig):
    gen = cfg.data["generator"]
    if gen == "voting":
        return gen_voting(seed=cfg.seed, **cfg.classification_setup().data)
    if gen == "planetoid":
        return load_planetoid(cfg.data["path"], seed=cfg.seed)
    s = cfg.regression_setup()
    return gen_three_node(s.n_obs, seed=cfg.seed, noise_sd=s.noise_sd)


def _is_regression(cfg: RunConfig) -> bool:
    return cfg.data.get("generator") == "three_node"


def _parse_thresholds(text: str | None):
    if text is None:
        return None
    out = []
    for part in text.split(","):
        part = part.strip()
        try:
            v = math.inf if part.lower() == "inf" else float(part)
        except ValueError:
            raise ConfigError("--thresholds", f"not a number: {part!r}") from None
        if not v >= 0:
            raise ConfigError("--thresholds", "thresholds must be non-negative")
        out.append(v)
    return out


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    cfg = _load_config(args)
    cfg.require("data", "model.kind")
    name = cfg.model["kind"]
    if args.dry_run:
        epochs = (cfg.regression_setup() if _is_regression(cfg) else cfg.classification_setup()).optimizer.epochs
        print(f"train model={name} data={cfg.data['generator']} seed={cfg.seed} epochs={epochs}")
        return EXIT_OK
    out = _out_dir(cfg)
    data = load_data(cfg)
    X, adj = Tensor(data.features), normalize(data.graph)
    if _is_regression(cfg):
        setup = cfg.regression_setup()
        grid, _, _, task = regression_task(data, setup)
        learner = Learner(name, data.features.shape[1], 1, setup, cfg.seed, head="gaussian", obs_var=setup.obs_var)
    else:
        setup = cfg.classification_setup()
        grid = setup.grid
        task = Task.static(grid, data.labels, data.train_mask)
        learner = Learner(name, data.features.shape[1], data.num_classes, setup, cfg.seed)
    log.info("training %s on %d nodes for %d epochs", name, X.shape[0], setup.optimizer.epochs)
    traces = learner.fit(X, adj, task, grid)
    save_checkpoint(learner.models, out / CHECKPOINT, name)
    rows = [{"member": i, **r} for i, tr in enumerate(traces) for r in tr]
    write_csv(out / TRACE, TRACE_COLUMNS, rows)
    cfg.echo(out)
    for f in (CHECKPOINT, TRACE, CONFIG_ECHO):
        print(out / f)
    return EXIT_OK


# ---------------------------------------------------------------- predict


def _flag_name(tau: float) -> str:
    return f"retained_lt_{fmt(tau)}"


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    cfg.require("data")
    n_samples = cfg.n_samples if args.n_samples is None else args.n_samples
    if n_samples < 1:
        raise ConfigError("--n-samples", "must be at least 1")
    regression = _is_regression(cfg)
    thresholds = _parse_thresholds(args.thresholds) or cfg.thresholds
    if thresholds is None:
        thresholds = list(REGRESSION_THRESHOLDS if regression else ENTROPY_THRESHOLDS)
    if args.dry_run:
        print(f"predict checkpoint={args.checkpoint} n_samples={n_samples} thresholds={','.join(fmt(t) for t in thresholds)}")
        return EXIT_OK
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise ConfigError("--checkpoint", f"{ckpt}: file not found")
    name, models = load_checkpoint(ckpt)
    data = load_data(cfg)
    mc = models[0].config
    if mc.in_dim != data.features.shape[1]:
        raise ShapeMismatch(
            f"checkpoint expects node features of shape (n, {mc.in_dim}) but data has features of shape {tuple(data.features.shape)}"
        )
    if regression != (mc.head == "gaussian"):
        raise ShapeMismatch(f"checkpoint has a {mc.head} head of shape (n, {mc.out_dim}) which does not fit {cfg.data['generator']} data")
    if not regression and data.num_classes > mc.out_dim:
        raise ShapeMismatch(f"checkpoint outputs shape (n, {mc.out_dim}) but labels need (n, {data.num_classes})")
    X, adj = Tensor(data.features), normalize(data.graph)
    readout = None
    if regression:
        setup = cfg.regression_setup()
        grid, idx, scale, _ = regression_task(data, setup)
        readout = list(idx)
    else:
        grid = cfg.time_grid()
    if len(models) > 1:
        summary = ensemble_predict(models, X, adj, grid, readout)
    else:
        stochastic = mc.kind == "gnsde" or mc.dropout > 0
        summary = mc_predict(models[0], X, adj, grid, n_samples if stochastic else 1, base_seed=cfg.seed, readout=readout)
    flags = [_flag_name(t) for t in thresholds]
    rows = []
    if regression:
        mean, var = summary.mean[..., 0] * scale, summary.variance[..., 0] * scale**2
        columns = ("node", "t", "prediction", "variance", *flags)
        for j, t in enumerate(data.times):
            for node in range(data.features.shape[0]):
                r = {"node": node, "t": t, "prediction": mean[j, node], "variance": var[j, node]}
                r.update({f: int(var[j, node] < tau) for f, tau in zip(flags, thresholds)})
                rows.append(r)
    else:
        pred = summary.probs.argmax(axis=1)
        # spread of the predicted class's probability across passes
        pvar = summary.samples.var(axis=0)[np.arange(len(pred)), pred]
        columns = ("node", "prediction", "entropy", "variance", *flags)
        for i in range(data.n):
            r = {"node": i, "prediction": int(pred[i]), "entropy": summary.entropy[i], "variance": pvar[i]}
            r.update({f: int(summary.entropy[i] < tau) for f, tau in zip(flags, thresholds)})
            rows.append(r)
    out = _out_dir(cfg)
    write_csv(out / PREDICTIONS, columns, rows)
    cfg.echo(out)
    print(out / PREDICTIONS)
    return EXIT_OK


# ---------------------------------------------------------------- experiments


def _curve_svg(rows, title, xlabel, ylabel):
    series = []
    for m in dict.fromkeys(r["model"] for r in rows):
        mine = [r for r in rows if r["model"] == m]
        mean = [r["mean"] for r in mine]
        sd = [r["sd"] or 0.0 for r in mine]
        lo = [None if v is None else v - s for v, s in zip(mean, sd)]
        hi = [None if v is None else v + s for v, s in zip(mean, sd)]
        series.append(Series(m, [r["x"] for r in mine], mean, lo, hi))
    return line_plot(series, title, xlabel, ylabel)


FIG2_LABELS = {
    "train_fraction": ("Accuracy vs training fraction", "training fraction", "test accuracy"),
    "node_count": ("Accuracy vs number of nodes", "nodes", "test accuracy"),
    "entropy_threshold": ("Accuracy vs entropy threshold", "entropy threshold", "selective accuracy"),
    "noise_loglik": ("Noise vs log-likelihood", "feature noise sd", "mean log p(true class)"),
}


def exp_fig2(cfg: RunConfig, dry_run: bool) -> list:
    ex = cfg.experiment
    models = ex.get("models") or list(FIG2_MODELS)
    curves = ex.get("curves") or list(CURVE_EXPERIMENTS)
    grids = ex.get("grids") or {}
    setup = cfg.classification_setup()
    if dry_run:
        for c in curves:
            for cell in curve_cells(c, models, setup, cfg.seeds, grids.get(c)):
                print(cell.key())
        return []
    out = _out_dir(cfg)
    written = []
    for c in curves:
        rows = run_curve(c, models, setup, cfg.seeds, grids.get(c), cfg.parallel)
        written.append(write_csv(out / f"fig2_{c}.csv", CURVE_COLUMNS, rows))
        written.append(save_svg(out / f"fig2_{c}.svg", _curve_svg(rows, *FIG2_LABELS[c])))
    return written


def exp_fig3(cfg: RunConfig, dry_run: bool) -> list:
    al = dict(cfg.experiment.get("active") or {})
    kw = {
        "model": al.get("model", "gnsde"),
        "n": al.get("n", 100),
        "start": al.get("start", 10),
        "end": al.get("end", 80),
        "epochs_per_round": al.get("epochs_per_round", 5),
        "acquisitions": tuple(al.get("acquisitions") or ACQUISITIONS),
    }
    # entropy is re-estimated every round, so fewer passes keep the loop affordable
    setup = replace(cfg.classification_setup(), n_samples=al.get("n_samples", AL_SAMPLES))
    if dry_run:
        for cell in active_cells(setup=setup, seeds=cfg.seeds, **kw):
            print(cell.key())
        return []
    out = _out_dir(cfg)
    traces = run_active(setup=setup, seeds=cfg.seeds, parallel=cfg.parallel, **kw)
    written, series = [], []
    for acq, ts in traces.items():
        rows = [r for t in ts for r in t.rows()]
        written.append(write_csv(out / f"fig3_active_{acq}.csv", AL_COLUMNS, rows))
        labeled = [r.labeled for r in ts[0].rounds]
        acc = np.array([[np.nan if r.accuracy is None else r.accuracy for r in t.rounds] for t in ts])
        mean = [None if np.isnan(v) else float(v) for v in np.nanmean(acc, axis=0)] if np.isfinite(acc).any() else [None] * len(labeled)
        sd = acc.std(axis=0, ddof=1) if len(ts) > 1 else np.zeros(acc.shape[1])
        lo = [None if m is None else m - s for m, s in zip(mean, sd)]
        hi = [None if m is None else m + s for m, s in zip(mean, sd)]
        series.append(Series(acq, labeled, mean, lo, hi))
    svg = line_plot(series, "Active learning", "labeled nodes", "accuracy on unlabeled nodes")
    written.append(save_svg(out / "fig3_active.svg", svg))
    return written


def exp_table2(cfg: RunConfig, dry_run: bool) -> list:
    reg = dict(cfg.experiment.get("regression") or {})
    models = reg.get("models") or list(TABLE2_MODELS)
    thresholds = reg.get("thresholds") or cfg.thresholds or list(REGRESSION_THRESHOLDS)
    thresholds = [math.inf if str(t).lower() == "inf" else float(t) for t in thresholds]
    setup = cfg.regression_setup()
    if dry_run:
        for cell in regression_cells(models, setup, cfg.seeds, thresholds):
            print(cell.key())
        return []
    out = _out_dir(cfg)
    res = table2_regression(models, setup, cfg.seeds, thresholds, cfg.parallel)
    written = [
        write_csv(out / "table2_metrics.csv", TABLE2_COLUMNS, res["metrics"]),
        write_csv(out / "table2_variance.csv", VARIANCE_COLUMNS, res["variance"]),
        write_csv(out / "table2_predictions.csv", PREDICTION_COLUMNS, res["predictions"]),
    ]
    nll = [{"model": r["model"], "x": r["threshold"], "mean": r["NLL"], "sd": r["NLL_sd"]} for r in res["metrics"]]
    written.append(save_svg(out / "table2_metrics.svg", _curve_svg(nll, "NLL vs variance threshold", "variance threshold", "NLL")))
    prof = [{"model": r["model"], "x": r["region"], "mean": r["mean_variance"], "sd": r["sd"]} for r in res["variance"]]
    written.append(save_svg(out / "table2_variance.svg", _curve_svg(prof, "Predictive variance by region", "region", "mean variance")))
    written.append(save_svg(out / "table2_predictions.svg", _prediction_svg(res["predictions"], cfg.seeds[0])))
    return written


def _prediction_svg(rows, seed) -> str:
    mine = [r for r in rows if r["node"] == "C" and r["seed"] == seed]
    series = []
    for m in dict.fromkeys(r["model"] for r in mine):
        pts = [r for r in mine if r["model"] == m]
        mean = [r["mean"] for r in pts]
        sd = [math.sqrt(max(r["variance"], 0.0)) for r in pts]
        series.append(Series(m, [r["t"] for r in pts], mean, [a - 2 * s for a, s in zip(mean, sd)], [a + 2 * s for a, s in zip(mean, sd)]))
    if mine:
        first = [r for r in mine if r["model"] == mine[0]["model"]]
        series.append(Series("truth", [r["t"] for r in first], [r["truth"] for r in first]))
    return line_plot(series, f"Node C, seed {seed} (mean +/- 2 sd)", "t", "value")


EXPERIMENT_FUNCS = {"fig2_curves": exp_fig2, "fig3_active": exp_fig3, "table2_regression": exp_table2}


def cmd_experiment(args) -> int:
    if args.name not in EXPERIMENT_FUNCS:
        raise UsageError(f"unknown experiment {args.name!r}; valid: {', '.join(EXPERIMENTS)}")
    cfg = _load_config(args)
    written = EXPERIMENT_FUNCS[args.name](cfg, args.dry_run)
    if args.dry_run:
        return EXIT_OK
    written.append(cfg.echo(_out_dir(cfg)))
    for p in written:
        print(p)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "experiment": cmd_experiment}


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (IntegrationError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ShapeMismatch, DatasetFormatError, PoolExhausted, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
