"""Selective-prediction and regression metrics.

A point is retained at threshold ``tau`` when its uncertainty is strictly
below ``tau``; metrics over an empty retained set are ``None`` (written as an
empty CSV field).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SelectiveResult:
    threshold: float
    coverage: float
    retained: int
    value: float | None


def accuracy(probs, labels, mask=None) -> float | None:
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    mask = np.ones(len(labels), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        return None
    return float((probs[mask].argmax(axis=1) == labels[mask]).mean())


def selective_accuracy(summary, labels, mask, thresholds) -> list:
    """Accuracy over masked nodes whose predictive entropy is below each threshold."""
    mask = np.asarray(mask, dtype=bool)
    ent = summary.entropy[mask]
    pred = summary.probs[mask].argmax(axis=1)  # argmax keeps the lowest index on ties
    hit = pred == np.asarray(labels)[mask]
    out = []
    for tau in thresholds:
        keep = ent < tau
        k = int(keep.sum())
        cov = k / mask.sum() if mask.any() else 0.0
        out.append(SelectiveResult(float(tau), float(cov), k, float(hit[keep].mean()) if k else None))
    return out


def gaussian_nll(y, mu, var, floor: float = 1e-3) -> float:
    """Mean of 0.5 log(2 pi var) + (y - mu)^2 / (2 var), with var floored."""
    y, mu = np.asarray(y, dtype=np.float64), np.asarray(mu, dtype=np.float64)
    v = np.maximum(np.asarray(var, dtype=np.float64), floor)
    return float(np.mean(0.5 * np.log(2.0 * np.pi * v) + (y - mu) ** 2 / (2.0 * v)))


def regression_metrics(y, yhat) -> dict:
    """MAE, MSE and MAPE (percent; targets with |y| < 1e-8 are skipped)."""
    y, yhat = np.asarray(y, dtype=np.float64).ravel(), np.asarray(yhat, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("regression_metrics: empty input")
    if y.shape != yhat.shape:
        raise ValueError(f"regression_metrics: {y.shape} targets vs {yhat.shape} predictions")
    err = yhat - y
    ok = np.abs(y) >= 1e-8
    mape = float(100.0 * np.mean(np.abs(err[ok]) / np.abs(y[ok]))) if ok.any() else None
    return {"MAE": float(np.mean(np.abs(err))), "MAPE": mape, "MSE": float(np.mean(err**2))}


VARIANCE_METRICS = ("MAE", "MAPE", "MSE", "NLL")


def variance_threshold_eval(summary, y, thresholds, mask=None, floor: float = 1e-3) -> list:
    """Regression metrics over points whose predictive variance is below each threshold."""
    mean = np.asarray(summary.mean, dtype=np.float64).ravel()
    var = np.asarray(summary.variance, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    sel = np.ones_like(y, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).ravel()
    mean, var, y = mean[sel], var[sel], y[sel]
    rows = []
    for tau in thresholds:
        keep = var < tau
        k = int(keep.sum())
        row = {"threshold": float(tau), "coverage": k / y.size if y.size else 0.0, "retained": k}
        if k:
            row.update(regression_metrics(y[keep], mean[keep]))
            row["NLL"] = gaussian_nll(y[keep], mean[keep], var[keep], floor)
        else:
            row.update({m: None for m in VARIANCE_METRICS})
        rows.append(row)
    return rows


def mean_true_logprob(probs, labels, mask=None, floor: float = 1e-12) -> float:
    """Mean log-probability assigned to the true class (the noise-curve metric)."""
    probs, labels = np.asarray(probs), np.asarray(labels)
    mask = np.ones(len(labels), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    p = probs[mask, labels[mask]]
    return float(np.mean(np.log(np.maximum(p, floor))))


def fmt(v) -> str:
    """Stable CSV formatting; absent values become an empty field."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "inf" if math.isinf(v) and v > 0 else f"{float(v):.10g}"
    return str(v)
