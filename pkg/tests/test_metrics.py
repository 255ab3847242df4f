import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gnsde.metrics import (
    accuracy,
    gaussian_nll,
    regression_metrics,
    selective_accuracy,
    variance_threshold_eval,
)
from gnsde.model import PredictiveSummary


def summary_from_probs(probs):
    return PredictiveSummary.from_samples(np.asarray(probs)[None], categorical=True)


class TestSelectiveAccuracy:
    probs = np.array(
        [
            [0.98, 0.01, 0.01],  # confident, right
            [0.6, 0.3, 0.1],  # medium, wrong
            [0.34, 0.33, 0.33],  # uncertain, right
            [0.05, 0.9, 0.05],  # confident, right
        ]
    )
    labels = np.array([0, 1, 0, 1])

    def test_infinite_threshold_is_plain_accuracy(self):
        s = summary_from_probs(self.probs)
        mask = np.ones(4, dtype=bool)
        r = selective_accuracy(s, self.labels, mask, [np.inf])[0]
        assert r.value == accuracy(self.probs, self.labels, mask) == 0.75
        assert r.coverage == 1.0

    def test_zero_threshold_is_absent(self):
        r = selective_accuracy(summary_from_probs(self.probs), self.labels, np.ones(4, bool), [0.0])[0]
        assert r.value is None and r.coverage == 0.0

    def test_hand_filter(self):
        s = summary_from_probs(self.probs)
        ent = [-sum(p * math.log(p) for p in row) for row in self.probs]
        tau = 0.5
        keep = [i for i in range(4) if ent[i] < tau]
        expected = np.mean([self.probs[i].argmax() == self.labels[i] for i in keep])
        r = selective_accuracy(s, self.labels, np.ones(4, bool), [tau])[0]
        assert keep == [0, 3]
        assert r.value == expected == 1.0
        assert r.coverage == 0.5

    def test_mask_respected(self):
        r = selective_accuracy(summary_from_probs(self.probs), self.labels, np.array([0, 1, 0, 0], bool), [np.inf])[0]
        assert r.value == 0.0

    def test_tie_break_lowest_index(self):
        s = summary_from_probs([[0.5, 0.5, 0.0]])
        assert selective_accuracy(s, [0], [True], [np.inf])[0].value == 1.0

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (12, 3), elements=st.floats(0.01, 1.0)), st.lists(st.floats(0.0, 1.2), min_size=2, max_size=8))
    def test_coverage_monotone(self, raw, taus):
        probs = raw / raw.sum(axis=1, keepdims=True)
        s = summary_from_probs(probs)
        taus = sorted(taus, reverse=True)
        cov = [r.coverage for r in selective_accuracy(s, np.zeros(12, int), np.ones(12, bool), taus)]
        assert all(b <= a for a, b in zip(cov, cov[1:]))


class TestGaussianNll:
    def test_exact_fit(self):
        assert gaussian_nll([1.0], [1.0], [1.0]) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-15)

    def test_unit_error(self):
        assert gaussian_nll([1.0], [0.0], [1.0]) == pytest.approx(0.5 * math.log(2 * math.pi) + 0.5, abs=1e-15)

    def test_floor(self):
        assert gaussian_nll([0.0], [0.0], [0.0], floor=1e-3) == pytest.approx(0.5 * math.log(2 * math.pi * 1e-3))

    def test_vector_vs_loop(self):
        rng = np.random.default_rng(0)
        y, mu, var = rng.normal(size=50), rng.normal(size=50), rng.uniform(0.1, 3, 50)
        loop = sum(0.5 * math.log(2 * math.pi * v) + (a - b) ** 2 / (2 * v) for a, b, v in zip(y, mu, var)) / 50
        assert gaussian_nll(y, mu, var) == pytest.approx(loop, abs=1e-12)


class TestRegressionMetrics:
    def test_perfect(self):
        assert regression_metrics([1.0, -2.0], [1.0, -2.0]) == {"MAE": 0.0, "MAPE": 0.0, "MSE": 0.0}

    def test_arithmetic(self):
        assert regression_metrics([2.0], [3.0]) == {"MAE": 1.0, "MAPE": 50.0, "MSE": 1.0}

    def test_vs_loop(self):
        rng = np.random.default_rng(1)
        y, yh = rng.normal(size=40), rng.normal(size=40)
        y[3] = 0.0
        m = regression_metrics(y, yh)
        mae = sum(abs(a - b) for a, b in zip(y, yh)) / 40
        mse = sum((a - b) ** 2 for a, b in zip(y, yh)) / 40
        kept = [(a, b) for a, b in zip(y, yh) if abs(a) >= 1e-8]
        mape = 100 * sum(abs(b - a) / abs(a) for a, b in kept) / len(kept)
        assert m["MAE"] == pytest.approx(mae, rel=1e-12)
        assert m["MSE"] == pytest.approx(mse, rel=1e-12)
        assert m["MAPE"] == pytest.approx(mape, rel=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            regression_metrics([], [])


class TestVarianceThreshold:
    def summary(self):
        return PredictiveSummary(samples=np.zeros((1, 3)), mean=np.array([1.0, 2.0, 4.0]), variance=np.array([0.2, 1.5, 4.0]))

    def test_infinite_is_full_set(self):
        y = np.array([1.5, 2.0, 3.0])
        row = variance_threshold_eval(self.summary(), y, [np.inf])[0]
        full = regression_metrics(y, [1.0, 2.0, 4.0])
        assert row["MAE"] == full["MAE"] and row["coverage"] == 1.0
        assert row["NLL"] == gaussian_nll(y, [1.0, 2.0, 4.0], [0.2, 1.5, 4.0])

    def test_below_min_is_absent(self):
        row = variance_threshold_eval(self.summary(), [1, 2, 3], [0.1])[0]
        assert all(row[k] is None for k in ("MAE", "MAPE", "MSE", "NLL"))

    def test_hand_filter(self):
        y = np.array([1.5, 2.0, 3.0])
        row = variance_threshold_eval(self.summary(), y, [2.0])[0]
        assert row["retained"] == 2
        assert row["MAE"] == pytest.approx(0.25)
        assert row["MSE"] == pytest.approx(0.125)
        assert row["NLL"] == pytest.approx(gaussian_nll([1.5, 2.0], [1.0, 2.0], [0.2, 1.5]))

    def test_boundary_excluded(self):
        assert variance_threshold_eval(self.summary(), [1, 2, 3], [1.5])[0]["retained"] == 1
