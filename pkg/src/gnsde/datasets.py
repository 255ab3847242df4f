"""Synthetic voting and three-node problems, plain-text Planetoid loader."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .graph import SparseGraph, read_edge_list, write_edge_list

SPLITS = ("train", "val", "test")


class DatasetFormatError(ValueError):
    pass


class MissingFileError(DatasetFormatError, FileNotFoundError):
    pass


class RowCountError(DatasetFormatError):
    pass


class LabelError(DatasetFormatError):
    pass


class EdgeIndexError(DatasetFormatError):
    pass


@dataclass(frozen=True)
class NodeClassificationData:
    graph: SparseGraph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        n = self.graph.n
        if self.features.shape[0] != n or self.labels.shape != (n,):
            raise RowCountError(f"{n} nodes but {self.features.shape[0]} feature rows / {self.labels.shape[0]} labels")
        overlap = (self.train_mask.astype(int) + self.val_mask + self.test_mask) > 1
        if overlap.any():
            raise ValueError("train/val/test masks overlap")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def with_masks(self, train=None, val=None, test=None) -> "NodeClassificationData":
        z = np.zeros(self.n, dtype=bool)
        return replace(
            self,
            train_mask=z if train is None else np.asarray(train, dtype=bool),
            val_mask=z if val is None else np.asarray(val, dtype=bool),
            test_mask=z if test is None else np.asarray(test, dtype=bool),
        )


def _split_masks(rng, n, train_frac, val_frac=0.0):
    order = rng.permutation(n)
    n_train = int(round(train_frac * n))
    n_val = int(round(val_frac * n))
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][order[:n_train]] = True
    masks[1][order[n_train:n_train + n_val]] = True
    masks[2][order[n_train + n_val:]] = True
    return masks


CANDIDATE_ANGLES = np.deg2rad([90.0, 210.0, 330.0])


def gen_voting(
    n: int = 300,
    train_frac: float = 0.5,
    homophily: float = 0.8,
    noise_sd: float = 0.8,
    seed: int = 0,
    radius: float = 2.0,
    mean_degree: float = 6.0,
    val_frac: float = 0.0,
) -> NodeClassificationData:
    """Voters on a 2-D political compass with a homophilous friendship graph.

    Each voter backs one of three candidates; compass positions scatter
    around the candidate's corner of an equilateral triangle, and each edge
    joins same-vote voters with probability ``homophily``.
    """
    if n < 3:
        raise ValueError("voting graph needs at least 3 nodes")
    if not 0.0 < train_frac < 1.0 or not 0.0 <= val_frac < 1.0 - train_frac + 1e-12:
        raise ValueError("need 0 < train_frac < 1 and train_frac + val_frac <= 1")
    if not 0.0 <= homophily <= 1.0 or noise_sd < 0:
        raise ValueError("homophily must lie in [0, 1] and noise_sd be non-negative")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=n)
    centers = radius * np.stack([np.cos(CANDIDATE_ANGLES), np.sin(CANDIDATE_ANGLES)], axis=1)
    features = centers[labels] + noise_sd * rng.standard_normal((n, 2))

    members = [np.flatnonzero(labels == c) for c in range(3)]
    others = [np.flatnonzero(labels != c) for c in range(3)]
    target = int(round(n * mean_degree / 2))
    max_edges = n * (n - 1) // 2
    target = min(target, max_edges)
    seen: set = set()
    attempts = 0
    while len(seen) < target and attempts < 50 * target:
        attempts += 1
        u = int(rng.integers(n))
        pool = members[labels[u]] if rng.random() < homophily else others[labels[u]]
        if pool.size == 0 or (pool.size == 1 and pool[0] == u):
            continue
        v = int(pool[rng.integers(pool.size)])
        if v == u:
            continue
        seen.add((min(u, v), max(u, v)))
    edges = np.array(sorted(seen), dtype=np.int64).reshape(-1, 2)
    train, val, test = _split_masks(rng, n, train_frac, val_frac)
    return NodeClassificationData(SparseGraph(n, edges), features, labels, train, val, test)


def intra_class_fraction(data: NodeClassificationData) -> float:
    e = data.graph.edges
    return float((data.labels[e[:, 0]] == data.labels[e[:, 1]]).mean()) if len(e) else float("nan")


# ------------------------------------------------------------- three-node task

THREE_NODE_NAMES = ("A", "B", "C")
INTERP_WINDOW = (4.0, 6.0)
EXTRAP_WINDOW = (10.0, 12.0)


def three_node_truth(t) -> np.ndarray:
    """Noise-free A, B, C at times ``t``; shape (len(t), 3)."""
    t = np.asarray(t, dtype=np.float64)
    a = t * np.sin(np.pi * t / 2.0)
    b = 4.0 / (t / 5.0 + 0.5) * np.cos(np.pi * t / 2.0)
    return np.stack([a, b, a + b], axis=-1)


@dataclass(frozen=True)
class TemporalRegressionData:
    """Every node observed at each (irregular) timestamp."""

    graph: SparseGraph
    features: np.ndarray  # (3, 3) one-hot node identities
    times: np.ndarray  # (T,) sorted
    values: np.ndarray  # (T, 3)
    test: np.ndarray  # (T,) bool

    @property
    def train(self) -> np.ndarray:
        return ~self.test

    def window(self, lo: float, hi: float) -> np.ndarray:
        return (self.times >= lo) & (self.times <= hi)

    def observations(self) -> list:
        """(time, node, value, is_test) tuples in time order."""
        return [
            (float(t), node, float(self.values[i, node]), bool(self.test[i]))
            for i, t in enumerate(self.times)
            for node in range(self.values.shape[1])
        ]


def three_node_graph() -> SparseGraph:
    # C (index 2) links A and B; A and B are not adjacent
    return SparseGraph(3, np.array([[0, 2], [1, 2]]))


def gen_three_node(n_obs: int = 60, seed: int = 0, noise_sd: float = 0.5, t_max: float = 12.0) -> TemporalRegressionData:
    if n_obs < 10:
        raise ValueError("need at least 10 observation times")
    rng = np.random.default_rng(seed)
    times = np.sort(rng.uniform(0.0, t_max, size=n_obs))
    eps = noise_sd * rng.standard_normal((n_obs, 3))
    truth = three_node_truth(times)
    values = np.empty_like(truth)
    values[:, 0] = truth[:, 0] + eps[:, 0]
    values[:, 1] = truth[:, 1] + eps[:, 1]
    # C is built from the noisy A and B plus its own noise
    values[:, 2] = values[:, 0] + values[:, 1] + eps[:, 2]
    test = ((times >= INTERP_WINDOW[0]) & (times <= INTERP_WINDOW[1])) | (
        (times >= EXTRAP_WINDOW[0]) & (times <= EXTRAP_WINDOW[1])
    )
    return TemporalRegressionData(three_node_graph(), np.eye(3), times, values, test)


# ----------------------------------------------------------- plain-text format

EDGE_FILE = "edges.txt"
NODE_FILE = "nodes.tsv"


def load_planetoid(dir_path, seed: int = 0) -> NodeClassificationData:
    """Read ``edges.txt`` + ``nodes.tsv`` (features, label, optional split tag)."""
    d = Path(dir_path)
    for name in (EDGE_FILE, NODE_FILE):
        if not (d / name).is_file():
            raise MissingFileError(f"{d / name}: file not found")
    feats, labels, tags = [], [], []
    width = None
    for lineno, raw in enumerate((d / NODE_FILE).read_text().splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        cols = raw.rstrip("\n").split("\t")
        tag = None
        if cols[-1].strip() in SPLITS:
            tag = cols.pop().strip()
        if len(cols) < 2:
            raise RowCountError(f"{d / NODE_FILE}:{lineno}: need at least one feature and a label")
        label = cols.pop().strip()
        if not label:
            raise LabelError(f"{d / NODE_FILE}:{lineno}: empty label")
        try:
            labels.append(int(label))
            feats.append([float(c) for c in cols])
        except ValueError:
            raise DatasetFormatError(f"{d / NODE_FILE}:{lineno}: non-numeric field in {raw!r}") from None
        if labels[-1] < 0:
            raise LabelError(f"{d / NODE_FILE}:{lineno}: negative label")
        if width is None:
            width = len(cols)
        elif len(cols) != width:
            raise RowCountError(f"{d / NODE_FILE}:{lineno}: expected {width} features, found {len(cols)}")
        tags.append(tag)
    n = len(labels)
    if n == 0:
        raise RowCountError(f"{d / NODE_FILE}: no node rows")
    try:
        graph = read_edge_list(d / EDGE_FILE, n=n)
    except ValueError as exc:
        raise EdgeIndexError(str(exc)) from exc
    if any(t is not None for t in tags):
        masks = [np.array([t == s for t in tags]) for s in SPLITS]
    else:
        masks = _split_masks(np.random.default_rng(seed), n, 0.6, 0.2)
    return NodeClassificationData(graph, np.array(feats), np.array(labels, dtype=np.int64), *masks)


def export_planetoid(data: NodeClassificationData, dir_path) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    write_edge_list(data.graph, d / EDGE_FILE)
    lines = []
    for i in range(data.n):
        tag = "train" if data.train_mask[i] else "val" if data.val_mask[i] else "test" if data.test_mask[i] else None
        cols = [repr(float(v)) for v in data.features[i]] + [str(int(data.labels[i]))]
        if tag:
            cols.append(tag)
        lines.append("\t".join(cols))
    (d / NODE_FILE).write_text("\n".join(lines) + "\n")


def add_feature_noise(data: NodeClassificationData, sd: float, seed: int = 0) -> NodeClassificationData:
    if sd < 0:
        raise ValueError("noise sd must be non-negative")
    if sd == 0:
        return replace(data, features=data.features.copy())
    noise = np.random.default_rng(seed).normal(0.0, sd, size=data.features.shape)
    return replace(data, features=data.features + noise)
