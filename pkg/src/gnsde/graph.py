"""Graph storage, symmetric GCN normalization and sparse propagation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .autodiff import ShapeError, Tensor, add_row, matmul, record, relu, tanh


class GraphParseError(ValueError):
    """Malformed graph input; the message names the offending line."""


@dataclass(frozen=True)
class SparseGraph:
    """Unweighted graph on nodes ``0..n-1``.

    Edges are canonicalized on construction: self-loops dropped, duplicates
    removed, and for undirected graphs each pair stored once as ``(lo, hi)``.
    """

    n: int
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    undirected: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one node")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ValueError(f"edge index outside [0, {self.n})")
        e = e[e[:, 0] != e[:, 1]]
        if self.undirected:
            e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if e.size else e
        object.__setattr__(self, "edges", e)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def symmetric_pairs(self) -> np.ndarray:
        """Both orientations of every stored edge, without duplicates."""
        e = self.edges
        both = np.concatenate([e, e[:, ::-1]]) if e.size else e
        return np.unique(both, axis=0) if both.size else both

    def degrees(self) -> np.ndarray:
        pairs = self.symmetric_pairs()
        return np.bincount(pairs[:, 0], minlength=self.n) if pairs.size else np.zeros(self.n, dtype=np.int64)

    def permuted(self, perm) -> "SparseGraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        return SparseGraph(self.n, perm[self.edges] if self.edges.size else self.edges, self.undirected)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """CSR form of D^-1/2 (A + I) D^-1/2; columns sorted within each row."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        out[rows, self.indices] = self.values
        return out

    def entry(self, i: int, j: int) -> float:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        k = np.searchsorted(self.indices[lo:hi], j)
        if k < hi - lo and self.indices[lo + k] == j:
            return float(self.values[lo + k])
        return 0.0


def normalize(g: SparseGraph) -> NormalizedAdjacency:
    """Kipf-Welling propagation operator with self-loops.

    Directed graphs are symmetrized first, so the result is always symmetric.
    """
    pairs = g.symmetric_pairs()
    loops = np.stack([np.arange(g.n), np.arange(g.n)], axis=1)
    allp = np.concatenate([pairs.reshape(-1, 2), loops])
    order = np.lexsort((allp[:, 1], allp[:, 0]))
    allp = allp[order]
    deg = np.bincount(allp[:, 0], minlength=g.n).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    values = inv_sqrt[allp[:, 0]] * inv_sqrt[allp[:, 1]]
    indptr = np.zeros(g.n + 1, dtype=np.int64)
    np.cumsum(np.bincount(allp[:, 0], minlength=g.n), out=indptr[1:])
    return NormalizedAdjacency(
        g.n,
        indptr,
        np.ascontiguousarray(allp[:, 1], dtype=np.int64),
        np.ascontiguousarray(values),
    )


def spmm(adj: NormalizedAdjacency, x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[0] != adj.n:
        raise ShapeError(f"spmm: adjacency has {adj.n} nodes, features have shape {x.shape}")

    def prop(m):
        return _kernels.csr_matmul(adj.indptr, adj.indices, adj.values, np.ascontiguousarray(m))

    # the operator is symmetric, so it is its own adjoint
    return record(prop(x.data), (x,), lambda g: (prop(g),), "spmm")


_ACTIVATIONS = {
    None: lambda t: t,
    "linear": lambda t: t,
    "identity": lambda t: t,
    "tanh": tanh,
    "relu": relu,
}


def activation(name):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


def gcn_layer(adj: NormalizedAdjacency, x: Tensor, W: Tensor, b: Tensor | None = None, act=None) -> Tensor:
    """``act(Â x W + b)``."""
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"gcn_layer: features {x.shape} do not fit weights {W.shape}")
    h = spmm(adj, matmul(x, W))
    if b is not None:
        h = add_row(h, b)
    return activation(act)(h)


def read_edge_list(path, n: int | None = None, undirected: bool = True) -> SparseGraph:
    """Parse ``src dst`` lines (0-based); ``#`` starts a comment."""
    edges = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphParseError(f"{path}:{lineno}: expected 'src dst', got {raw!r}")
        try:
            s, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphParseError(f"{path}:{lineno}: non-integer node index in {raw!r}") from None
        if s < 0 or d < 0 or (n is not None and (s >= n or d >= n)):
            raise GraphParseError(f"{path}:{lineno}: node index out of range in {raw!r}")
        edges.append((s, d))
    if n is None:
        n = 1 + max((max(e) for e in edges), default=0)
    return SparseGraph(n, np.array(edges, dtype=np.int64).reshape(-1, 2), undirected)


def write_edge_list(g: SparseGraph, path) -> None:
    lines = [f"# {g.n} nodes, {g.num_edges} edges"]
    lines += [f"{s} {d}" for s, d in g.edges]
    Path(path).write_text("\n".join(lines) + "\n")
