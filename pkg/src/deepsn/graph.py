"""Undirected simple graphs with a canonical edge order.

Every per-edge array in the package (restriction maps, sheaf coefficients,
cascade probabilities, partition weights) is indexed by the position of the
edge in ``Graph.edges``, which is always the lexicographically sorted list of
``(min, max)`` pairs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Raised for malformed edge-list input."""


@dataclass(frozen=True, eq=False)
class Graph:
    n_vertices: int
    edges: np.ndarray  # (m, 2) int64, rows sorted, u < v
    indptr: np.ndarray  # CSR row pointers, length n + 1
    indices: np.ndarray  # CSR column indices, sorted per row
    labels: tuple = field(default=())  # original label of each dense id

    @classmethod
    def from_edges(cls, n: int, pairs: Iterable[Sequence[int]], labels: Sequence = ()) -> "Graph":
        arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise ValueError(f"edge endpoint outside [0, {n})")
        arr = arr[arr[:, 0] != arr[:, 1]]
        arr = np.sort(arr, axis=1)
        arr = np.unique(arr, axis=0) if len(arr) else arr
        edges = np.ascontiguousarray(arr, dtype=np.int64)
        src = np.concatenate([edges[:, 0], edges[:, 1]])
        dst = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
        adj.sort_indices()
        edges.setflags(write=False)
        indptr = adj.indptr.astype(np.int64)
        indices = adj.indices.astype(np.int64)
        indptr.setflags(write=False)
        indices.setflags(write=False)
        labels = tuple(labels) if labels else tuple(range(n))
        return cls(n, edges, indptr, indices, labels)

    @property
    def n(self) -> int:
        return self.n_vertices

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        if not 0 <= v < self.n_vertices:
            raise IndexError(f"vertex {v} out of range [0, {self.n_vertices})")
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def adjacency(self, weights: np.ndarray | None = None) -> sp.csr_matrix:
        """Symmetric sparse adjacency, optionally carrying per-edge weights."""
        w = np.ones(self.m) if weights is None else np.asarray(weights, dtype=float)
        u, v = self.edges[:, 0], self.edges[:, 1]
        a = sp.csr_matrix(
            (np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(self.n, self.n),
        )
        a.sort_indices()
        return a

    def arcs(self) -> tuple[np.ndarray, np.ndarray]:
        """Both orientations of every edge as (source, target) arrays of length 2m."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        return np.concatenate([u, v]), np.concatenate([v, u])

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel vertex ``v`` as ``perm[v]``."""
        perm = np.asarray(perm)
        return Graph.from_edges(self.n, perm[self.edges])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.edges, other.edges)

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m})"


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    base: Graph
    weight: np.ndarray

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def m(self) -> int:
        return self.base.m

    def adjacency(self) -> sp.csr_matrix:
        return self.base.adjacency(self.weight)


def neighbors(g: Graph, v: int) -> np.ndarray:
    return g.neighbors(v)


def build_weighted(g: Graph, edge_weights) -> WeightedGraph:
    w = np.array(edge_weights, dtype=float).reshape(-1)
    if len(w) != g.m:
        raise ValueError(f"expected {g.m} edge weights, got {len(w)}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("edge weights must be finite and non-negative")
    w.setflags(write=False)
    return WeightedGraph(g, w)


def load_edge_list(path) -> Graph:
    """Read a whitespace-separated edge list.

    Lines starting with ``#`` or ``%`` are comments. Extra tokens after the
    first two (weights, timestamps) are ignored. Labels are compacted to
    dense ids in first-seen order unless they already are exactly
    ``0..n-1``. Self-loops are dropped with a warning.
    """
    ids: dict[int, int] = {}
    pairs = []
    loops = 0
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s[0] in "#%":
                continue
            tok = s.split()
            if len(tok) < 2:
                raise GraphFormatError(f"{path}:{lineno}: expected two vertex ids")
            try:
                a, b = int(tok[0]), int(tok[1])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer vertex id") from None
            if a == b:
                loops += 1
                ids.setdefault(a, len(ids))
                continue
            pairs.append((ids.setdefault(a, len(ids)), ids.setdefault(b, len(ids))))
    if loops:
        log.warning("%s: dropped %d self-loop lines", path, loops)
    labels = list(ids)
    n = len(labels)
    if sorted(labels) == list(range(n)):
        # already dense: keep ids so that write/load round-trips exactly
        remap = np.asarray(labels, dtype=np.int64)
        pairs = [(remap[a], remap[b]) for a, b in pairs]
        labels = list(range(n))
    return Graph.from_edges(n, pairs, labels=labels)


def write_edge_list(g: Graph, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write(f"# n={g.n} m={g.m}\n")
        for v in np.flatnonzero(g.degree == 0):
            # isolated vertex: a self-loop line registers the id and is dropped on load
            fh.write(f"{v} {v}\n")
        for u, v in g.edges:
            fh.write(f"{u} {v}\n")
