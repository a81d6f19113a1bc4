"""Dataset registry: where each benchmark graph lives and how to load it.

Edge lists are looked up in ``$DEEPSN_DATA``, then the packaged ``data``
directory, then ``~/.cache/deepsn``.  Files may be plain edge lists
(``<name>.txt``/``.edges``) or scipy sparse adjacency archives (``.npz``).
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Graph, load_edge_list


class DatasetUnavailable(FileNotFoundError):
    pass


@dataclass(frozen=True)
class DatasetInfo:
    name: str
    n: int
    m: int
    source: str
    ci: bool = True  # part of the acceptance runs


REGISTRY = {
    "jazz": DatasetInfo("jazz", 198, 2742,
                        "Jazz musicians collaboration network (Gleiser and Danon); e.g. "
                        "https://networkrepository.com/jazz.php or the DeepIM data folder"),
    "netscience": DatasetInfo("netscience", 1565, 13532,
                              "Network Science coauthorship graph as distributed with the DeepIM "
                              "benchmark data (https://github.com/triplej0079/DeepIM)"),
    "cora_ml": DatasetInfo("cora_ml", 2810, 7981,
                           "Cora-ML citation graph, largest connected component "
                           "(https://github.com/abojchevski/graph2gauss, data/cora_ml.npz)"),
    "power_grid": DatasetInfo("power_grid", 4941, 6594,
                              "US western power grid (Watts and Strogatz); e.g. "
                              "http://konect.cc/networks/opsahl-powergrid/"),
    "digg": DatasetInfo("digg", 279613, 1170689, "Digg friendship graph (https://www.isi.edu/~lerman/downloads/digg2009.html)",
                        ci=False),
    "random": DatasetInfo("random", 50000, 250000, "synthetic Erdos-Renyi graph, generated locally", ci=False),
}

ALIASES = {"network_science": "netscience", "ns": "netscience", "cora": "cora_ml", "cora-ml": "cora_ml",
           "powergrid": "power_grid", "power-grid": "power_grid"}


def search_dirs() -> list[Path]:
    dirs = []
    env = os.environ.get("DEEPSN_DATA")
    if env:
        dirs.extend(Path(p) for p in env.split(os.pathsep) if p)
    dirs.append(Path(__file__).parent / "data")
    dirs.append(Path.home() / ".cache" / "deepsn")
    return dirs


def canonical(name: str) -> str:
    key = name.lower().replace(" ", "_")
    key = ALIASES.get(key, key)
    if key not in REGISTRY:
        raise KeyError(f"unknown dataset {name!r}; known: {', '.join(REGISTRY)}")
    return key


def locate(name: str) -> Path | None:
    key = canonical(name)
    for d in search_dirs():
        for ext in (".txt", ".edges", ".edgelist", ".npz"):
            p = d / f"{key}{ext}"
            if p.is_file():
                return p
    return None


def load_npz_adjacency(path) -> Graph:
    adj = sp.load_npz(path).tocoo()
    pairs = np.column_stack([adj.row, adj.col])
    return Graph.from_edges(adj.shape[0], pairs)


def random_graph(n: int = 50000, m: int = 250000, seed: int = 0) -> Graph:
    """Uniform random simple graph with exactly ``m`` edges."""
    rng = np.random.default_rng(seed)
    if m > n * (n - 1) // 2:
        raise ValueError("too many edges for a simple graph")
    keys = np.empty(0, dtype=np.int64)
    while keys.size < m:
        u = rng.integers(0, n, size=2 * (m - keys.size) + 16)
        v = rng.integers(0, n, size=u.size)
        ok = u != v
        lo, hi = np.minimum(u[ok], v[ok]), np.maximum(u[ok], v[ok])
        keys = np.unique(np.concatenate([keys, lo * n + hi]))
    keys = rng.permutation(keys)[:m]
    return Graph.from_edges(n, np.column_stack([keys // n, keys % n]))


def load_dataset(name: str, seed: int = 0) -> Graph:
    key = canonical(name)
    path = locate(key)
    if path is None:
        if key == "random":
            info = REGISTRY[key]
            return random_graph(info.n, info.m, seed)
        info = REGISTRY[key]
        raise DatasetUnavailable(
            f"dataset {key!r} not found; place {key}.txt (edge list) or {key}.npz in one of "
            f"{', '.join(str(d) for d in search_dirs())}. Source: {info.source}"
        )
    if path.suffix == ".npz":
        return load_npz_adjacency(path)
    return load_edge_list(path)


def available(name: str) -> bool:
    key = canonical(name)
    return key == "random" or locate(key) is not None


def load_graph(ref: str, seed: int = 0) -> Graph:
    """A registry name or a path to an edge-list / npz file."""
    p = Path(ref)
    if p.is_file():
        return load_npz_adjacency(p) if p.suffix == ".npz" else load_edge_list(p)
    return load_dataset(ref, seed)
