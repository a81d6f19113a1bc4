"""Monte Carlo cascade simulators (IC, LT, SIS) and exact small-instance oracles.

All simulators advance many independent runs at once: state is a
(runs, n) boolean matrix and one synchronous round costs a few sparse
products.  Randomness comes from Philox streams keyed by
(master seed, chunk index), so results do not depend on thread count.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import Graph

CHUNK = 2048
KINDS = ("ic", "lt", "sis")


@dataclass(frozen=True)
class DiffusionModelSpec:
    """Diffusion model and its parameters.

    ``ic_prob`` is a scalar edge probability, or None for the weighted
    cascade p(u->v) = 1/deg(v).  ``lt_weights`` holds one weight per arc
    (see :meth:`Graph.arcs`), or None for w(u->v) = 1/deg(v).
    ``lt_thresholds`` pins the per-vertex thresholds instead of redrawing
    them each run.
    """

    kind: str = "ic"
    ic_prob: float | None = None
    lt_weights: tuple | None = None
    lt_thresholds: tuple | None = None
    sis_infect: float = 0.1
    sis_recover: float = 0.3
    horizon: int = 100

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown diffusion model {self.kind!r}")
        for name in ("sis_infect", "sis_recover"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.ic_prob is not None and not 0.0 <= self.ic_prob <= 1.0:
            raise ValueError("ic_prob must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        for name in ("lt_weights", "lt_thresholds"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(float(x) for x in val))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "ic_prob": self.ic_prob, "lt_weights": self.lt_weights,
            "lt_thresholds": self.lt_thresholds, "sis_infect": self.sis_infect,
            "sis_recover": self.sis_recover, "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionModelSpec":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def arc_probs(self, g: Graph) -> np.ndarray:
        src, dst = g.arcs()
        if self.kind == "ic" and self.ic_prob is not None:
            return np.full(src.size, float(self.ic_prob))
        if self.kind == "sis":
            return np.full(src.size, self.sis_infect)
        return 1.0 / g.degree[dst]

    def arc_weights(self, g: Graph) -> np.ndarray:
        src, dst = g.arcs()
        if self.lt_weights is None:
            return 1.0 / g.degree[dst]
        w = np.asarray(self.lt_weights)
        if w.shape != src.shape or np.any(w < 0):
            raise ValueError(f"lt_weights needs {src.size} non-negative arc weights")
        incoming = np.bincount(dst, weights=w, minlength=g.n)
        if np.any(incoming > 1 + 1e-12):
            raise ValueError("incoming LT weights exceed 1")
        return w


@dataclass
class CascadeResult:
    ever_active: np.ndarray
    steps_run: int

    @property
    def spread(self) -> int:
        return int(self.ever_active.sum())


@dataclass
class GroundTruthSample:
    seed_vector: np.ndarray
    y: np.ndarray
    runs: int = 1
    spec_hash: str = ""

    @property
    def seeds(self) -> list[int]:
        return np.flatnonzero(self.seed_vector > 0.5).tolist()


def _seed_matrix(n: int, seeds, runs: int) -> np.ndarray:
    seeds = np.unique(np.asarray(list(seeds), dtype=np.int64))
    if seeds.size and (seeds[0] < 0 or seeds[-1] >= n):
        raise IndexError("seed id out of range")
    state = np.zeros((runs, n), dtype=bool)
    state[:, seeds] = True
    return state


def _arc_matrix(g: Graph) -> sp.csr_matrix:
    """(2m, n) incidence of arc -> target, for scattering arc events onto targets."""
    _, dst = g.arcs()
    return sp.csr_matrix((np.ones(dst.size), (np.arange(dst.size), dst)), shape=(dst.size, g.n))


def _run_ic(g, spec, state, rng):
    src, _ = g.arcs()
    p = spec.arc_probs(g)
    to_dst = _arc_matrix(g)
    active, frontier = state.copy(), state.copy()
    steps = 0
    while frontier.any():
        tries = frontier[:, src] & (rng.random((state.shape[0], src.size)) < p)
        hit = np.asarray(tries.astype(np.float64) @ to_dst) > 0
        frontier = hit & ~active
        active |= frontier
        steps += 1
    return active, steps


def _run_lt(g, spec, state, rng):
    src, dst = g.arcs()
    w = sp.csr_matrix((spec.arc_weights(g), (src, dst)), shape=(g.n, g.n))
    runs = state.shape[0]
    if spec.lt_thresholds is not None:
        theta = np.broadcast_to(np.asarray(spec.lt_thresholds), (runs, g.n))
    else:
        theta = rng.random((runs, g.n))
    active = state.copy()
    steps = 0
    while True:
        pressure = np.asarray(active.astype(np.float64) @ w)
        new = (pressure >= theta) & ~active
        if not new.any():
            return active, steps
        active |= new
        steps += 1


def _run_sis(g, spec, state, rng):
    src, _ = g.arcs()
    to_dst = _arc_matrix(g)
    infected, ever = state.copy(), state.copy()
    steps = 0
    while steps < spec.horizon and infected.any():
        tries = infected[:, src] & (rng.random((state.shape[0], src.size)) < spec.sis_infect)
        caught = np.asarray((tries.astype(np.float64) @ to_dst) > 0) & ~infected
        stay = infected & (rng.random(infected.shape) >= spec.sis_recover)
        infected = stay | caught
        ever |= caught
        steps += 1
    return ever, steps


_RUNNERS = {"ic": _run_ic, "lt": _run_lt, "sis": _run_sis}


def chunk_rng(master_seed: int, chunk: int) -> np.random.Generator:
    key = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, chunk])
    return np.random.Generator(np.random.Philox(key))


def simulate_batch(g: Graph, spec: DiffusionModelSpec, seeds, runs: int, master_seed: int = 0,
                   threads: int = 1) -> tuple[np.ndarray, int]:
    """Ever-active matrix of shape (runs, n) and the longest run length."""
    if runs < 1:
        raise ValueError("runs must be positive")
    if g.m == 0:
        return _seed_matrix(g.n, seeds, runs), 0
    runner = _RUNNERS[spec.kind]
    starts = list(range(0, runs, CHUNK))

    def work(i):
        size = min(CHUNK, runs - starts[i])
        return runner(g, spec, _seed_matrix(g.n, seeds, size), chunk_rng(master_seed, i))

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(len(starts))))
    else:
        parts = [work(i) for i in range(len(starts))]
    return np.concatenate([p[0] for p in parts]), max(p[1] for p in parts)


def _master_seed(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    return int(rng)


def simulate_once(g: Graph, spec: DiffusionModelSpec, seeds, rng) -> CascadeResult:
    if len(list(seeds)) == 0:
        raise ValueError("seed set must be nonempty")
    ever, steps = simulate_batch(g, spec, seeds, 1, _master_seed(rng))
    return CascadeResult(ever[0], steps)


def estimate_sigma(g: Graph, spec: DiffusionModelSpec, seeds, runs: int = 100, rng=0,
                   threads: int = 1) -> tuple[float, float]:
    """Sample mean and standard error of the spread over ``runs`` cascades."""
    ever, _ = simulate_batch(g, spec, seeds, runs, _master_seed(rng), threads)
    spread = ever.sum(axis=1).astype(np.float64)
    se = float(spread.std(ddof=1) / np.sqrt(runs)) if runs > 1 else 0.0
    return float(spread.mean()), se


def activation_probabilities(g: Graph, spec: DiffusionModelSpec, seeds, runs: int, rng=0,
                             threads: int = 1) -> np.ndarray:
    ever, _ = simulate_batch(g, spec, seeds, runs, _master_seed(rng), threads)
    return ever.mean(axis=0)


def _reach_count(n, seeds, src, dst, live):
    """Reachable-set sizes for a batch of live-arc masks, shape (configs, arcs)."""
    reach = np.zeros((live.shape[0], n), dtype=bool)
    reach[:, list(seeds)] = True
    for _ in range(n):
        grown = reach.copy()
        for a in range(src.size):
            grown[:, dst[a]] |= reach[:, src[a]] & live[:, a]
        if np.array_equal(grown, reach):
            break
        reach = grown
    return reach


def exact_ic_probabilities(g: Graph, spec: DiffusionModelSpec, seeds, max_edges: int = 20) -> np.ndarray:
    """Exact per-vertex activation probabilities by live-edge enumeration.

    With symmetric probabilities each undirected edge is tried at most once
    (by whichever endpoint activates first), so one coin per edge suffices;
    otherwise every arc gets its own coin.
    """
    if spec.kind != "ic":
        raise ValueError("live-edge enumeration here is for IC")
    p_arc = spec.arc_probs(g)
    m = g.m
    symmetric = np.allclose(p_arc[:m], p_arc[m:])
    units = m if symmetric else 2 * m
    if units > max_edges:
        raise ValueError(f"instance too large for enumeration ({units} coins > {max_edges})")
    if symmetric:
        src = np.concatenate([g.edges[:, 0], g.edges[:, 1]])
        dst = np.concatenate([g.edges[:, 1], g.edges[:, 0]])
        p = p_arc[:m]
    else:
        src, dst = g.arcs()
        p = p_arc
    total = np.zeros(g.n)
    configs = 1 << units
    block = 1 << 14
    for start in range(0, configs, block):
        ids = np.arange(start, min(configs, start + block), dtype=np.int64)
        bits = ((ids[:, None] >> np.arange(units)) & 1).astype(bool)
        prob = np.prod(np.where(bits, p, 1.0 - p), axis=1)
        live = np.concatenate([bits, bits], axis=1) if symmetric else bits
        reach = _reach_count(g.n, seeds, src, dst, live)
        total += prob @ reach
    return total


def exact_sigma_ic(g: Graph, spec: DiffusionModelSpec, seeds, max_edges: int = 20) -> float:
    return float(exact_ic_probabilities(g, spec, seeds, max_edges).sum())


def exact_sigma_lt(g: Graph, spec: DiffusionModelSpec, seeds, max_configs: int = 1 << 20) -> float:
    """Exact LT spread via the live-edge characterization.

    Each vertex independently keeps at most one incoming arc, arc u->v with
    probability w(u->v); the active set is what the seeds reach.
    """
    if spec.kind != "lt":
        raise ValueError("exact_sigma_lt needs an LT spec")
    src, dst = g.arcs()
    w = spec.arc_weights(g)
    choices = []
    for v in range(g.n):
        arcs = np.flatnonzero(dst == v)
        opts = [(-1, 1.0 - w[arcs].sum())] + [(int(a), float(w[a])) for a in arcs]
        choices.append(opts)
    if np.prod([len(c) for c in choices], dtype=float) > max_configs:
        raise ValueError("instance too large for enumeration")
    total = 0.0
    seeds = set(int(s) for s in seeds)
    for combo in itertools.product(*choices):
        prob = float(np.prod([c[1] for c in combo]))
        if prob == 0.0:
            continue
        parent = {v: int(src[a]) for v, (a, _) in enumerate(combo) if a >= 0}
        count = 0
        for v in range(g.n):
            seen, x = set(), v
            while x not in seeds and x in parent and x not in seen:
                seen.add(x)
                x = parent[x]
            count += x in seeds
        total += prob * count
    return total


def make_ground_truth(g: Graph, spec: DiffusionModelSpec, n_samples: int, seed_size_range=(1, 1),
                      runs: int = 100, rng=0, threads: int = 1) -> list[GroundTruthSample]:
    """Random seed sets with their empirical per-vertex activation probabilities."""
    lo, hi = seed_size_range
    if not 1 <= lo <= hi <= g.n:
        raise ValueError(f"seed size range {seed_size_range} not within [1, {g.n}]")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    out = []
    for _ in range(n_samples):
        size = int(rng.integers(lo, hi + 1))
        seeds = np.sort(rng.choice(g.n, size=size, replace=False))
        y = activation_probabilities(g, spec, seeds, runs, rng, threads)
        vec = np.zeros(g.n)
        vec[seeds] = 1.0
        out.append(GroundTruthSample(vec, y, runs, spec.digest()))
    return out


def write_ground_truth(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            rec = {"seeds": s.seeds, "Y": [float(v) for v in s.y], "runs": s.runs, "spec": s.spec_hash}
            fh.write(json.dumps(rec) + "\n")


class CorruptRecord(ValueError):
    def __init__(self, index: int, msg: str):
        super().__init__(f"record {index}: {msg}")
        self.index = index


def read_ground_truth(path, n: int | None = None) -> list[GroundTruthSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                y = np.asarray(rec["Y"], dtype=float)
                seeds = np.asarray(rec["seeds"], dtype=np.int64)
                runs = int(rec["runs"])
            except (ValueError, KeyError, TypeError) as exc:
                raise CorruptRecord(i, str(exc)) from exc
            size = n if n is not None else y.size
            if y.size != size or np.any((y < 0) | (y > 1)) or runs < 1:
                raise CorruptRecord(i, "Y must hold one probability per vertex and runs must be positive")
            if seeds.size and (seeds.min() < 0 or seeds.max() >= size):
                raise CorruptRecord(i, "seed id out of range")
            vec = np.zeros(size)
            vec[seeds] = 1.0
            out.append(GroundTruthSample(vec, y, runs, rec.get("spec", "")))
    return out
