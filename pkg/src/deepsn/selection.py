"""Seed selection: weighted partitioning, budgets, a learned scorer and top-k picks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cascade import DiffusionModelSpec, estimate_sigma
from .community import Partition, louvain
from .graph import Graph, WeightedGraph, build_weighted
from .model import GnnParams, GraphContext, forward
from .training import ParameterStore, adam_step

log = logging.getLogger(__name__)

VARIANTS = ("deepsn", "sp", "wc", "wsa")
SP_THRESHOLD = 0.5


def build_gw(g: Graph, psi, sparsify: bool = False) -> WeightedGraph:
    """Weighted graph from sheaf coefficients; ``sparsify`` keeps edges with psi > 0.5 at weight 1."""
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (g.m,):
        raise ValueError(f"expected {g.m} coefficients, got shape {psi.shape}")
    if np.any(psi < 0) or np.any(psi > 1) or not np.all(np.isfinite(psi)):
        raise ValueError("sheaf coefficients must lie in [0, 1]")
    if not sparsify:
        return build_weighted(g, psi)
    kept = g.edges[psi > SP_THRESHOLD]
    base = Graph.from_edges(g.n, kept, g.labels)
    return build_weighted(base, np.ones(base.m))


@dataclass
class BudgetAllocation:
    k: int
    per_community: np.ndarray

    @property
    def total(self) -> int:
        return int(self.per_community.sum())


def allocate_budget(p: Partition, k: int) -> BudgetAllocation:
    """Proportional budgets: floors first, then one extra seat by largest remainder.

    Quotas are k*|V_i|/n; a community never exceeds the ceiling of its quota.
    Remainders are compared exactly as integers, ties going to the lower id.
    """
    sizes = p.sizes().astype(np.int64)
    n = int(sizes.sum())
    if not 0 <= k <= n:
        raise ValueError(f"budget {k} outside [0, {n}]")
    num = k * sizes
    base = num // n
    rem = num % n
    left = k - int(base.sum())
    order = np.lexsort((np.arange(p.r), -rem))
    extra = np.zeros(p.r, dtype=np.int64)
    for c in order:
        if left == 0 or rem[c] == 0:
            break
        extra[c] = 1
        left -= 1
    return BudgetAllocation(k, base + extra)


def select_seeds(scores, partition: Partition, budget: BudgetAllocation) -> list[int]:
    """Top k_i vertices by score inside each community; ties go to the lower id."""
    scores = np.asarray(scores, dtype=float)
    chosen = []
    for c in range(partition.r):
        members = partition.members(c)
        want = int(budget.per_community[c])
        if want > members.size:
            raise ValueError(f"community {c} has {members.size} vertices but budget {want}")
        order = np.lexsort((members, -scores[members]))
        chosen.extend(members[order[:want]].tolist())
    return sorted(chosen)


def _segment_threshold(z, comm, budgets, temperature, iters=200):
    """Per-community t with sum of sigmoid((z - t) / T) equal to the budget."""
    r = budgets.size
    lo = np.full(r, np.inf)
    hi = np.full(r, -np.inf)
    np.minimum.at(lo, comm, z)
    np.maximum.at(hi, comm, z)
    lo, hi = lo - 40.0 * temperature, hi + 40.0 * temperature
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        mass = np.bincount(comm, weights=_sig((z - mid[comm]) / temperature), minlength=r)
        too_much = mass > budgets
        lo = np.where(too_much, mid, lo)
        hi = np.where(too_much, hi, mid)
    return 0.5 * (lo + hi)


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def soft_top_k(logits: Tensor, comm: np.ndarray, budgets: np.ndarray, temperature: float = 1.0) -> Tensor:
    """Relaxed per-community top-k: sigmoid((z - t_c) / T) with t_c set so each community sums to k_c.

    Entries stay in [0, 1]; empty and full budgets give exact 0 / 1 vectors.
    The threshold is differentiated implicitly, so the adjoint is the
    sigmoid slope projected onto budget-preserving directions.
    """
    logits = ad.as_tensor(logits)
    comm = np.asarray(comm)
    budgets = np.asarray(budgets, dtype=float)
    r = budgets.size
    sizes = np.bincount(comm, minlength=r)
    z = logits.value
    t = _segment_threshold(z, comm, budgets, temperature)
    s = _sig((z - t[comm]) / temperature)
    empty, full = budgets[comm] <= 0, budgets[comm] >= sizes[comm]
    s = np.where(empty, 0.0, np.where(full, 1.0, s))
    slope = np.where(empty | full, 0.0, s * (1.0 - s) / temperature)

    def back(g):
        num = np.bincount(comm, weights=slope * g, minlength=r)
        den = np.bincount(comm, weights=slope, minlength=r)
        mean = np.divide(num, den, out=np.zeros(r), where=den > 0)
        return (slope * (g - mean[comm]),)

    return ad.custom(s, (logits,), back)


@dataclass
class ScorerParams:
    tensors: dict

    @classmethod
    def init(cls, in_dim: int, hidden: int, rng: np.random.Generator,
             warm_column: int | None = None) -> "ScorerParams":
        """Tanh MLP plus a linear skip path.

        The skip weights start at zero, or at the unit vector on
        ``warm_column`` so the initial ranking follows that feature.
        """
        lim1 = np.sqrt(6.0 / (in_dim + hidden))
        skip = np.zeros(in_dim)
        if warm_column is not None:
            skip[warm_column] = 1.0
        t = {
            "w0": skip,
            "w1": rng.uniform(-lim1, lim1, (in_dim, hidden)),
            "b1": np.zeros(hidden),
            # small but nonzero, so the hidden layer receives gradient from the first step
            "w2": rng.normal(0.0, 0.1, hidden),
            "b2": np.zeros(()),
        }
        return cls({k: Tensor(v, requires_grad=True, name=k) for k, v in t.items()})

    def logits(self, feats) -> Tensor:
        h = ad.tanh(ad.linear(feats, self.tensors["w1"], self.tensors["b1"]))
        return ad.matmul(h, self.tensors["w2"]) + ad.matmul(feats, self.tensors["w0"]) + self.tensors["b2"]


def standardize(logits: Tensor) -> Tensor:
    """Zero-mean, unit-variance logits, so the temperature alone sets how hard the relaxation is."""
    n = logits.value.size
    centred = logits - ad.sum_(logits) * (1.0 / n)
    return centred / ad.sqrt(ad.sum_(centred * centred) * (1.0 / n) + 1e-12)


def frozen(params: GnnParams) -> GnnParams:
    """Copy of the estimator whose tensors take no gradient."""
    return GnnParams({k: Tensor(t.value.copy(), name=k) for k, t in params.tensors.items()}, params.config, params.n)


def probe(estimator: GnnParams, g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Sheaf coefficients and final embeddings from an all-zero seed forward pass."""
    res = forward(np.zeros(g.n), g, frozen(estimator))
    return res.sheaf.psi.value[0], res.x_final.value[0].reshape(g.n, -1)


DEGREE_COLUMN = -2  # position of the normalized degree in scorer_features


def scorer_features(embedding: np.ndarray, g: Graph, partition: Partition) -> np.ndarray:
    deg = g.degree.astype(float)
    deg = deg / max(deg.max(initial=0.0), 1.0)
    frac = partition.sizes()[partition.assignment] / g.n
    emb = embedding - embedding.mean(axis=0)
    scale = emb.std(axis=0)
    emb = emb / np.where(scale > 0, scale, 1.0)
    return np.column_stack([emb, deg, frac])


@dataclass
class ScorerConfig:
    epochs: int = 150
    lr: float = 0.01
    hidden: int = 32
    temperature: float = 1.0
    patience: int = 30
    warm_start: bool = True


@dataclass
class ScorerHistory:
    losses: list = field(default_factory=list)
    spreads: list = field(default_factory=list)
    best_epoch: int = -1


def train_scorer(g: Graph, partition: Partition, estimator: GnnParams, budget: BudgetAllocation,
                 feats: np.ndarray, config: ScorerConfig | None = None, rng=None,
                 estimator_graph: Graph | None = None) -> tuple[ScorerParams, ScorerHistory]:
    """Fit the scorer so the relaxed seed vector maximizes estimated spread.

    Loss is n minus the summed estimator activations on the relaxed seed
    vector; the estimator is frozen so gradients reach only the scorer
    weights.  The spread estimator is concave in seed mass, so the relaxed
    optimum spreads mass over many near-tied vertices.  The kept snapshot is
    therefore the one whose hard per-community top-k has the largest
    estimated spread, and patience counts epochs without a new best.  With
    ``warm_start`` the skip path starts on the degree feature, so training
    begins near the per-community degree ranking and moves only where the
    estimator rewards it.
    """
    config = config or ScorerConfig()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    eg = estimator_graph or g
    if estimator.n != eg.n:
        raise ValueError(f"estimator was trained for n={estimator.n}, graph has n={eg.n}")
    est = frozen(estimator)
    ctx = GraphContext(eg)
    warm = DEGREE_COLUMN if config.warm_start and feats.shape[1] >= -DEGREE_COLUMN else None
    scorer = ScorerParams.init(feats.shape[1], config.hidden, rng, warm)
    store = ParameterStore(scorer.tensors)
    x = ad.constant(feats)
    hist = ScorerHistory()
    best, best_snap, since = -np.inf, store.snapshot(), 0
    comm, budgets = partition.assignment, budget.per_community
    for epoch in range(config.epochs):
        store.zero_grad()
        logits = scorer.logits(x)
        relaxed = soft_top_k(standardize(logits), comm, budgets, config.temperature)
        loss = float(g.n) - ad.sum_(forward(relaxed, ctx, est).s_hat)
        ad.backward(loss)
        hard = np.zeros(eg.n)
        hard[select_seeds(logits.value, partition, budget)] = 1.0
        spread = float(forward(hard, ctx, est).s_hat.value.sum())
        hist.losses.append(float(loss.value))
        hist.spreads.append(spread)
        if spread > best + 1e-12:
            best, best_snap, since, hist.best_epoch = spread, store.snapshot(), 0, epoch
        else:
            since += 1
            if since >= config.patience:
                break
        adam_step(store, config.lr)
    store.restore(best_snap)
    return scorer, hist


def estimated_spread(estimator: GnnParams, g: Graph, seeds) -> float:
    vec = np.zeros(g.n)
    vec[list(seeds)] = 1.0
    return float(forward(vec, g, frozen(estimator)).s_hat.value.sum())


def evaluate_seed_set(g: Graph, spec: DiffusionModelSpec, seeds, runs: int = 100, rng=0,
                      threads: int = 1) -> tuple[float, float]:
    """Spread as a percentage of n, with its standard error."""
    if len(list(seeds)) == 0:
        return 0.0, 0.0
    mean, se = estimate_sigma(g, spec, seeds, runs, rng, threads)
    return 100.0 * mean / g.n, 100.0 * se / g.n


def top_degree_seeds(g: Graph, k: int) -> list[int]:
    order = np.lexsort((np.arange(g.n), -g.degree))
    return sorted(order[:k].tolist())


def random_seeds(g: Graph, k: int, rng) -> list[int]:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return sorted(rng.choice(g.n, size=k, replace=False).tolist())


def budget_from_percent(n: int, pct: float) -> int:
    if not 0 < pct <= 100:
        raise ValueError("budget percentage must lie in (0, 100]")
    return min(n, max(1, int(round(n * pct / 100.0))))


@dataclass
class SelectionResult:
    seeds: list
    partition: Partition
    budget: BudgetAllocation
    est_spread: float
    scorer_history: ScorerHistory


def run_selection(g: Graph, estimator: GnnParams, k: int, variant: str = "deepsn", resolution: float = 1.0,
                  scorer_config: ScorerConfig | None = None, seed: int = 0,
                  estimator_on_gw: bool = False) -> SelectionResult:
    """Partition, allocate, train the scorer and pick seeds for one variant.

    Variants: ``deepsn`` partitions the coefficient-weighted graph, ``sp``
    the thresholded one, ``wc`` treats the whole graph as one community and
    ``wsa`` partitions the plain adjacency.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    psi, emb = probe(estimator, g)
    if variant == "deepsn":
        gw = build_gw(g, psi)
    elif variant == "sp":
        gw = build_gw(g, psi, sparsify=True)
    else:
        gw = build_weighted(g, np.ones(g.m))
    if variant == "wc":
        part = Partition(np.zeros(g.n, dtype=np.int64), 1, 0.0)
    else:
        part = louvain(gw, resolution, seed=seed)
    budget = allocate_budget(part, k)
    feats = scorer_features(emb, g, part)
    eg = gw.base if estimator_on_gw else g
    scorer, hist = train_scorer(g, part, estimator, budget, feats, scorer_config, np.random.default_rng(seed),
                                estimator_graph=eg)
    scores = scorer.logits(ad.constant(feats)).value
    seeds = select_seeds(scores, part, budget)
    return SelectionResult(seeds, part, budget, estimated_spread(estimator, eg, seeds), hist)
