"""Property suites behind ``deepsn verify`` and the acceptance tests.

Each suite compares the library against an independent route: dense
eigensolves for operator claims, enumeration oracles for the simulators,
central differences for gradients.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import sheaf as sh
from .cascade import DiffusionModelSpec, estimate_sigma, exact_sigma_ic, exact_sigma_lt
from .dynamics import (
    DivergenceError, ReactionParams, check_reaction_bound, check_fixed_point_bound, iterate_to_fixed_point,
    random_connected_bipartite, separability_experiment, symmetric_sheaf,
)
from .graph import Graph
from .model import GnnConfig, GnnParams, GraphContext, estimation_loss, forward
from .training import finite_difference_check

SINGULAR_TOL = 1e-10


@dataclass
class SuiteResult:
    name: str
    passed: bool
    count: int
    failures: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = " ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"{status} {self.name}: {self.count} checks, {len(self.failures)} failures, {self.seconds:.1f}s {extra}".rstrip()


def _fmt(v):
    if not isinstance(v, float):
        return str(v)
    # ratios pressed against a bound of 1 need every digit to show the gap
    return repr(v) if 0.999 < abs(v) < 1.0 else f"{v:.4g}"


def random_graph(rng: np.random.Generator, n_min: int, n_max: int, p: float = 0.4, connected: bool = False) -> Graph:
    n = int(rng.integers(n_min, n_max + 1))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < p]
    if connected:
        perm = rng.permutation(n)
        pairs += [(int(perm[i]), int(perm[rng.integers(0, i)])) for i in range(1, n)]
    return Graph.from_edges(n, pairs)


def dense_sheaf_laplacian(s: sh.Sheaf) -> np.ndarray:
    """L_F built as delta^T diag(psi) delta from an explicit dense coboundary."""
    n, m, d = s.graph.n, s.graph.m, s.stalk_dim
    delta = np.zeros((m * d, n * d))
    for e, (u, v) in enumerate(s.graph.edges):
        delta[e * d:(e + 1) * d, u * d:(u + 1) * d] = s.restriction[e, 0]
        delta[e * d:(e + 1) * d, v * d:(v + 1) * d] = -s.restriction[e, 1]
    weights = np.repeat(s.coeff, d)
    return delta.T @ (weights[:, None] * delta)


def definiteness_suite(n_sheaves: int = 200, seed: int = 0, n_max: int = 16) -> SuiteResult:
    """PD of L_F + eps I by Cholesky agrees with eps > -lambda_min by dense eigensolve."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    failures, count = [], 0
    for i in range(n_sheaves):
        g = random_graph(rng, 2, n_max, p=float(rng.uniform(0.1, 0.6)))
        d = int(rng.integers(1, 3))
        s = sh.Sheaf.random(g, d, rng, symmetric=bool(rng.integers(2)))
        dense = dense_sheaf_laplacian(s)
        lam = float(np.linalg.eigvalsh(dense)[0])
        scale = max(1.0, float(np.abs(dense).max(initial=0.0)))
        if abs(lam) <= SINGULAR_TOL * scale:
            lam = 0.0  # numerically singular: treat the kernel as exact
        lap = sh.assemble_laplacian(s)
        for eps in (-lam - 0.1, -lam + 0.1, 0.0, 1.0):
            count += 1
            expected = eps > -lam
            got = sh.is_positive_definite(sh.shift(lap, eps))
            if got != expected:
                failures.append(f"sheaf {i} (n={g.n}, d={d}) eps={eps:.4g} lambda_min={lam:.4g}: pd={got}")
    return SuiteResult("positive-definite", not failures, count, failures, {}, time.perf_counter() - t0)


def reaction_bound_suite(trials: int = 10_000, seed: int = 0) -> SuiteResult:
    """Block-norm ratios of both reaction terms stay strictly below 1."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 2)])
    rep = check_reaction_bound(None, g, trials, rng, d=2, f=4)
    failures = [f"trial {v['trial']} {v['term']} ratio={v['ratio']:.6g}" for v in rep.violations]
    metrics = {"max_ratio_pointwise": rep.max_ratio_pointwise, "max_ratio_coupled": rep.max_ratio_coupled}
    return SuiteResult("bounded-reaction", rep.ok, trials, failures, metrics, time.perf_counter() - t0)


def fixed_point_suite(points: int = 100, seed: int = 0, tol: float = 1e-8, max_attempts: int = 1000) -> SuiteResult:
    """At converged fixed points the diffusion term is bounded by the reaction amplitudes."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    failures, found, attempts, worst = [], 0, 0, 0.0
    while found < points and attempts < max_attempts:
        attempts += 1
        g = random_graph(rng, 3, 12, p=0.35, connected=True)
        d = int(rng.integers(1, 3))
        f = int(rng.integers(1, 4))
        s = sh.Sheaf.random(g, d, rng)
        op = sh.build_operator(s, epsilon=float(rng.uniform(0.5, 2.0)))
        params = ReactionParams.contractive(g, d, f, rng, alpha=float(rng.uniform(0.2, 1.0)),
                                            beta=float(rng.uniform(-1, 1)), gamma=float(rng.uniform(-1, 1)))
        x0 = rng.normal(size=(g.n * d, f))
        try:
            x, ok, _ = iterate_to_fixed_point(x0, op, params, g, rng.uniform(size=g.n), tol=tol, max_steps=5_000)
        except DivergenceError:
            continue
        if not ok:
            continue
        found += 1
        rep = check_fixed_point_bound(x, op, params, tol)
        worst = max(worst, rep.lhs / max(rep.rhs + rep.slack, 1e-300))
        if not rep.ok:
            failures.append(f"point {found}: lhs={rep.lhs:.6g} rhs={rep.rhs:.6g} slack={rep.slack:.3g}")
    if found < points:
        failures.append(f"only {found} of {points} instances converged in {attempts} attempts")
    metrics = {"attempts": attempts, "max_lhs_over_rhs": worst}
    return SuiteResult("fixed-point-bound", not failures, found, failures, metrics, time.perf_counter() - t0)


def separability_suite(graphs: int = 20, inits: int = 5, seed: int = 0) -> SuiteResult:
    """Plain diffusion collapses bipartite classes; reaction diffusion keeps them apart."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    failures, worst_std, separated, runs = [], 0.0, 0, 0
    for i in range(graphs):
        g = random_connected_bipartite(rng, n_max=20)
        sheaf = symmetric_sheaf(g, rng)
        for _ in range(inits):
            x0 = rng.normal(size=(g.n, 1))
            std = separability_experiment("standard", g, rng, sheaf=sheaf, x0=x0, tol=1e-10)
            rea = separability_experiment("reaction", g, rng, sheaf=sheaf, x0=x0, tol=1e-10)
            runs += 1
            worst_std = max(worst_std, std.gap)
            if std.gap > 1e-6:
                failures.append(f"graph {i}: standard diffusion gap {std.gap:.3g} > 1e-6")
            separated += rea.gap >= 1e-3
    frac = separated / max(runs, 1)
    if frac < 0.95:
        failures.append(f"reaction diffusion separated only {frac:.1%} of runs")
    metrics = {"max_standard_gap": worst_std, "reaction_separated_fraction": frac}
    return SuiteResult("separability", not failures, runs, failures, metrics, time.perf_counter() - t0)


def gradient_suite(probes: int = 50, seed: int = 0, n: int = 12) -> SuiteResult:
    """Reverse-mode gradients of the estimator loss against central differences."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, n, p=0.25, connected=True)
    failures = []
    worst_rel = worst_abs = 0.0
    total = 0
    for d in (1, 2):
        params = GnnParams.init(n, GnnConfig(layers=2, stalk_dim=d, channels=3, hidden_units=8, dropout=0.0), rng)
        seeds = rng.uniform(size=(3, n))
        y = rng.uniform(size=(3, n))
        ctx = GraphContext(g)
        rep = finite_difference_check(params.tensors, lambda: estimation_loss(forward(seeds, ctx, params).s_hat, y),
                                      probes, rng)
        total += rep.probes
        for name, err in rep.max_rel.items():
            worst_rel = max(worst_rel, err)
            if err > 1e-4:
                failures.append(f"d={d} {name}: relative error {err:.3g}")
        for name, err in rep.max_abs_small.items():
            worst_abs = max(worst_abs, err)
            if err > 1e-10:
                failures.append(f"d={d} {name}: absolute error {err:.3g} on a sub-floor gradient")
    metrics = {"max_rel_error": worst_rel, "max_abs_error_small": worst_abs}
    return SuiteResult("gradient-check", not failures, total, failures, metrics, time.perf_counter() - t0)


def simulator_suite(instances: int = 50, runs: int = 100_000, seed: int = 0, mono_graphs: int = 10,
                    threads: int = 1) -> SuiteResult:
    """Monte Carlo IC agrees with live-edge enumeration; IC/LT spread grows with the seed set."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    failures, count, worst_z = [], 0, 0.0
    for i in range(instances):
        g = random_graph(rng, 3, 9, p=0.4)
        while g.m > 12 or g.m == 0:
            g = random_graph(rng, 3, 9, p=0.4)
        seeds = rng.choice(g.n, size=int(rng.integers(1, min(3, g.n) + 1)), replace=False)
        for p in (0.1, 0.5, 0.9):
            spec = DiffusionModelSpec("ic", ic_prob=p)
            exact = exact_sigma_ic(g, spec, seeds)
            mean, se = estimate_sigma(g, spec, seeds, runs, rng=int(rng.integers(2**63)), threads=threads)
            count += 1
            z = abs(mean - exact) / se if se > 0 else (0.0 if abs(mean - exact) < 1e-12 else np.inf)
            worst_z = max(worst_z, z)
            if z > 3.0:
                failures.append(f"instance {i} p={p}: mc={mean:.5f} exact={exact:.5f} se={se:.2g}")
    mono = 0
    for i in range(mono_graphs):
        g = random_graph(rng, 2, 6, p=0.5)
        for kind in ("ic", "lt"):
            spec = DiffusionModelSpec(kind, ic_prob=0.4 if kind == "ic" else None)
            oracle = exact_sigma_ic if kind == "ic" else exact_sigma_lt
            cache = {}
            for mask in range(1 << g.n):
                seeds = [v for v in range(g.n) if mask >> v & 1]
                cache[mask] = oracle(g, spec, seeds) if seeds else 0.0
            for mask in range(1 << g.n):
                for v in range(g.n):
                    if mask >> v & 1:
                        continue
                    mono += 1
                    if cache[mask | 1 << v] < cache[mask] - 1e-12:
                        failures.append(f"{kind} graph {i}: adding {v} to {mask:b} lowers spread")
    metrics = {"max_z": worst_z, "monotonicity_checks": mono}
    return SuiteResult("simulator-oracle", not failures, count + mono, failures, metrics, time.perf_counter() - t0)


SUITES = {
    "definiteness": definiteness_suite,
    "reaction": reaction_bound_suite,
    "fixed_point": fixed_point_suite,
    "separability": separability_suite,
    "gradient": gradient_suite,
    "simulator": simulator_suite,
}


def run_all(seed: int = 0, runs: int | None = None, threads: int = 1, only=None) -> list[SuiteResult]:
    out = []
    for name, fn in SUITES.items():
        if only and name not in only:
            continue
        if name == "simulator":
            kw = {"threads": threads}
            if runs is not None:
                kw["runs"] = runs
            out.append(fn(seed=seed, **kw))
        else:
            out.append(fn(seed=seed))
    return out
