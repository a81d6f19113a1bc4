"""Sheaf diffusion with pointwise and neighbour-coupled reaction terms.

Feature matrices are ``(n*d, f)`` arrays in the vertex-major stacking used by
:mod:`deepsn.sheaf`.  Reaction parameters are ``(n, d, f)`` arrays.

The explicit update is

    X(t+1) = X(t) - alpha * Delta X(t) + beta * A(X(t)) + gamma * R(X(t), S)

with the time step folded into the three coefficients.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import Graph
from .sheaf import Sheaf, SheafOperator, apply_delta, build_operator

BLOWUP = 1e8


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, msg: str = "iterate diverged"):
        super().__init__(f"{msg} at step {step}")
        self.step = step


@dataclass
class ReactionParams:
    alpha: float
    beta: float
    gamma: float
    phi1: np.ndarray
    kappa1: np.ndarray
    phi2: np.ndarray
    kappa2: np.ndarray

    def __post_init__(self):
        for name in ("kappa1", "kappa2"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be strictly positive")

    @classmethod
    def random(cls, n, d, f, rng, alpha=0.5, beta=0.5, gamma=0.5, phi_scale=1.0):
        return cls(
            alpha, beta, gamma,
            phi1=rng.uniform(-phi_scale, phi_scale, (n, d, f)),
            kappa1=rng.uniform(0.1, 2.0, (n, d, f)),
            phi2=rng.uniform(-phi_scale, phi_scale, (n, d, f)),
            kappa2=rng.uniform(0.1, 2.0, (n, d, f)),
        )

    @classmethod
    def contractive(cls, g: Graph, d, f, rng, alpha=0.5, beta=0.5, gamma=0.5, phi1_range=(-1.0, 1.0)):
        """Random parameters with small reaction Lipschitz constants.

        kappa >= 0.5 and |Phi| <= 1 bound the pointwise slope by 2; dividing
        Phi2 by the vertex degree keeps the coupled term's slope degree-free.
        A positive ``phi1_range`` makes the origin unstable, so iterates settle
        on a non-trivial equilibrium instead of the shared zero fixed point.
        """
        n = g.n
        deg = np.maximum(g.degree, 1)[:, None, None]
        return cls(
            alpha, beta, gamma,
            phi1=rng.uniform(*phi1_range, (n, d, f)),
            kappa1=rng.uniform(0.5, 2.0, (n, d, f)),
            phi2=rng.uniform(-1.0, 1.0, (n, d, f)) / deg,
            kappa2=rng.uniform(0.5, 2.0, (n, d, f)),
        )

    def digest(self) -> str:
        h = hashlib.sha1()
        h.update(np.array([self.alpha, self.beta, self.gamma]).tobytes())
        for a in (self.phi1, self.kappa1, self.phi2, self.kappa2):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        return h.hexdigest()[:12]


@dataclass
class ActivationVector:
    probs: np.ndarray
    step: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("activation probabilities must lie in [0, 1]")


def saturate(x, phi, kappa):
    return phi * x / (kappa + np.abs(x))


def pointwise_reaction(x_v, phi1, kappa1):
    """Bounded per-vertex reaction on a d x f block (or a stack of them)."""
    return saturate(np.asarray(x_v, dtype=float), phi1, kappa1)


def coupling_field(x_blocks: np.ndarray, g: Graph, s: np.ndarray) -> np.ndarray:
    """Active-minus-susceptible neighbour sum for every vertex, shape (n, d, f)."""
    n = g.n
    signed = (2.0 * np.asarray(s, dtype=float) - 1.0)[:, None, None] * x_blocks
    return (g.adjacency() @ signed.reshape(n, -1)).reshape(x_blocks.shape)


def coupled_reaction(x, g: Graph, s, phi2, kappa2, v: int | None = None):
    """Coupled reaction at vertex ``v`` (or all vertices when ``v`` is None)."""
    x = np.asarray(x, dtype=float)
    n = g.n
    xb = x.reshape(n, -1, x.shape[-1])
    probs = s.probs if isinstance(s, ActivationVector) else np.asarray(s, dtype=float)
    if v is None:
        return saturate(coupling_field(xb, g, probs), phi2, kappa2)
    nb = g.neighbors(v)
    dagger = ((2.0 * probs[nb] - 1.0)[:, None, None] * xb[nb]).sum(axis=0)
    return saturate(dagger, phi2[v] if np.ndim(phi2) == 3 else phi2, kappa2[v] if np.ndim(kappa2) == 3 else kappa2)


def step_terms(x, op: SheafOperator, params: ReactionParams, g: Graph, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The diffusion, pointwise and coupled contributions of one update."""
    x = np.asarray(x, dtype=float)
    n = g.n
    f = x.shape[1]
    xb = x.reshape(n, -1, f)
    probs = s.probs if isinstance(s, ActivationVector) else np.asarray(s, dtype=float)
    diff = -params.alpha * apply_delta(op, x)
    point = params.beta * pointwise_reaction(xb, params.phi1, params.kappa1).reshape(x.shape) if params.beta else np.zeros_like(x)
    coup = params.gamma * coupled_reaction(x, g, probs, params.phi2, params.kappa2).reshape(x.shape) if params.gamma else np.zeros_like(x)
    return diff, point, coup


def diffusion_step(x, op: SheafOperator, params: ReactionParams, g: Graph, s, step: int = 0) -> np.ndarray:
    diff, point, coup = step_terms(x, op, params, g, s)
    out = np.asarray(x, dtype=float) + diff + point + coup
    if not np.all(np.isfinite(out)) or np.max(np.abs(out), initial=0.0) > BLOWUP:
        raise DivergenceError(step)
    return out


def iterate_to_fixed_point(x0, op, params, g, s, tol=1e-8, max_steps=10_000):
    """Run the explicit update until successive iterates differ by <= tol (max-norm).

    Returns ``(x, converged, steps)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x0, dtype=float)
    for t in range(1, max_steps + 1):
        nxt = diffusion_step(x, op, params, g, s, step=t)
        if np.max(np.abs(nxt - x), initial=0.0) <= tol:
            return nxt, True, t
        x = nxt
    return x, False, max_steps


def edge_gap(x, sheaf: Sheaf, transported: bool = False) -> np.ndarray:
    """Per-edge disagreement norm, either raw ``x_v - x_u`` or through the restriction maps."""
    g = sheaf.graph
    xb = np.asarray(x, dtype=float).reshape(g.n, sheaf.stalk_dim, -1)
    u, v = g.edges[:, 0], g.edges[:, 1]
    if transported:
        diff = sheaf.restriction[:, 0] @ xb[u] - sheaf.restriction[:, 1] @ xb[v]
    else:
        diff = xb[u] - xb[v]
    return np.sqrt((diff ** 2).sum(axis=(1, 2)))


def _block_norm(a):
    return np.sqrt((np.asarray(a) ** 2).sum(axis=(-2, -1)))


@dataclass
class ReactionBoundReport:
    trials: int
    skipped: int
    max_ratio_pointwise: float
    max_ratio_coupled: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_reaction_bound(params: ReactionParams | None, g: Graph, trials: int, rng: np.random.Generator,
                 d: int = 2, f: int = 4, log_scale: tuple[float, float] = (-3.0, 12.0),
                 batch: int = 1000) -> ReactionBoundReport:
    """Sample (X, S) (and, when ``params`` is None, Phi and kappa) and compare block norms.

    Each trial draws a fresh feature matrix whose entries have log-uniform
    magnitudes over ``log_scale`` decades; the largest per-vertex ratio
    ||A(X_v)|| / ||Phi_v|| (and the coupled analogue) is recorded.  Vertices
    with Phi_v = 0 are skipped.  Trials are evaluated in vectorized batches.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = g.n
    adj = g.adjacency().toarray()
    skipped = 0
    worst = {"pointwise": 0.0, "coupled": 0.0}
    violations = []
    if params is not None:
        d, f = params.phi1.shape[1:]
    for start in range(0, trials, batch):
        size = min(batch, trials - start)
        shape = (size, n, d, f)
        if params is None:
            phi1, phi2 = rng.uniform(-1.0, 1.0, shape), rng.uniform(-1.0, 1.0, shape)
            kappa1, kappa2 = rng.uniform(0.1, 2.0, shape), rng.uniform(0.1, 2.0, shape)
        else:
            phi1, kappa1, phi2, kappa2 = params.phi1, params.kappa1, params.phi2, params.kappa2
        mag = 10.0 ** rng.uniform(*log_scale, size=shape)
        xb = rng.choice([-1.0, 1.0], size=shape) * mag
        s = rng.uniform(size=(size, n))
        a = pointwise_reaction(xb, phi1, kappa1)
        dagger = np.einsum("uv,tvdf->tudf", adj, (2.0 * s - 1.0)[:, :, None, None] * xb)
        r = saturate(dagger, phi2, kappa2)
        for name, out, phi in (("pointwise", a, phi1), ("coupled", r, phi2)):
            pn = np.broadcast_to(_block_norm(phi), (size, n))
            live = pn > 0
            skipped += int((~live).sum())
            ratio = np.where(live, _block_norm(out) / np.where(live, pn, 1.0), 0.0)
            per_trial = ratio.max(axis=1)
            worst[name] = max(worst[name], float(per_trial.max()))
            for t in np.flatnonzero(per_trial >= 1.0):
                violations.append({"trial": start + int(t), "term": name, "ratio": float(per_trial[t])})
    return ReactionBoundReport(trials, skipped, worst["pointwise"], worst["coupled"], violations)


@dataclass
class FixedPointReport:
    lhs: float
    rhs: float
    slack: float

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs + self.slack


def check_fixed_point_bound(x_star, op: SheafOperator, params: ReactionParams, tol: float) -> FixedPointReport:
    """Bound on the diffusion term at a converged fixed point.

    ||alpha * Delta X*||_2 <= |beta| ||Phi1||_2 + |gamma| ||Phi2||_2, up to the
    residual allowed by the stopping tolerance.
    """
    x_star = np.asarray(x_star, dtype=float)
    lhs = float(np.linalg.norm(params.alpha * apply_delta(op, x_star)))
    rhs = abs(params.beta) * float(np.linalg.norm(params.phi1)) + abs(params.gamma) * float(np.linalg.norm(params.phi2))
    return FixedPointReport(lhs, rhs, 10.0 * tol * np.sqrt(x_star.size))


def random_connected_bipartite(rng: np.random.Generator, n_max: int = 20, n_min: int = 4, p_extra: float = 0.3) -> Graph:
    """Random connected bipartite graph with equal sides (n even, n <= n_max)."""
    half = int(rng.integers(max(2, n_min // 2), n_max // 2 + 1))
    left = np.arange(half)
    right = np.arange(half, 2 * half)
    pairs = set()
    # spanning tree alternating sides keeps the graph connected
    order_l = rng.permutation(left)
    order_r = rng.permutation(right)
    seq = [x for pair in zip(order_l, order_r) for x in pair]
    pairs.update((int(a), int(b)) for a, b in zip(seq[:-1], seq[1:]))
    for a in left:
        for b in right:
            if rng.uniform() < p_extra:
                pairs.add((int(a), int(b)))
    return Graph.from_edges(2 * half, pairs)


def symmetric_sheaf(g: Graph, rng: np.random.Generator, coeff_range=(0.3, 1.0)) -> Sheaf:
    """d = 1 sheaf with equal, non-zero restriction maps on both ends of every edge."""
    mag = rng.uniform(0.5, 1.5, size=g.m)
    c = rng.choice([-1.0, 1.0], size=g.m) * mag
    maps = np.empty((g.m, 2, 1, 1))
    maps[:, 0, 0, 0] = c
    maps[:, 1, 0, 0] = c
    return Sheaf(g, 1, maps, rng.uniform(*coeff_range, size=g.m))


@dataclass
class SeparabilityReport:
    kind: str
    gap: float
    converged: bool
    steps: int
    n: int
    m: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def _gershgorin_step(mat: sp.spmatrix) -> float:
    bound = float(np.max(np.abs(mat).sum(axis=1)))
    return 1.0 / bound if bound > 0 else 1.0


def separability_experiment(kind: str, g: Graph, rng: np.random.Generator, sheaf: Sheaf | None = None,
                            x0=None, f: int = 1, tol: float = 1e-10, max_steps: int = 200_000,
                            beta: float = 0.5, gamma: float = 0.5, epsilon: float = 1.0) -> SeparabilityReport:
    """Compare the fixed points of plain and reaction sheaf diffusion on a bipartite graph.

    ``standard`` runs X <- X - alpha L_F X on the raw (unshifted, unnormalized)
    Laplacian with alpha from a Gershgorin bound, whose limit is harmonic.
    ``reaction`` runs the full update on the normalized shifted operator.
    The reported gap is the largest ||x_v - x_u|| over edges.
    """
    sheaf = sheaf or symmetric_sheaf(g, rng)
    if sheaf.stalk_dim != 1 or not np.allclose(sheaf.restriction[:, 0], sheaf.restriction[:, 1]):
        raise ValueError("separability experiment needs a symmetric d = 1 sheaf")
    if np.any(sheaf.restriction == 0):
        raise ValueError("restriction maps must be invertible")
    n = g.n
    x0 = rng.normal(size=(n, f)) if x0 is None else np.asarray(x0, dtype=float)
    zeros = np.zeros((n, 1, f))
    if kind == "standard":
        op = build_operator(sheaf, epsilon=0.0, normalize=False)
        params = ReactionParams(_gershgorin_step(op.laplacian), 0.0, 0.0, zeros, zeros + 1, zeros, zeros + 1)
        s = np.zeros(n)
    elif kind == "reaction":
        op = build_operator(sheaf, epsilon=epsilon)
        # self-exciting amplitudes: X = 0 is a fixed point of every saturating
        # reaction, and runs that fall into it say nothing about separation
        params = ReactionParams.contractive(g, 1, f, rng, alpha=0.5, beta=beta, gamma=gamma, phi1_range=(1.0, 2.0))
        s = rng.uniform(size=n)
    else:
        raise ValueError(f"unknown dynamics kind {kind!r}")
    x, converged, steps = iterate_to_fixed_point(x0, op, params, g, s, tol=tol, max_steps=max_steps)
    if not converged:
        raise DivergenceError(steps, f"{kind} dynamics did not converge")
    return SeparabilityReport(kind, float(edge_gap(x, sheaf).max()), converged, steps, n, g.m)
