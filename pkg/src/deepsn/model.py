"""Sheaf reaction-diffusion network for per-vertex activation probabilities.

Shapes: B samples, n vertices, m edges, stalk dimension d, f channels.
Vertex features live as (B, n, d, f) tensors; edge quantities as (B, m, ...).
The sheaf (restriction maps and coefficients) is produced from the encoder
output once per forward pass and shared across layers.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph

CHECKPOINT_VERSION = 1
RAW_FEATURES = 3


@dataclass
class GnnConfig:
    layers: int = 5
    stalk_dim: int = 2
    channels: int = 4
    hidden_units: int = 32
    dropout: float = 0.1
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.5
    epsilon: float = 1.0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.stalk_dim not in (1, 2):
            raise ValueError("stalk_dim must be 1 or 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.channels < 1 or self.hidden_units < 1:
            raise ValueError("channels and hidden_units must be positive")


class GnnParams:
    """Named parameter tensors of one estimator.

    ``kappa*_raw`` are stored unconstrained; the model uses softplus(raw).
    """

    def __init__(self, tensors: dict[str, Tensor], config: GnnConfig, n: int):
        self.tensors = tensors
        self.config = config
        self.n = n

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def names(self):
        return list(self.tensors)

    @classmethod
    def init(cls, n: int, config: GnnConfig, rng: np.random.Generator) -> "GnnParams":
        d, f, h = config.stalk_dim, config.channels, config.hidden_units
        df = d * f

        def glorot(*shape):
            lim = np.sqrt(6.0 / (shape[0] + shape[-1]))
            return rng.uniform(-lim, lim, size=shape)

        t = {
            "enc_w1": glorot(RAW_FEATURES, h),
            "enc_b1": np.zeros(h),
            "enc_w2": glorot(h, df),
            "enc_b2": np.zeros(df),
            "map_w": glorot(2 * df, d * d),
            "map_b": np.eye(d).ravel(),
            "psi_w": glorot(2 * df, 1)[:, 0],
            "psi_b": np.zeros(1),
            "phi1": rng.normal(0.0, 0.1, (n, d, f)),
            "kappa1_raw": np.full((n, d, f), 0.5413),  # softplus -> 1
            "phi2": rng.normal(0.0, 0.1, (n, d, f)),
            "kappa2_raw": np.full((n, d, f), 0.5413),
            "read_w1": glorot(df, h),
            "read_b1": np.zeros(h),
            "read_w2": glorot(h, 1)[:, 0],
            "read_b2": np.zeros(1),
        }
        for layer in range(config.layers):
            t[f"w1_{layer}"] = np.eye(d) + rng.normal(0.0, 0.05, (d, d))
            t[f"w2_{layer}"] = np.eye(f) + rng.normal(0.0, 0.05, (f, f))
        tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in t.items()}
        return cls(tensors, config, n)

    def copy(self) -> "GnnParams":
        return GnnParams({k: Tensor(v.value.copy(), requires_grad=True, name=k) for k, v in self}, self.config, self.n)

    def values(self) -> dict[str, np.ndarray]:
        return {k: v.value for k, v in self}

    def to_json(self) -> str:
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "n_vertices": self.n,
            "config": asdict(self.config),
            "params": {k: {"shape": list(v.shape), "data": v.value.ravel().tolist()} for k, v in self},
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "GnnParams":
        doc = json.loads(text)
        if doc.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
        config = GnnConfig(**doc["config"])
        tensors = {
            k: Tensor(np.asarray(e["data"], dtype=float).reshape(e["shape"]), requires_grad=True, name=k)
            for k, e in doc["params"].items()
        }
        return cls(tensors, config, int(doc["n_vertices"]))


@dataclass
class GraphContext:
    """Per-graph constants used by the forward pass."""

    g: Graph
    u: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    deg_norm: np.ndarray = field(init=False)

    def __post_init__(self):
        self.u = self.g.edges[:, 0]
        self.v = self.g.edges[:, 1]
        deg = self.g.degree.astype(float)
        self.deg_norm = deg / max(deg.max(initial=0.0), 1.0)


@dataclass
class SheafTensors:
    fu: Tensor  # (B, m, d, d) maps of the lower endpoints
    fv: Tensor  # (B, m, d, d) maps of the upper endpoints
    psi: Tensor  # (B, m)
    dinv: Tensor  # (B, n, d, d) inverse square roots of the diagonal blocks


@dataclass
class ForwardResult:
    s_hat: Tensor  # (B, n)
    trace: list  # per-layer activation tensors
    x_final: Tensor  # (B, n, d, f)
    sheaf: SheafTensors


def raw_features(seed: Tensor, ctx: GraphContext) -> Tensor:
    b, n = seed.shape
    deg = np.broadcast_to(ctx.deg_norm, (b, n))[..., None]
    ones = np.ones((b, n, 1))
    return ad.concat([ad.reshape(seed, (b, n, 1)), ad.constant(deg), ad.constant(ones)], axis=-1)


def _dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or p <= 0.0:
        return x
    keep = (rng.uniform(size=x.shape) >= p) / (1.0 - p)
    return x * ad.constant(keep)


def encode(raw: Tensor, params: GnnParams, rng=None) -> Tensor:
    """MLP on raw vertex features, reshaped to (B, n, d, f)."""
    cfg = params.config
    b, n, k = raw.shape
    if k != RAW_FEATURES:
        raise ValueError(f"expected {RAW_FEATURES} raw features per vertex, got {k}")
    h = ad.tanh(ad.linear(raw, params["enc_w1"], params["enc_b1"]))
    h = _dropout(h, cfg.dropout, rng)
    x = ad.linear(h, params["enc_w2"], params["enc_b2"])
    return ad.reshape(x, (b, n, cfg.stalk_dim, cfg.channels))


def block_inv_sqrt(blocks: Tensor) -> Tensor:
    """Differentiable inverse square root of SPD blocks of size 1 or 2."""
    d = blocks.shape[-1]
    if d == 1:
        return 1.0 / ad.sqrt(blocks)
    a = blocks[..., 0, 0]
    b = 0.5 * (blocks[..., 0, 1] + blocks[..., 1, 0])
    c = blocks[..., 1, 1]
    sdet = ad.sqrt(a * c - b * b)
    t = ad.sqrt(a + c + 2.0 * sdet)
    r00, r01, r11 = (a + sdet) / t, b / t, (c + sdet) / t
    det_r = r00 * r11 - r01 * r01
    i00, i01, i11 = r11 / det_r, -(r01 / det_r), r00 / det_r
    shape = blocks.shape[:-2] + (1,)
    row0 = ad.concat([ad.reshape(i00, shape), ad.reshape(i01, shape)], axis=-1)
    row1 = ad.concat([ad.reshape(i01, shape), ad.reshape(i11, shape)], axis=-1)
    return ad.concat([ad.reshape(row0, shape[:-1] + (1, 2)), ad.reshape(row1, shape[:-1] + (1, 2))], axis=-2)


def build_sheaf(x0: Tensor, params: GnnParams, ctx: GraphContext) -> SheafTensors:
    cfg = params.config
    b, n, d, f = x0.shape
    m = len(ctx.u)
    h = ad.reshape(x0, (b, n, d * f))
    hu, hv = ad.take(h, ctx.u, axis=1), ad.take(h, ctx.v, axis=1)
    cat_uv, cat_vu = ad.concat([hu, hv], axis=-1), ad.concat([hv, hu], axis=-1)
    fu = ad.reshape(ad.tanh(ad.linear(cat_uv, params["map_w"], params["map_b"])), (b, m, d, d))
    fv = ad.reshape(ad.tanh(ad.linear(cat_vu, params["map_w"], params["map_b"])), (b, m, d, d))
    # symmetric in the endpoints so the Laplacian stays symmetric and label-independent
    logit = 0.5 * (ad.matmul(cat_uv, params["psi_w"]) + ad.matmul(cat_vu, params["psi_w"])) + params["psi_b"]
    psi = ad.sigmoid(logit)
    w = ad.reshape(psi, (b, m, 1, 1))
    gram_u = ad.bmm(ad.swapaxes(fu), fu) * w
    gram_v = ad.bmm(ad.swapaxes(fv), fv) * w
    diag = ad.index_add(gram_u, ctx.u, n, axis=1) + ad.index_add(gram_v, ctx.v, n, axis=1)
    diag = diag + cfg.epsilon * np.eye(d)
    return SheafTensors(fu, fv, psi, block_inv_sqrt(diag))


def apply_laplacian(y: Tensor, sh: SheafTensors, ctx: GraphContext, epsilon: float, n: int) -> Tensor:
    """(L_F + eps I) y for stacked (B, n, d, f) features."""
    yu, yv = ad.take(y, ctx.u, axis=1), ad.take(y, ctx.v, axis=1)
    disagree = ad.bmm(sh.fu, yu) - ad.bmm(sh.fv, yv)
    b, m = sh.psi.shape
    weighted = disagree * ad.reshape(sh.psi, (b, m, 1, 1))
    to_u = ad.bmm(ad.swapaxes(sh.fu), weighted)
    to_v = ad.bmm(ad.swapaxes(sh.fv), weighted)
    out = ad.index_add(to_u, ctx.u, n, axis=1) - ad.index_add(to_v, ctx.v, n, axis=1)
    return out + epsilon * y if epsilon else out


def apply_normalized(y: Tensor, sh: SheafTensors, ctx: GraphContext, epsilon: float, n: int) -> Tensor:
    z = ad.bmm(sh.dinv, y)
    z = apply_laplacian(z, sh, ctx, epsilon, n)
    return ad.bmm(sh.dinv, z)


def pointwise(x: Tensor, phi: Tensor, kappa: Tensor) -> Tensor:
    return phi * x / (kappa + ad.absolute(x))


def coupled(x: Tensor, s: Tensor, phi: Tensor, kappa: Tensor, ctx: GraphContext) -> Tensor:
    b, n, d, f = x.shape
    signed = x * ad.reshape(2.0 * s - 1.0, (b, n, 1, 1))
    from_v = ad.index_add(ad.take(signed, ctx.v, axis=1), ctx.u, n, axis=1)
    from_u = ad.index_add(ad.take(signed, ctx.u, axis=1), ctx.v, n, axis=1)
    dagger = from_v + from_u
    return phi * dagger / (kappa + ad.absolute(dagger))


def readout(x: Tensor, params: GnnParams, rng=None) -> Tensor:
    b, n, d, f = x.shape
    h = ad.tanh(ad.linear(ad.reshape(x, (b, n, d * f)), params["read_w1"], params["read_b1"]))
    h = _dropout(h, params.config.dropout, rng)
    return ad.sigmoid(ad.matmul(h, params["read_w2"]) + params["read_b2"])


def layer_forward(x: Tensor, s: Tensor, sh: SheafTensors, params: GnnParams, ctx: GraphContext, t: int,
                  rng=None) -> tuple[Tensor, Tensor]:
    cfg = params.config
    n = x.shape[1]
    y = ad.bmm(params[f"w1_{t}"], x)
    y = ad.bmm(y, params[f"w2_{t}"])
    out = x - cfg.alpha * apply_normalized(y, sh, ctx, cfg.epsilon, n)
    if cfg.beta:
        out = out + cfg.beta * pointwise(x, params["phi1"], ad.softplus(params["kappa1_raw"]))
    if cfg.gamma:
        out = out + cfg.gamma * coupled(x, s, params["phi2"], ad.softplus(params["kappa2_raw"]), ctx)
    if not np.all(np.isfinite(out.value)) or np.max(np.abs(out.value), initial=0.0) > 1e8:
        from .dynamics import DivergenceError
        raise DivergenceError(t, "layer output diverged")
    return out, readout(out, params, rng)


def forward(seed, g: Graph | GraphContext, params: GnnParams, rng=None) -> ForwardResult:
    """Run the estimator on a batch of (possibly fractional) seed vectors.

    ``seed`` is (n,) or (B, n); a Tensor input keeps the graph to it so
    gradients can flow back to the seed vector.
    """
    ctx = g if isinstance(g, GraphContext) else GraphContext(g)
    seed = ad.as_tensor(seed)
    if seed.ndim == 1:
        seed = ad.reshape(seed, (1, seed.shape[0]))
    if seed.shape[1] != ctx.g.n or params.n != ctx.g.n:
        raise ValueError(f"seed/parameter size does not match graph with n={ctx.g.n}")
    x = encode(raw_features(seed, ctx), params, rng)
    sh = build_sheaf(x, params, ctx)
    s = seed
    trace = []
    for t in range(params.config.layers):
        x, s = layer_forward(x, s, sh, params, ctx, t, rng)
        trace.append(s)
    return ForwardResult(s, trace, x, sh)


def estimation_loss(s_hat, y) -> Tensor:
    """Sum of squared errors per sample, averaged over the batch."""
    s_hat = ad.as_tensor(s_hat)
    y = np.asarray(y, dtype=float)
    if s_hat.shape[-1] != y.shape[-1] or (y.ndim == 2 and s_hat.shape != y.shape):
        raise ValueError("prediction and target lengths differ")
    diff = s_hat - y
    total = ad.sum_(diff * diff)
    batch = s_hat.shape[0] if s_hat.ndim == 2 else 1
    return total * (1.0 / batch)
