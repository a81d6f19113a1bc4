"""Optimizer, data handling and the estimator training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dynamics import DivergenceError
from .graph import Graph
from .model import GnnConfig, GnnParams, GraphContext, estimation_loss, forward

log = logging.getLogger(__name__)


class ParameterStore:
    """Named parameter tensors plus gradient and Adam moment buffers."""

    def __init__(self, tensors: dict[str, ad.Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        if len(set(tensors)) != len(tensors):
            raise ValueError("parameter names must be unique")
        self.tensors = tensors
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m1 = {k: np.zeros_like(t.value) for k, t in tensors.items()}
        self.m2 = {k: np.zeros_like(t.value) for k, t in tensors.items()}

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def grad(self, name) -> np.ndarray:
        t = self.tensors[name]
        return np.zeros_like(t.value) if t.grad is None else t.grad

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.tensors.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for k, v in snap.items():
            self.tensors[k].value = v.copy()


def adam_step(store: ParameterStore, lr: float = 1e-3) -> ParameterStore:
    """Bias-corrected Adam update of every tensor in the store."""
    for k, t in store.tensors.items():
        g = store.grad(k)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
    store.step_count += 1
    b1, b2 = store.beta1, store.beta2
    c1 = 1.0 - b1 ** store.step_count
    c2 = 1.0 - b2 ** store.step_count
    for k, t in store.tensors.items():
        g = store.grad(k)
        store.m1[k] = b1 * store.m1[k] + (1 - b1) * g
        store.m2[k] = b2 * store.m2[k] + (1 - b2) * g * g
        t.value = t.value - lr * (store.m1[k] / c1) / (np.sqrt(store.m2[k] / c2) + store.eps)
    return store


@dataclass
class DataSplit:
    train: list
    validation: list
    test: list


def split_dataset(samples, seed: int = 0) -> DataSplit:
    """Shuffle and cut into 60/20/20 train/validation/test."""
    samples = list(samples)
    n = len(samples)
    if n < 5:
        raise ValueError("need at least 5 samples to split")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    take = lambda idx: [samples[i] for i in idx]
    return DataSplit(
        take(order[:n_train]), take(order[n_train:n_train + n_val]), take(order[n_train + n_val:])
    )


@dataclass
class TrainConfig:
    lr: float = 0.004
    batch_size: int = 16
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0
    max_retries: int = 3


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)  # (epoch, train_mse, val_mae)
    best_epoch: int = -1
    lr: float = 0.0

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mae"])
            for epoch, mse, mae in self.rows:
                w.writerow([epoch, repr(float(mse)), repr(float(mae))])


def _stack(samples):
    return np.stack([s.seed_vector for s in samples]), np.stack([s.y for s in samples])


def predict(params: GnnParams, g, seeds: np.ndarray, batch_size: int = 32) -> np.ndarray:
    ctx = g if isinstance(g, GraphContext) else GraphContext(g)
    seeds = np.atleast_2d(seeds)
    out = [forward(seeds[i:i + batch_size], ctx, params).s_hat.value for i in range(0, len(seeds), batch_size)]
    return np.concatenate(out, axis=0)


def mean_absolute_error(params: GnnParams, g, samples) -> float:
    if not samples:
        return float("nan")
    x, y = _stack(samples)
    return float(np.mean(np.abs(predict(params, g, x) - y)))


def train_estimator(g: Graph, data: DataSplit, config: GnnConfig, train: TrainConfig | None = None,
                    params: GnnParams | None = None) -> tuple[GnnParams, TrainHistory]:
    """Minimize the squared activation error; keep the best-validation parameters."""
    train = train or TrainConfig()
    if not data.train:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(train.seed)
    ctx = GraphContext(g)
    params = params or GnnParams.init(g.n, config, rng)
    store = ParameterStore(params.tensors)
    x_train, y_train = _stack(data.train)
    val = data.validation or data.train
    history = TrainHistory(lr=train.lr)
    lr = train.lr
    best_mae, best_snap, since_best = np.inf, store.snapshot(), 0
    retries = 0
    epoch = 0
    while epoch < train.max_epochs:
        order = rng.permutation(len(x_train))
        total, count = 0.0, 0
        try:
            for i in range(0, len(order), train.batch_size):
                idx = order[i:i + train.batch_size]
                store.zero_grad()
                res = forward(x_train[idx], ctx, params, rng=rng)
                loss = estimation_loss(res.s_hat, y_train[idx])
                if not np.isfinite(loss.value):
                    raise DivergenceError(epoch, "non-finite loss")
                ad.backward(loss)
                adam_step(store, lr)
                total += float(loss.value) * len(idx)
                count += len(idx)
        except (DivergenceError, FloatingPointError) as exc:
            retries += 1
            if retries > train.max_retries:
                raise DivergenceError(epoch, f"training diverged after {train.max_retries} lr backoffs") from exc
            lr *= 0.5
            log.warning("epoch %d: %s; restarting from best checkpoint with lr=%g", epoch, exc, lr)
            store.restore(best_snap)
            store = ParameterStore(params.tensors)
            continue
        train_mse = total / max(count, 1) / g.n
        val_mae = mean_absolute_error(params, ctx, val)
        history.rows.append((epoch, train_mse, val_mae))
        log.debug("epoch %d train_mse %.5f val_mae %.5f", epoch, train_mse, val_mae)
        if val_mae < best_mae:
            best_mae, best_snap, since_best = val_mae, store.snapshot(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= train.patience:
                break
        epoch += 1
    store.restore(best_snap)
    history.lr = lr
    return params, history


@dataclass
class GradCheckReport:
    max_rel: dict  # worst relative error per parameter, over probes with |grad| >= floor
    max_abs_small: dict  # worst absolute error per parameter, over probes below the floor
    probes: int = 0
    skipped: int = 0

    def ok(self, rel_tol: float = 1e-4, abs_tol: float = 1e-10) -> bool:
        return max(self.max_rel.values(), default=0.0) <= rel_tol and \
            max(self.max_abs_small.values(), default=0.0) <= abs_tol


def finite_difference_check(params: dict[str, ad.Tensor], loss_fn, probes: int, rng: np.random.Generator,
                            h: float = 1e-5, kink_margin: float = 1e-6, floor: float = 1e-6) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences on random entries.

    ``loss_fn()`` must rebuild the loss from the current parameter values.
    A probe is skipped when either perturbed evaluation brings some |x|
    argument within ``kink_margin`` of zero.  Probes whose gradient is at
    least ``floor`` in magnitude are scored by relative error
    |a - b| / max(|a|, |b|); smaller ones, where central-difference rounding
    (about eps * |loss| / h) dominates, are scored by absolute error.
    """
    for t in params.values():
        t.grad = None
    loss = loss_fn()
    ad.backward(loss)
    grads = {k: (np.zeros_like(t.value) if t.grad is None else t.grad.copy()) for k, t in params.items()}

    def evaluate():
        with ad.watch_kinks() as w:
            value = float(loss_fn().value)
        return value, w.closest

    report = GradCheckReport({}, {})
    for name, t in params.items():
        flat = t.value.reshape(-1)
        picks = rng.choice(flat.size, size=min(probes, flat.size), replace=False)
        rel = small = 0.0
        for j in picks:
            orig = flat[j]
            flat[j] = orig + h
            up, kink_up = evaluate()
            flat[j] = orig - h
            down, kink_down = evaluate()
            flat[j] = orig
            if min(kink_up, kink_down) < kink_margin:
                report.skipped += 1
                continue
            report.probes += 1
            fd = (up - down) / (2 * h)
            an = grads[name].reshape(-1)[j]
            scale = max(abs(fd), abs(an))
            if scale >= floor:
                rel = max(rel, abs(fd - an) / scale)
            else:
                small = max(small, abs(fd - an))
        report.max_rel[name] = rel
        report.max_abs_small[name] = small
    return report
