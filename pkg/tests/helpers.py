"""Shared test helpers: small graphs and a central-difference gradient oracle."""
import numpy as np
from hypothesis import strategies as st

from deepsn import autodiff as ad
from deepsn.graph import Graph

# criterion number -> one-line verdict, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def path_graph(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def numeric_grad(fn, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + h
        up = fn(x)
        flat[i] = o - h
        down = fn(x)
        flat[i] = o
        gf[i] = (up - down) / (2 * h)
    return g


def check_grads(build, *inputs, rtol=1e-6, atol=1e-8, seed=0):
    """Compare reverse-mode gradients of sum(w * build(*inputs)) with central differences."""
    rng = np.random.default_rng(seed)
    tensors = [ad.Tensor(np.array(x, dtype=float), requires_grad=True) for x in inputs]
    out = build(*tensors)
    w = rng.normal(size=out.shape)
    ad.backward(ad.sum_(out * w))
    for i, t in enumerate(tensors):
        def f(v, i=i):
            args = [ad.Tensor(np.array(x.value)) for x in tensors]
            args[i] = ad.Tensor(v)
            return float(np.sum(build(*args).value * w))
        expect = numeric_grad(f, t.value)
        got = np.zeros_like(t.value) if t.grad is None else t.grad
        np.testing.assert_allclose(got, expect, rtol=rtol, atol=atol, err_msg=f"input {i}")


@st.composite
def graphs(draw, n_min=1, n_max=10, p=None):
    n = draw(st.integers(n_min, n_max))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return Graph.from_edges(n, [e for e, k in zip(pairs, keep) if k])


def random_graph(rng, n, p=0.4, connected=True):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < p]
    if connected:
        pairs += [(i, int(rng.integers(0, i))) for i in range(1, n)]
    return Graph.from_edges(n, pairs)
