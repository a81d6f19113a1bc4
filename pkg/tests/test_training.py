import numpy as np
import pytest

from deepsn import autodiff as ad
from deepsn import training as tr
from deepsn.cascade import DiffusionModelSpec, GroundTruthSample, make_ground_truth
from deepsn.dynamics import DivergenceError
from deepsn.model import GnnConfig, GnnParams, estimation_loss, forward
from helpers import path_graph, random_graph


# Adam

def _store(value):
    return tr.ParameterStore({"w": ad.Tensor(np.asarray(value, dtype=float), requires_grad=True)})


def test_adam_zero_gradient_keeps_parameters():
    s = _store([1.0, -2.0])
    s.tensors["w"].grad = np.zeros(2)
    tr.adam_step(s, 0.1)
    assert s.tensors["w"].value.tolist() == [1.0, -2.0]


def test_adam_constant_gradient_moves_by_lr():
    s = _store([0.0, 0.0])
    for _ in range(200):
        s.tensors["w"].grad = np.array([3.0, -0.5])
        before = s.tensors["w"].value.copy()
        tr.adam_step(s, 0.01)
        step = s.tensors["w"].value - before
    # bias correction makes each step equal to lr * sign(g), up to eps
    np.testing.assert_allclose(step, [-0.01, 0.01], rtol=1e-6)


def test_adam_minimizes_quadratic_bowl():
    s = _store([4.0, -3.0])
    target = np.array([1.0, 2.0])
    for _ in range(3000):
        s.zero_grad()
        diff = s.tensors["w"] - target
        ad.backward(ad.sum_(diff * diff))
        tr.adam_step(s, 0.01)
    np.testing.assert_allclose(s.tensors["w"].value, target, atol=1e-3)


def test_adam_rejects_non_finite_gradient():
    s = _store([1.0])
    s.tensors["w"].grad = np.array([np.nan])
    with pytest.raises(FloatingPointError):
        tr.adam_step(s)
    assert s.step_count == 0


def test_store_snapshot_restore():
    s = _store([1.0, 2.0])
    snap = s.snapshot()
    s.tensors["w"].value = np.array([5.0, 5.0])
    s.restore(snap)
    assert s.tensors["w"].value.tolist() == [1.0, 2.0]


# splits

@pytest.mark.parametrize("n,sizes", [(10, (6, 2, 2)), (100, (60, 20, 20)), (7, (4, 1, 2))])
def test_split_sizes(n, sizes):
    d = tr.split_dataset(range(n))
    assert (len(d.train), len(d.validation), len(d.test)) == sizes


def test_split_deterministic_and_disjoint():
    a, b = tr.split_dataset(range(50), seed=3), tr.split_dataset(range(50), seed=3)
    assert a == b
    parts = [set(a.train), set(a.validation), set(a.test)]
    assert set.union(*parts) == set(range(50)) and sum(map(len, parts)) == 50
    assert tr.split_dataset(range(50), seed=4).train != a.train


def test_split_too_small():
    with pytest.raises(ValueError):
        tr.split_dataset(range(4))


# training loop

def _cfg(**kw):
    return GnnConfig(**{"layers": 2, "stalk_dim": 2, "channels": 4, "hidden_units": 16, "dropout": 0.0, **kw})


def test_constant_target_is_learned(rng):
    g = random_graph(rng, 6)
    samples = []
    for _ in range(30):
        vec = (rng.uniform(size=6) < 0.3).astype(float)
        samples.append(GroundTruthSample(vec, np.full(6, 0.7)))
    data = tr.split_dataset(samples)
    params, hist = tr.train_estimator(g, data, _cfg(), tr.TrainConfig(lr=0.02, max_epochs=150, patience=150))
    assert tr.mean_absolute_error(params, g, data.test) < 0.05
    assert hist.best_epoch >= 0


@pytest.fixture(scope="module")
def path_lt_data():
    g = path_graph(12)
    samples = make_ground_truth(g, DiffusionModelSpec("lt"), 200, (1, 3), runs=100, rng=0)
    return g, tr.split_dataset(samples)


def test_path_lt_reaches_target_accuracy(path_lt_data):
    g, data = path_lt_data
    params, _ = tr.train_estimator(g, data, _cfg(), tr.TrainConfig(max_epochs=200, patience=30))
    assert tr.mean_absolute_error(params, g, data.test) < 0.1


def test_training_history_is_deterministic(path_lt_data, tmp_path):
    g, data = path_lt_data
    tc = tr.TrainConfig(max_epochs=4, patience=10, seed=7)
    _, h1 = tr.train_estimator(g, data, _cfg(dropout=0.1), tc)
    _, h2 = tr.train_estimator(g, data, _cfg(dropout=0.1), tc)
    h1.write_csv(tmp_path / "a.csv")
    h2.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_mse,val_mae" and len(lines) == 5


def test_best_validation_parameters_are_kept(path_lt_data):
    g, data = path_lt_data
    params, hist = tr.train_estimator(g, data, _cfg(), tr.TrainConfig(max_epochs=15, patience=15))
    best = min(r[2] for r in hist.rows)
    assert tr.mean_absolute_error(params, g, data.validation) == pytest.approx(best, abs=1e-12)


def test_empty_training_split(rng):
    with pytest.raises(ValueError):
        tr.train_estimator(path_graph(3), tr.DataSplit([], [], []), _cfg())


def test_learning_rate_backoff_after_divergence(monkeypatch, path_lt_data):
    g, data = path_lt_data
    calls = {"n": 0}
    real = tr.forward

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise DivergenceError(0, "injected")
        return real(*a, **kw)

    monkeypatch.setattr(tr, "forward", flaky)
    _, hist = tr.train_estimator(g, data, _cfg(), tr.TrainConfig(lr=0.004, max_epochs=2, patience=5))
    assert hist.lr == 0.002 and len(hist.rows) == 2


def test_persistent_divergence_gives_up(monkeypatch, path_lt_data):
    g, data = path_lt_data

    def broken(*a, **kw):
        raise DivergenceError(0, "always")

    monkeypatch.setattr(tr, "forward", broken)
    with pytest.raises(DivergenceError):
        tr.train_estimator(g, data, _cfg(), tr.TrainConfig(max_epochs=5, max_retries=2))


def test_predict_batches_agree_with_single_forward(rng):
    g = random_graph(rng, 7)
    p = GnnParams.init(7, _cfg(), rng)
    seeds = (rng.uniform(size=(5, 7)) < 0.4).astype(float)
    np.testing.assert_allclose(tr.predict(p, g, seeds, batch_size=2), forward(seeds, g, p).s_hat.value,
                               atol=1e-14)


# gradient check

def test_finite_difference_check_on_model(rng):
    g = random_graph(rng, 6)
    p = GnnParams.init(6, _cfg(), rng)
    seeds = (rng.uniform(size=(3, 6)) < 0.5).astype(float)
    y = rng.uniform(size=(3, 6))
    rep = tr.finite_difference_check(p.tensors, lambda: estimation_loss(forward(seeds, g, p).s_hat, y), 3, rng)
    assert rep.probes > 0 and rep.ok()


def test_finite_difference_check_detects_wrong_gradient(rng):
    w = ad.Tensor(rng.normal(size=4), requires_grad=True)

    def bad_loss():
        # forward value w^2, but reported gradient is 3w instead of 2w
        return ad.sum_(ad.custom(w.value ** 2, (w,), lambda g: (3 * w.value * g,)))

    assert not tr.finite_difference_check({"w": w}, bad_loss, 4, rng).ok()
