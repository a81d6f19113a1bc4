"""The ten acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict in ACCEPTANCE_LINES (printed in the
terminal summary) before asserting.  Criteria that need the benchmark
graphs load them through the dataset registry and fail, with the loader's
message, when the files are not installed.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from deepsn import cli, verify
from deepsn import autodiff as ad
from deepsn.datasets import DatasetUnavailable, load_dataset, random_graph
from deepsn.model import GnnConfig, GnnParams, GraphContext, build_sheaf, encode, layer_forward, raw_features
from deepsn.selection import budget_from_percent, evaluate_seed_set, random_seeds, top_degree_seeds
from helpers import ACCEPTANCE_LINES

CONFIGS = Path(__file__).parents[1] / "configs"


def record(number: int, ok: bool, text: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def _suite(number, result, limit=None):
    ok = result.passed and (limit is None or result.seconds < limit)
    budget = f" (limit {limit:g}s)" if limit is not None else ""
    record(number, ok, result.line() + budget)
    assert result.passed, result.failures[:5]
    if limit is not None:
        assert result.seconds < limit


def test_criterion_1_definiteness():
    _suite(1, verify.definiteness_suite(200), limit=10.0)


def test_criterion_2_reaction_bounds():
    _suite(2, verify.reaction_bound_suite(10_000), limit=5.0)


def test_criterion_3_fixed_point_bound():
    _suite(3, verify.fixed_point_suite(100))


def test_criterion_4_separability():
    _suite(4, verify.separability_suite(20))


def test_criterion_5_gradients():
    _suite(5, verify.gradient_suite(50))


def test_criterion_6_simulators():
    _suite(6, verify.simulator_suite(runs=100_000))


def _load_or_fail(number, name):
    try:
        return load_dataset(name)
    except DatasetUnavailable as exc:
        record(number, False, f"{name} graph not installed, criterion not evaluated")
        pytest.fail(str(exc))


def _config(name, tmp_path, **changes):
    cfg = cli.load_config(CONFIGS / name)
    cfg.out = str(tmp_path / Path(name).stem)
    for k, v in changes.items():
        setattr(cfg, k, v)
    return cfg


@pytest.mark.slow
def test_criterion_7_jazz_lt_estimation(tmp_path):
    g = _load_or_fail(7, "jazz")
    cfg = _config("jazz_lt.json", tmp_path)
    t0 = time.perf_counter()
    cli.cmd_gen_data(cfg, g)
    _, mae = cli.cmd_train(cfg, g)
    minutes = (time.perf_counter() - t0) / 60
    ok = mae <= 0.15 and minutes < 15
    record(7, ok, f"Jazz LT test MAE {mae:.4f} (limit 0.15), {minutes:.1f} min (limit 15)")
    assert mae <= 0.15 and minutes < 15


def _pooled_gap(a, b):
    a, b = np.asarray(a), np.asarray(b)
    se = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    return (a.mean() - b.mean()) / se if se > 0 else np.inf * np.sign(a.mean() - b.mean())


def _seed_quality(name, config, tmp_path, trials=10):
    g = load_dataset(name)
    base = _config(config, tmp_path)
    cli.cmd_gen_data(base, g)
    k = budget_from_percent(g.n, base.selection.budget)
    ours, rand = [], []
    for t in range(trials):
        cfg = _config(config, tmp_path, seed=t)
        cli.cmd_train(cfg, g)
        doc = cli.cmd_select(cfg, g)
        ours.append(100.0 * doc["mc_spread"] / g.n)
        rand.append(evaluate_seed_set(g, base.diffusion, random_seeds(g, k, t), base.selection.eval_runs, t)[0])
    degree = evaluate_seed_set(g, base.diffusion, top_degree_seeds(g, k), base.selection.eval_runs, 0)[0]
    return np.mean(ours), np.mean(rand), degree, _pooled_gap(ours, rand)


@pytest.mark.slow
def test_criterion_8_seed_quality(tmp_path):
    parts, ok = [], True
    for name, config in (("jazz", "jazz_ic.json"), ("netscience", "netscience_ic.json")):
        try:
            ours, rand, degree, gap = _seed_quality(name, config, tmp_path)
        except DatasetUnavailable:
            parts.append(f"{name} graph not installed")
            ok = False
            continue
        good = gap >= 3 and ours >= 0.9 * degree
        ok &= good
        ref = cli.REFERENCE_SPREAD.get((name, "ic", 10.0))
        ref_txt = f", published reference {ref}%" if ref else ""
        parts.append(f"{name}: deepsn {ours:.2f}% vs random {rand:.2f}% ({gap:.1f} pooled SE, need 3), "
                     f"degree {degree:.2f}% (need >= 90%){ref_txt}")
    record(8, ok, "; ".join(parts))
    assert ok, parts


def test_criterion_9_selection_determinism(tmp_path):
    g = random_graph(40, 120, seed=1)
    outputs = []
    for run in range(2):
        cfg = cli.ExperimentConfig(dataset="synthetic", out=str(tmp_path / f"run{run}"), seed=5)
        cfg.gnn = GnnConfig(layers=2, channels=4, hidden_units=16)
        cfg.training.max_epochs = 5
        cfg.data.samples = 30
        cfg.selection.scorer.epochs = 20
        cli.cmd_gen_data(cfg, g)
        cli.cmd_train(cfg, g)
        cli.cmd_select(cfg, g)
        outputs.append((Path(cfg.out) / "seeds_deepsn_10.json").read_bytes())
    same = outputs[0] == outputs[1]
    record(9, same, f"seed-set JSON byte-identical across two runs: {same} ({len(json.loads(outputs[0])['seeds'])} seeds)")
    assert same


def _layer_seconds(g, repeats=5):
    """Median wall time of sheaf construction plus one layer, d=2, f=4, one seed vector."""
    cfg = GnnConfig(layers=1, stalk_dim=2, channels=4, dropout=0.0)
    params = GnnParams.init(g.n, cfg, np.random.default_rng(0))
    ctx = GraphContext(g)
    seed = np.zeros((1, g.n))
    seed[0, :: max(1, g.n // 50)] = 1.0
    s = ad.constant(seed)
    x0 = encode(raw_features(s, ctx), params)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        sheaf = build_sheaf(x0, params, ctx)
        layer_forward(x0, s, sheaf, params, ctx, 0)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def test_criterion_10_layer_cost():
    small = _layer_seconds(random_graph(20_000, 40_000, seed=0))
    large = _layer_seconds(random_graph(20_000, 80_000, seed=0))
    ratio = large / small
    scaling_ok = ratio <= 2.5
    try:
        grid = load_dataset("power_grid")
    except DatasetUnavailable as exc:
        stand_in = _layer_seconds(random_graph(4941, 6594, seed=0))
        record(10, False, f"power_grid graph not installed; synthetic n=4941 m=6594 stand-in layer "
                          f"{stand_in * 1e3:.1f} ms (not the criterion); doubling m ratio {ratio:.2f} (limit 2.5)")
        pytest.fail(str(exc))
    t = _layer_seconds(grid)
    ok = t < 1.0 and scaling_ok
    record(10, ok, f"Power Grid layer {t * 1e3:.1f} ms (limit 1000); doubling m ratio {ratio:.2f} (limit 2.5)")
    assert t < 1.0 and scaling_ok
