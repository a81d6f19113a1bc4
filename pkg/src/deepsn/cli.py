"""Command line entry points: gen-data, train, select, verify, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .cascade import (
    CorruptRecord, DiffusionModelSpec, make_ground_truth, read_ground_truth, write_ground_truth,
)
from .datasets import DatasetUnavailable, canonical, load_graph
from .dynamics import DivergenceError
from .graph import Graph, GraphFormatError
from .model import GnnConfig, GnnParams
from .selection import (
    VARIANTS, ScorerConfig, budget_from_percent, evaluate_seed_set, random_seeds, run_selection,
    top_degree_seeds,
)
from .sheaf import NotPositiveDefinite
from .training import TrainConfig, mean_absolute_error, split_dataset, train_estimator
from .verify import SUITES, run_all

log = logging.getLogger("deepsn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3, 4

RESULT_HEADER = ["dataset", "model", "variant", "k_percent", "spread_percent", "se", "wall_time"]

# published 10%-budget spreads, printed next to local results for context only
REFERENCE_SPREAD = {("cora_ml", "ic", 10.0): 40.9, ("jazz", "ic", 10.0): 41.6}


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class DataConfig:
    samples: int = 300
    seed_percent: tuple = (1.0, 20.0)  # seed-set sizes as a percentage range of n
    runs: int = 100


@dataclass
class SelectionConfig:
    budget: float = 10.0
    variant: str = "deepsn"
    resolution: float = 1.0
    estimator_on_gw: bool = False
    eval_runs: int = 100
    scorer: ScorerConfig = field(default_factory=ScorerConfig)


@dataclass
class ExperimentConfig:
    dataset: str = "jazz"
    diffusion: DiffusionModelSpec = field(default_factory=DiffusionModelSpec)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    seed: int = 0
    out: str = "runs"
    threads: int = 1

    def validate(self) -> "ExperimentConfig":
        if not 0 < self.selection.budget <= 100:
            raise UsageError("budget percentage must lie in (0, 100]")
        if self.selection.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {', '.join(VARIANTS)}")
        lo, hi = self.data.seed_percent
        if not 0 < lo <= hi <= 100:
            raise UsageError("seed_percent must satisfy 0 < lo <= hi <= 100")
        if self.data.samples < 0 or self.data.runs < 1 or self.selection.eval_runs < 1:
            raise UsageError("samples must be >= 0 and runs >= 1")
        if self.threads < 1:
            raise UsageError("threads must be >= 1")
        p = Path(self.dataset)
        if (p.suffix or "/" in self.dataset) and not p.is_file():
            raise DataError(f"graph file {self.dataset} does not exist")
        return self

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def dataset_name(self) -> str:
        try:
            return canonical(self.dataset)
        except KeyError:
            return Path(self.dataset).stem

    def to_dict(self) -> dict:
        d = asdict(self)
        d["diffusion"] = self.diffusion.to_dict()
        return d


def _section(cls, raw: dict | None, where: str):
    raw = raw or {}
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise UsageError(f"unknown keys in {where}: {', '.join(sorted(extra))}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {where}: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    sel = dict(raw.pop("selection", {}) or {})
    scorer = _section(ScorerConfig, sel.pop("scorer", None), "selection.scorer")
    data = dict(raw.pop("data", {}) or {})
    if "seed_percent" in data:
        data["seed_percent"] = tuple(data["seed_percent"])
    parts = {
        "diffusion": _section(DiffusionModelSpec, raw.pop("diffusion", None), "diffusion"),
        "gnn": _section(GnnConfig, raw.pop("gnn", None), "gnn"),
        "training": _section(TrainConfig, raw.pop("training", None), "training"),
        "data": _section(DataConfig, data, "data"),
        "selection": SelectionConfig(**{**asdict(_section(SelectionConfig, sel, "selection")), "scorer": scorer}),
    }
    cfg = _section(ExperimentConfig, raw, "config")
    for k, v in parts.items():
        setattr(cfg, k, v)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    return config_from_dict(raw)


def _paths(cfg: ExperimentConfig) -> dict[str, Path]:
    out = cfg.out_dir
    return {
        "data": out / "ground_truth.jsonl",
        "checkpoint": out / "checkpoint.json",
        "history": out / "history.csv",
        "results": out / "results.csv",
    }


def _graph(cfg: ExperimentConfig) -> Graph:
    return load_graph(cfg.dataset, cfg.seed)


def _ensure_out(cfg: ExperimentConfig) -> None:
    try:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {cfg.out_dir}: {exc}") from exc


def cmd_gen_data(cfg: ExperimentConfig, g: Graph | None = None) -> Path:
    """Simulate ground truth and write it as JSON lines."""
    g = g or _graph(cfg)
    _ensure_out(cfg)
    lo, hi = cfg.data.seed_percent
    size_range = (max(1, int(np.ceil(g.n * lo / 100))), max(1, int(np.floor(g.n * hi / 100))))
    size_range = (min(size_range), max(size_range))
    samples = make_ground_truth(g, cfg.diffusion, cfg.data.samples, size_range, cfg.data.runs,
                                np.random.default_rng(cfg.seed), cfg.threads)
    path = _paths(cfg)["data"]
    try:
        write_ground_truth(samples, path)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    log.info("wrote %d samples to %s", len(samples), path)
    return path


def cmd_train(cfg: ExperimentConfig, g: Graph | None = None) -> tuple[Path, float]:
    """Train the estimator; writes the checkpoint and history CSV, returns the test MAE."""
    g = g or _graph(cfg)
    paths = _paths(cfg)
    if not paths["data"].is_file():
        raise DataError(f"ground-truth file {paths['data']} not found; run gen-data first")
    samples = read_ground_truth(paths["data"], g.n)
    split = split_dataset(samples, cfg.seed)
    train = TrainConfig(**{**asdict(cfg.training), "seed": cfg.seed})
    params, history = train_estimator(g, split, cfg.gnn, train)
    paths["checkpoint"].write_text(params.to_json(), encoding="utf-8")
    history.write_csv(paths["history"])
    mae = mean_absolute_error(params, g, split.test)
    print(f"test MAE {mae:.6f}")
    return paths["checkpoint"], mae


def load_checkpoint(path, g: Graph) -> GnnParams:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} not found; run train first")
    try:
        params = GnnParams.from_json(path.read_text(encoding="utf-8"))
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"unreadable checkpoint {path}: {exc}") from exc
    if params.n != g.n:
        raise DataError(f"checkpoint was trained for n={params.n}, graph has n={g.n}")
    return params


def _round(x: float) -> float:
    return float(f"{x:.10g}")


def cmd_select(cfg: ExperimentConfig, g: Graph | None = None, checkpoint=None) -> dict:
    """Pick seeds with the trained estimator, evaluate them, append a results row."""
    t0 = time.perf_counter()
    g = g or _graph(cfg)
    paths = _paths(cfg)
    _ensure_out(cfg)
    params = load_checkpoint(checkpoint or paths["checkpoint"], g)
    sel = cfg.selection
    k = budget_from_percent(g.n, sel.budget)
    res = run_selection(g, params, k, sel.variant, sel.resolution, sel.scorer, cfg.seed, sel.estimator_on_gw)
    pct, se = evaluate_seed_set(g, cfg.diffusion, res.seeds, sel.eval_runs, cfg.seed, cfg.threads)
    doc = {
        "dataset": cfg.dataset_name,
        "spec": cfg.diffusion.to_dict(),
        "k": k,
        "seeds": [int(v) for v in res.seeds],
        "est_spread": _round(res.est_spread),
        "mc_spread": _round(pct * g.n / 100.0),
        "se": _round(se * g.n / 100.0),
    }
    out = cfg.out_dir / f"seeds_{sel.variant}_{_pct_tag(sel.budget)}.json"
    out.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    append_result(paths["results"], [cfg.dataset_name, cfg.diffusion.kind, sel.variant, sel.budget,
                                     round(pct, 4), round(se, 4), round(time.perf_counter() - t0, 3)])
    print(f"{cfg.dataset_name} {cfg.diffusion.kind} {sel.variant} k={k}: spread {pct:.2f}% (se {se:.2f})")
    return doc


def _pct_tag(pct: float) -> str:
    return f"{pct:g}".replace(".", "p")


def append_result(path: Path, row: list) -> None:
    new = not path.is_file() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(RESULT_HEADER)
        w.writerow(row)


def cmd_verify(seed: int = 0, runs: int = 100_000, threads: int = 1, only=None) -> bool:
    results = run_all(seed=seed, runs=runs, threads=threads, only=only)
    for r in results:
        print(r.line())
        for f in r.failures:
            print(f"  {r.name}: {f}")
    ok = all(r.passed for r in results)
    print("all suites passed" if ok else "verification FAILED")
    return ok


def cmd_report(cfg: ExperimentConfig, baselines: bool = False, g: Graph | None = None) -> list[dict]:
    """Summarize results.csv per (dataset, model, variant, k%), optionally with degree/random rows."""
    path = _paths(cfg)["results"]
    if not path.is_file():
        raise DataError(f"no results at {path}; run select first")
    groups: dict[tuple, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            try:
                key = (row["dataset"], row["model"], row["variant"], float(row["k_percent"]))
                groups.setdefault(key, []).append(float(row["spread_percent"]))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path} row {i}: {exc}") from exc
    rows = []
    for key, vals in sorted(groups.items()):
        v = np.asarray(vals)
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
        rows.append({"dataset": key[0], "model": key[1], "variant": key[2], "k_percent": key[3],
                     "spread_percent": round(float(v.mean()), 4), "se": round(se, 4), "runs": int(v.size)})
    if baselines:
        g = g or _graph(cfg)
        for key in sorted({(r["dataset"], r["model"], r["k_percent"]) for r in rows}):
            k = budget_from_percent(g.n, key[2])
            for name, seeds in (("degree", top_degree_seeds(g, k)), ("random", random_seeds(g, k, cfg.seed))):
                pct, se = evaluate_seed_set(g, cfg.diffusion, seeds, cfg.selection.eval_runs, cfg.seed, cfg.threads)
                rows.append({"dataset": key[0], "model": key[1], "variant": name, "k_percent": key[2],
                             "spread_percent": round(pct, 4), "se": round(se, 4), "runs": 1})
    out = cfg.out_dir / "report.csv"
    cols = ["dataset", "model", "variant", "k_percent", "spread_percent", "se", "runs", "reference"]
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            r["reference"] = REFERENCE_SPREAD.get((r["dataset"], r["model"], r["k_percent"]), "")
            w.writerow([r[c] for c in cols])
            ref = f"  (published reference {r['reference']})" if r["reference"] != "" else ""
            print(f"{r['dataset']} {r['model']} {r['variant']} {r['k_percent']:g}%: "
                  f"{r['spread_percent']:.2f}% +- {r['se']:.2f}{ref}")
    return rows


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dataset", help="registry name or edge-list path")
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--budget", type=float, help="seed budget as a percentage of n")
    common.add_argument("--model", choices=("ic", "lt", "sis"), help="diffusion model")
    common.add_argument("--runs", type=int, help="Monte Carlo runs")
    common.add_argument("--threads", type=int, help="worker threads for simulation")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="deepsn", description="Sheaf reaction-diffusion influence estimation and seed selection")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="simulate ground-truth activation probabilities")
    sub.add_parser("train", parents=[common], help="train the influence estimator")
    s = sub.add_parser("select", parents=[common], help="select and evaluate a seed set")
    s.add_argument("--checkpoint", help="estimator checkpoint (default: OUT/checkpoint.json)")
    v = sub.add_parser("verify", parents=[common], help="run the property suites")
    v.add_argument("--suite", action="append", choices=list(SUITES), help="run only these suites")
    r = sub.add_parser("report", parents=[common], help="summarize results.csv")
    r.add_argument("--baselines", action="store_true", help="add degree and random reference rows")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.dataset is not None:
        cfg.dataset = args.dataset
    if args.variant is not None:
        cfg.selection.variant = args.variant
    if args.budget is not None:
        cfg.selection.budget = args.budget
    if args.model is not None:
        cfg.diffusion = DiffusionModelSpec.from_dict({**cfg.diffusion.to_dict(), "kind": args.model})
    if args.runs is not None:
        cfg.data.runs = args.runs
        cfg.selection.eval_runs = args.runs
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            seed = args.seed if args.seed is not None else 0
            ok = cmd_verify(seed, args.runs or 100_000, args.threads or 1, args.suite)
            return EXIT_OK if ok else EXIT_VERIFY
        cfg = resolve_config(args)
        if args.command == "gen-data":
            cmd_gen_data(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "select":
            cmd_select(cfg, checkpoint=args.checkpoint)
        elif args.command == "report":
            cmd_report(cfg, baselines=args.baselines)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DatasetUnavailable, CorruptRecord, GraphFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, NotPositiveDefinite, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
