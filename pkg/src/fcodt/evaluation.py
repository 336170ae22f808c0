"""Metrics, lambda grid search, experiment protocols, and significance
testing.

Every experiment cell derives its own seed from (seed_base, dataset,
method, parameter, repeat) through sha256, so cells are independent,
order-insensitive, and reproducible. Wall time is recorded per cell but
kept out of the canonical results rows so identical configurations emit
byte-identical results CSVs.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .baselines import fit_cart, fit_ridge_odt
from .datasets import (
    Dataset,
    gen_sim1,
    gen_sim2,
    kfold_indices,
    load_from_manifest,
    minmax_scale,
    train_test_split,
)
from .tree import ObliqueTreeModel, SplitCriteria, fit_fc_odt, predict_batch

DEFAULT_LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0)
DEFAULT_DEPTHS = (2, 3, 4, 5, 6)
DEFAULT_SAMPLE_SIZES = (50, 100, 200, 500, 1000, 2000)

SIM_GENERATORS = {"sim1": gen_sim1, "sim2": gen_sim2}


def fit_method(method: str, data: Dataset, lam: float,
               criteria: SplitCriteria) -> ObliqueTreeModel:
    if method == "fc_odt":
        return fit_fc_odt(data, lam, criteria)
    if method == "ridge_odt":
        return fit_ridge_odt(data, lam, criteria)
    if method == "cart":
        return fit_cart(data, criteria)
    raise ValueError(f"unknown method {method!r}")


def method_uses_lambda(method: str) -> bool:
    return method in ("fc_odt", "ridge_odt")


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise ValueError("prediction and target lengths differ")
    if pred.size < 1:
        raise ValueError("need at least one value")
    return float(np.mean((pred - target) ** 2))


def r2(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise ValueError("prediction and target lengths differ")
    if pred.size < 2:
        raise ValueError("need at least two values")
    ss_total = float(np.sum((target - target.mean()) ** 2))
    if ss_total == 0.0:
        raise ValueError("undefined R^2: target is constant")
    ss_res = float(np.sum((target - pred) ** 2))
    return 1.0 - ss_res / ss_total


def cell_seed(base: int, *parts) -> int:
    """Deterministic 63-bit seed from the base and cell coordinates."""
    key = ":".join([str(base)] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple = ("fc_odt", "ridge_odt")
    datasets: tuple = ("sim1", "sim2")
    depths: tuple = DEFAULT_DEPTHS
    sample_sizes: tuple = DEFAULT_SAMPLE_SIZES
    repeats: int = 10
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    seed_base: int = 0
    max_depth: int = 4
    min_samples_split: int = 20
    min_samples_leaf: int = 8
    min_gain: float = 0.0
    folds: int = 5
    train_fraction: float = 0.6
    noise_sigma: float = 0.01
    test_samples: int = 500
    workers: int = 1
    scale_features: bool = False

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if not self.lambda_grid:
            raise ValueError("lambda grid must be nonempty")
        if not self.methods:
            raise ValueError("methods must be nonempty")

    def criteria(self, max_depth: int | None = None) -> SplitCriteria:
        return SplitCriteria(
            max_depth=max_depth if max_depth is not None else self.max_depth,
            min_samples_split=self.min_samples_split,
            min_samples_leaf=self.min_samples_leaf,
            min_gain=self.min_gain,
        )


@dataclass(frozen=True)
class ExperimentRecord:
    method: str
    dataset: str
    seed: int
    param_name: str
    param_value: float
    metric: str
    value: float
    wall_time: float = 0.0

    def key(self) -> tuple:
        return (self.method, self.dataset, self.param_name,
                self.param_value, self.seed, self.metric)


def grid_search_lambda(data: Dataset, method: str, criteria: SplitCriteria,
                       grid, folds: int, seed: int):
    """Pick the grid value minimizing mean validation MSE across k folds.

    Ties break toward the smaller lambda. Fit failures are recorded in the
    CV table (that cell scores +inf) without aborting the search. Returns
    (best_lambda, table) where the table has one row per (lambda, fold).
    """
    grid = list(grid)
    if not grid:
        raise ValueError("lambda grid must be nonempty")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    assignments = kfold_indices(data.n, folds, seed)
    table = []
    best_lam = None
    best_mean = math.inf
    for lam in sorted(grid):
        fold_mses = []
        for i, fold in enumerate(assignments):
            try:
                model = fit_method(method, data.subset(fold.train_indices),
                                   lam, criteria)
                pred = predict_batch(model, data.features[fold.test_indices])
                val = mse(pred, data.targets[fold.test_indices])
                err = ""
            except Exception as exc:  # recorded, not raised
                val = math.inf
                err = f"{type(exc).__name__}: {exc}"
            fold_mses.append(val)
            table.append({"lambda": lam, "fold": i, "mse": val, "error": err})
        mean_val = float(np.mean(fold_mses))
        if mean_val < best_mean:
            best_mean = mean_val
            best_lam = lam
    if best_lam is None or not math.isfinite(best_mean):
        raise ValueError("grid search failed for every lambda")
    return best_lam, table


def _tuned_fit(method: str, train: Dataset, config: ExperimentConfig,
               criteria: SplitCriteria, seed: int):
    """Fit with per-cell lambda tuning; wall time covers tuning + fit."""
    t0 = time.perf_counter()
    if method_uses_lambda(method):
        lam, _ = grid_search_lambda(train, method, criteria,
                                    config.lambda_grid, config.folds, seed)
    else:
        lam = 0.0
    model = fit_method(method, train, lam, criteria)
    return model, lam, time.perf_counter() - t0


def _sim_sweep_cell(config: ExperimentConfig, dataset: str, method: str,
                    param_name: str, depth: int, n_train: int, rep: int) -> ExperimentRecord:
    gen = SIM_GENERATORS[dataset]
    param_value = depth if param_name == "depth" else n_train
    # data and test draws are shared across methods and parameter values
    # within a repeat, so method and depth/size curves are paired; the
    # cell seed (lambda tuning) stays fully cell-specific
    train = gen(n_train, config.noise_sigma,
                cell_seed(config.seed_base, dataset, "data", rep))
    test = gen(config.test_samples, 0.0,
               cell_seed(config.seed_base, dataset, "test", rep))
    seed = cell_seed(config.seed_base, dataset, method, param_name, param_value, rep)
    criteria = config.criteria(max_depth=depth)
    model, _, wall = _tuned_fit(method, train, config, criteria, seed)
    value = mse(predict_batch(model, test.features), test.clean_targets)
    return ExperimentRecord(method=method, dataset=dataset, seed=seed,
                            param_name=param_name, param_value=float(param_value),
                            metric="mse", value=value, wall_time=wall)


def _run_cells(cells, worker, workers: int):
    if workers <= 1:
        return [worker(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, cells))


def _sweep_worker(args):
    return _sim_sweep_cell(*args)


def sweep_cells(config: ExperimentConfig, kind: str):
    """Enumerate the (dataset, method, parameter, repeat) cells of a sweep."""
    if kind == "depth":
        params = [(d, 2000) for d in config.depths]
        name = "depth"
    elif kind == "samples":
        params = [(config.max_depth, n) for n in config.sample_sizes]
        name = "n_samples"
    else:
        raise ValueError(f"unknown sweep kind {kind!r}")
    cells = []
    for dataset in config.datasets:
        if dataset not in SIM_GENERATORS:
            raise ValueError(f"sweeps run on simulated datasets only, got {dataset!r}")
        for method in config.methods:
            for depth, n_train in params:
                for rep in range(config.repeats):
                    cells.append((config, dataset, method, name, depth, n_train, rep))
    return cells


def run_depth_sweep(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Fresh data draw, per-cell lambda tuning, and noise-free test MSE for
    every (dataset, depth, repeat, method) cell."""
    records = _run_cells(sweep_cells(config, "depth"), _sweep_worker, config.workers)
    return sorted(records, key=lambda r: r.key())


def run_sample_sweep(config: ExperimentConfig) -> list[ExperimentRecord]:
    records = _run_cells(sweep_cells(config, "samples"), _sweep_worker, config.workers)
    return sorted(records, key=lambda r: r.key())


def _bench_dataset(config: ExperimentConfig, name: str, rep: int,
                   manifest: dict | None, base_dir: str) -> Dataset:
    if name in SIM_GENERATORS:
        seed = cell_seed(config.seed_base, name, "data", rep)
        return SIM_GENERATORS[name](2000, config.noise_sigma, seed)
    if manifest is None:
        raise FileNotFoundError(f"no manifest supplied for real dataset {name!r}")
    return load_from_manifest(name, manifest, base_dir)


def _bench_cell(config: ExperimentConfig, name: str, method: str, rep: int,
                data: Dataset) -> ExperimentRecord:
    # one partition per (dataset, repeat): every method scores the same split
    split = train_test_split(data, config.train_fraction,
                             cell_seed(config.seed_base, name, "split", rep))
    seed = cell_seed(config.seed_base, name, method, "benchmark", rep)
    train = data.subset(split.train_indices)
    test = data.subset(split.test_indices)
    if config.scale_features:
        train, test = minmax_scale(train, (test,))
    criteria = config.criteria()
    model, _, wall = _tuned_fit(method, train, config, criteria, seed)
    value = r2(predict_batch(model, test.features), test.targets)
    return ExperimentRecord(method=method, dataset=name, seed=seed,
                            param_name="depth", param_value=float(criteria.max_depth),
                            metric="r2", value=value, wall_time=wall)


def _bench_worker(args):
    return _bench_cell(*args)


def run_benchmark(config: ExperimentConfig, manifest: dict | None = None,
                  base_dir: str = "."):
    """3:2 split, per-cell lambda tuning, K = max_depth, test R^2 per
    (dataset, method, repeat). Datasets whose files are missing are
    skipped and reported. Returns (records, skipped)."""
    cells = []
    skipped = []
    for name in config.datasets:
        for rep in range(config.repeats):
            try:
                data = _bench_dataset(config, name, rep, manifest, base_dir)
            except (FileNotFoundError, KeyError) as exc:
                skipped.append({"dataset": name, "reason": str(exc)})
                break
            for method in config.methods:
                cells.append((config, name, method, rep, data))
    records = _run_cells(cells, _bench_worker, config.workers)
    return sorted(records, key=lambda r: r.key()), skipped


def rank_sum_test(sample_a, sample_b):
    """Two-sided Wilcoxon rank-sum test.

    Uses exact enumeration of all group assignments when the combined size
    is at most 12, otherwise a normal approximation with midrank tie
    correction and continuity correction. Returns (rank sum of the first
    sample, p-value). All values tied across both samples gives p = 1.
    """
    a = np.asarray(sample_a, dtype=np.float64).reshape(-1)
    b = np.asarray(sample_b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    pooled = np.concatenate([a, b])
    n1, n2 = a.size, b.size
    n = n1 + n2

    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(n)
    sv = pooled[order]
    i = 0
    tie_sizes = []
    while i < n:
        j = i
        while j + 1 < n and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        tie_sizes.append(j - i + 1)
        i = j + 1
    w = float(ranks[:n1].sum())

    if len(tie_sizes) == 1:  # every value identical
        return w, 1.0

    mu = n1 * (n + 1) / 2.0
    if n <= 12:
        dev = abs(w - mu)
        count = 0
        total = 0
        for combo in combinations(range(n), n1):
            total += 1
            if abs(ranks[list(combo)].sum() - mu) >= dev - 1e-12:
                count += 1
        return w, count / total

    tie_term = sum(t ** 3 - t for t in tie_sizes)
    sigma2 = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma2 <= 0:
        return w, 1.0
    # continuity correction toward the mean
    z = (w - mu - math.copysign(0.5, w - mu)) / math.sqrt(sigma2)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return w, min(1.0, p)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


RESULTS_COLUMNS = ("method", "dataset", "seed", "param_name", "param_value",
                   "metric", "value")


def records_to_csv(records) -> str:
    """Canonical long-format results CSV; rows sorted by cell key, floats
    at 17 significant digits. Wall times live in the separate timing CSV
    so this document is byte-identical across reruns."""
    lines = [",".join(RESULTS_COLUMNS)]
    for r in sorted(records, key=lambda r: r.key()):
        lines.append(",".join([r.method, r.dataset, str(r.seed), r.param_name,
                               _fmt(r.param_value), r.metric, _fmt(r.value)]))
    return "\n".join(lines) + "\n"


def timings_to_csv(records) -> str:
    lines = [",".join(("method", "dataset", "seed", "param_name",
                       "param_value", "wall_time_s"))]
    for r in sorted(records, key=lambda r: r.key()):
        lines.append(",".join([r.method, r.dataset, str(r.seed), r.param_name,
                               _fmt(r.param_value), _fmt(r.wall_time)]))
    return "\n".join(lines) + "\n"


def _average_ranks(table: dict) -> dict:
    """Average rank per method over datasets (rank 1 = highest mean R^2;
    ties share the average rank)."""
    methods = sorted({m for row in table.values() for m in row})
    sums = {m: 0.0 for m in methods}
    counts = {m: 0 for m in methods}
    for _, row in table.items():
        present = [m for m in methods if m in row]
        means = {m: row[m][0] for m in present}
        by_score = sorted(present, key=lambda m: -means[m])
        pos = 0
        while pos < len(by_score):
            end = pos
            while (end + 1 < len(by_score)
                   and means[by_score[end + 1]] == means[by_score[pos]]):
                end += 1
            avg_rank = (pos + end) / 2.0 + 1.0
            for m in by_score[pos:end + 1]:
                sums[m] += avg_rank
                counts[m] += 1
            pos = end + 1
    return {m: sums[m] / counts[m] for m in methods if counts[m]}


def aggregate_benchmark(records, reference: list[dict] | None = None):
    """Collapse benchmark records to mean/std per (dataset, method) and
    average ranks, optionally merging externally published mean/std scores
    (which join the rank computation but carry no per-repeat values)."""
    table: dict[str, dict[str, tuple]] = {}
    per_repeat: dict[tuple, list] = {}
    for r in records:
        if r.metric != "r2":
            continue
        per_repeat.setdefault((r.dataset, r.method), []).append(r.value)
    for (dataset, method), vals in per_repeat.items():
        arr = np.asarray(vals)
        table.setdefault(dataset, {})[method] = (float(arr.mean()), float(arr.std()))
    for row in reference or []:
        name, method = row["dataset"], row["method"]
        if name in table and method not in table[name]:
            table[name][method] = (float(row["mean"]), float(row["std"]))
    ranks = _average_ranks(table)
    return table, ranks, per_repeat


def significance_markers(per_repeat: dict, reference_method: str = "fc_odt",
                         alpha: float = 0.1):
    """Two-sided rank-sum comparison of every method against the reference
    on each dataset: '+' when the reference is significantly better, '-'
    when significantly worse, '' otherwise."""
    out = []
    datasets = sorted({d for d, _ in per_repeat})
    for dataset in datasets:
        ref_vals = per_repeat.get((dataset, reference_method))
        if not ref_vals:
            continue
        for (ds, method), vals in sorted(per_repeat.items()):
            if ds != dataset or method == reference_method:
                continue
            _, p = rank_sum_test(ref_vals, vals)
            marker = ""
            if p < alpha:
                marker = "+" if np.mean(ref_vals) > np.mean(vals) else "-"
            out.append({"dataset": dataset, "method": method,
                        "p_value": p, "marker": marker})
    return out


def aggregate_to_csv(table: dict, ranks: dict) -> str:
    methods = sorted({m for row in table.values() for m in row})
    lines = [",".join(["dataset"] + methods)]
    for dataset in sorted(table):
        cells = []
        for m in methods:
            if m in table[dataset]:
                mean, std = table[dataset][m]
                cells.append(f"{mean:.3f}+-{std:.3f}")
            else:
                cells.append("")
        lines.append(",".join([dataset] + cells))
    lines.append(",".join(["average_rank"] +
                          [f"{ranks[m]:.2f}" if m in ranks else "" for m in methods]))
    return "\n".join(lines) + "\n"


def significance_to_csv(markers) -> str:
    lines = ["dataset,method,p_value,marker"]
    for row in markers:
        lines.append(f"{row['dataset']},{row['method']},{_fmt(row['p_value'])},{row['marker']}")
    return "\n".join(lines) + "\n"


def load_reference_scores(path: str) -> list[dict]:
    """Read externally published mean/std scores (dataset, method, mean,
    std) used for rank aggregation."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if header is None:
                header = cells
                continue
            row = dict(zip(header, cells))
            rows.append({"dataset": row["dataset"], "method": row["method"],
                         "mean": float(row["mean"]), "std": float(row["std"])})
    return rows
