"""Command-line surface: train, predict, simulate, sweep, bench, inspect.

All outputs are written atomically (temp file + rename) and every command
is deterministic for identical flags and inputs; randomness only flows
from explicit seed flags or the config's seed base.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import evaluation
from .datasets import (
    dataset_to_csv,
    gen_sim1,
    gen_sim2,
    load_manifest,
    parse_csv,
    parse_libsvm,
)
from .evaluation import (
    ExperimentConfig,
    ExperimentRecord,
    aggregate_benchmark,
    aggregate_to_csv,
    grid_search_lambda,
    load_reference_scores,
    records_to_csv,
    run_benchmark,
    significance_markers,
    significance_to_csv,
    timings_to_csv,
)
from .stumps import compute_stumps, stump_gram_matrix, verify_orthogonal_expansion
from .tree import (
    ObliqueNode,
    SplitCriteria,
    decision_path,
    model_from_text,
    model_to_text,
    predict_batch,
)

MANIFEST_ENV = "FCODT_MANIFEST"

CONFIG_KEYS = {
    "methods", "datasets", "depths", "sample_sizes", "repeats", "lambda_grid",
    "seed_base", "max_depth", "min_samples_split", "min_samples_leaf",
    "min_gain", "folds", "train_fraction", "noise_sigma", "test_samples",
    "workers", "scale_features", "manifest",
}


def atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_run_config(path: str):
    """Parse a declarative run-config document; unknown keys are rejected
    and every field falls back to its documented default."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("run config must be a JSON object")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    manifest_path = raw.pop("manifest", None)
    kwargs = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return ExperimentConfig(**kwargs), manifest_path


def config_hash(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _load_table(path: str, fmt: str, target, drop):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    name = os.path.splitext(os.path.basename(path))[0]
    if fmt == "libsvm":
        return parse_libsvm(text, name=name)
    target_spec = target if target is not None else "y"
    if isinstance(target_spec, str) and target_spec.lstrip("-").isdigit():
        target_spec = int(target_spec)
    return parse_csv(text, target_spec, drop_columns=tuple(drop or ()), name=name)


def _criteria_from_args(args) -> SplitCriteria:
    return SplitCriteria(
        max_depth=args.max_depth,
        min_samples_split=args.min_split,
        min_samples_leaf=args.min_leaf,
        min_gain=args.min_gain,
    )


def cmd_train(args) -> int:
    data = _load_table(args.data, args.format, args.target, args.drop)
    if data.n == 0:
        print("error: training data is empty", file=sys.stderr)
        return 1
    criteria = _criteria_from_args(args)
    if args.lam == "cv":
        grid = tuple(float(v) for v in args.grid.split(","))
        lam, table = grid_search_lambda(data, args.method, criteria, grid,
                                        args.folds, args.seed)
        print("lambda,fold,val_mse")
        for row in table:
            print(f"{row['lambda']:g},{row['fold']},{row['mse']:.6g}")
        print(f"chosen lambda: {lam:g}")
    else:
        lam = float(args.lam)
    model = evaluation.fit_method(args.method, data, lam, criteria)
    atomic_write(args.out, model_to_text(model))
    train_mse = evaluation.mse(predict_batch(model, data.features), data.targets)
    print(f"training mse: {train_mse:.6g}")
    print(f"fitted depth: {model.fitted_depth}")
    print(f"nodes: {len(model.nodes)} ({model.n_leaves} leaves)")
    return 0


def cmd_predict(args) -> int:
    with open(args.model, "r", encoding="utf-8") as fh:
        model = model_from_text(fh.read())
    if args.target is not None or args.format == "libsvm":
        data = _load_table(args.data, args.format, args.target, args.drop)
        X = data.features
    else:
        # no target column: every column is a feature
        with open(args.data, "r", encoding="utf-8") as fh:
            text = fh.read()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            X = np.zeros((0, model.input_dim))
        else:
            ds = parse_csv(text, 0)
            X = np.hstack([ds.targets[:, None], ds.features])
    if X.shape[0] and X.shape[1] != model.input_dim:
        print(f"error: model expects {model.input_dim} features, data has {X.shape[1]}",
              file=sys.stderr)
        return 1
    preds = predict_batch(model, X) if X.shape[0] else np.zeros(0)
    lines = []
    if args.explain:
        lines.append("prediction,path_nodes,path_scores")
        for i in range(X.shape[0]):
            path = decision_path(model, X[i])
            nodes = ";".join(str(p[0]) for p in path)
            scores = ";".join(format(p[1], ".17g") for p in path)
            lines.append(f"{format(preds[i], '.17g')},{nodes},{scores}")
    else:
        lines.append("prediction")
        lines.extend(format(v, ".17g") for v in preds)
    atomic_write(args.out, "\n".join(lines) + "\n")
    print(f"wrote {X.shape[0]} predictions to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    gen = {"sim1": gen_sim1, "sim2": gen_sim2}[args.which]
    data = gen(args.n, args.sigma, args.seed)
    atomic_write(args.out, dataset_to_csv(data, include_clean=True))
    print(f"wrote {data.n} rows to {args.out}")
    return 0


def _journal_path(out_dir: str, kind: str) -> str:
    return os.path.join(out_dir, f"{kind}_journal.csv")


def _read_journal(path: str):
    records = []
    if not os.path.exists(path):
        return records
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
            records.append(ExperimentRecord(
                method=cells[0], dataset=cells[1], seed=int(cells[2]),
                param_name=cells[3], param_value=float(cells[4]),
                metric=cells[5], value=float(cells[6]), wall_time=float(cells[7])))
    return records


def _journal_line(r: ExperimentRecord) -> str:
    return ",".join([r.method, r.dataset, str(r.seed), r.param_name,
                     format(r.param_value, ".17g"), r.metric,
                     format(r.value, ".17g"), format(r.wall_time, ".17g")])


def _run_with_journal(cells, worker, journal: str, done_keys: set):
    """Run cells one at a time, flushing each finished record so an
    interrupted run resumes without recomputing."""
    new_records = []
    fresh = not os.path.exists(journal)
    os.makedirs(os.path.dirname(journal), exist_ok=True)
    with open(journal, "a", encoding="utf-8") as fh:
        if fresh:
            fh.write("method,dataset,seed,param_name,param_value,metric,value,wall_time\n")
            fh.flush()
        for cell in cells:
            record = worker(cell)
            if record.key() in done_keys:
                continue
            fh.write(_journal_line(record) + "\n")
            fh.flush()
            new_records.append(record)
    return new_records


def cmd_sweep(args) -> int:
    config, _ = load_run_config(args.config)
    journal = _journal_path(args.out, args.kind)
    previous = _read_journal(journal)
    done = {r.key() for r in previous}

    cells = evaluation.sweep_cells(config, args.kind)

    def cell_key(cell):
        cfg, dataset, method, name, depth, n_train, rep = cell
        param = depth if name == "depth" else n_train
        seed = evaluation.cell_seed(cfg.seed_base, dataset, method, name, param, rep)
        return (method, dataset, name, float(param), seed, "mse")

    pending = [c for c in cells if cell_key(c) not in done]
    print(f"{len(cells)} cells, {len(cells) - len(pending)} already done, "
          f"{len(pending)} to run")
    new_records = _run_with_journal(pending, evaluation._sweep_worker, journal, done)
    records = previous + new_records
    atomic_write(os.path.join(args.out, "results.csv"), records_to_csv(records))
    atomic_write(os.path.join(args.out, "timings.csv"), timings_to_csv(records))
    stamp = {"config_sha256": config_hash(args.config), "kind": args.kind,
             "seed_base": config.seed_base, "cells": len(records)}
    atomic_write(os.path.join(args.out, "stamp.json"),
                 json.dumps(stamp, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(records)} records to {os.path.join(args.out, 'results.csv')}")
    return 0


def cmd_bench(args) -> int:
    config, manifest_path = load_run_config(args.config)
    manifest_path = args.manifest or os.environ.get(MANIFEST_ENV) or manifest_path
    manifest = load_manifest(manifest_path) if manifest_path else None
    base_dir = os.path.dirname(os.path.abspath(manifest_path)) if manifest_path else "."

    records, skipped = run_benchmark(config, manifest, base_dir)
    atomic_write(os.path.join(args.out, "results.csv"), records_to_csv(records))
    atomic_write(os.path.join(args.out, "timings.csv"), timings_to_csv(records))

    reference = load_reference_scores(args.reference) if args.reference else None
    table, ranks, per_repeat = aggregate_benchmark(records, reference)
    atomic_write(os.path.join(args.out, "aggregate.csv"),
                 aggregate_to_csv(table, ranks))
    markers = significance_markers(per_repeat, alpha=args.alpha)
    atomic_write(os.path.join(args.out, "significance.csv"),
                 significance_to_csv(markers))
    report = {"skipped": skipped, "config_sha256": config_hash(args.config),
              "datasets_run": sorted(table)}
    atomic_write(os.path.join(args.out, "report.json"),
                 json.dumps(report, indent=2, sort_keys=True) + "\n")
    for entry in skipped:
        print(f"skipped {entry['dataset']}: {entry['reason']}")
    print(f"wrote {len(records)} records to {os.path.join(args.out, 'results.csv')}")
    return 0


def cmd_inspect(args) -> int:
    with open(args.model, "r", encoding="utf-8") as fh:
        model = model_from_text(fh.read())
    flags = f"concatenate={int(model.concatenate)} residual_path={int(model.residual_path)}"
    print(f"oblique tree: input_dim={model.input_dim} lambda={model.lam:g} {flags}")
    print(f"criteria: max_depth={model.criteria.max_depth} "
          f"min_split={model.criteria.min_samples_split} "
          f"min_leaf={model.criteria.min_samples_leaf} "
          f"min_gain={model.criteria.min_gain:g}")
    for i, node in enumerate(model.nodes):
        indent = "  " * node.depth
        if isinstance(node, ObliqueNode):
            proj = " ".join(f"{v:+.4g}" for v in node.projection)
            print(f"{indent}[{i}] split thr={node.threshold:.6g} gain={node.gain:.6g} "
                  f"children=({node.left},{node.right}) proj=[{proj}]")
        else:
            print(f"{indent}[{i}] leaf value={node.residual_mean:.6g} "
                  f"count={node.sample_count}")
    if args.stumps:
        if not args.data:
            print("error: --stumps requires --data with the training table",
                  file=sys.stderr)
            return 1
        data = _load_table(args.data, args.format, args.target, args.drop)
        basis = compute_stumps(model, data)
        gram = stump_gram_matrix(basis)
        gram_err = float(np.max(np.abs(gram - np.eye(gram.shape[0])))) if gram.size else 0.0
        deviation = verify_orthogonal_expansion(model, data)
        print(f"stumps: {basis.stumps.shape[1]} kept, {len(basis.dropped)} dropped")
        print(f"max gram deviation from identity: {gram_err:.3e}")
        print(f"max orthogonal-expansion deviation: {deviation:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcodt",
        description="Oblique regression trees with ridge-projection splits "
                    "and feature concatenation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_table_flags(p, with_target_default=True):
        p.add_argument("--data", required=True, help="input table path")
        p.add_argument("--format", choices=["csv", "libsvm"], default="csv")
        p.add_argument("--target", default="y" if with_target_default else None,
                       help="target column name or index (csv)")
        p.add_argument("--drop", nargs="*", default=[],
                       help="csv columns to exclude from the features")

    p = sub.add_parser("train", help="fit a tree and save it")
    add_table_flags(p)
    p.add_argument("--method", choices=["fc_odt", "ridge_odt", "cart"],
                   default="fc_odt")
    p.add_argument("--lambda", dest="lam", default="0.01",
                   help="ridge strength, or 'cv' for grid-searched")
    p.add_argument("--grid", default="0.0001,0.001,0.01,0.1,1,10,100,1000")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--min-split", type=int, default=20)
    p.add_argument("--min-leaf", type=int, default=8)
    p.add_argument("--min-gain", type=float, default=0.0)
    p.add_argument("--out", required=True, help="model output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a table with a saved model")
    p.add_argument("--model", required=True)
    add_table_flags(p, with_target_default=False)
    p.add_argument("--explain", action="store_true",
                   help="append decision-path columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="generate a simulated dataset CSV")
    p.add_argument("--which", choices=["sim1", "sim2"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run the depth or sample-size sweep")
    p.add_argument("--config", required=True, help="run-config JSON path")
    p.add_argument("--kind", choices=["depth", "samples"], required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="run the real-data benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", default=None,
                   help=f"dataset manifest (overrides ${MANIFEST_ENV} and config)")
    p.add_argument("--reference", default=None,
                   help="published mean/std scores CSV for rank aggregation")
    p.add_argument("--alpha", type=float, default=0.1,
                   help="significance level for rank-sum markers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="print a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--stumps", action="store_true",
                   help="run the orthonormal-stump diagnostics")
    p.add_argument("--data", default=None, help="training table (for --stumps)")
    p.add_argument("--format", choices=["csv", "libsvm"], default="csv")
    p.add_argument("--target", default="y")
    p.add_argument("--drop", nargs="*", default=[])
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
