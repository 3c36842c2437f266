"""Command-line entry points.

Subcommands: `kernels build`, `learn`, `svm train`, `evaluate`,
`experiment run`, `report sweep`. Exit codes: 0 success, 1 config or
input error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import experiment, metrics, svm
from .data import FeatureScaler, kfold_plan, load_dataset
from .kernels import build_kernel_bank, center_bank, combine, save_bank
from .util import THREADS_ENV

logger = logging.getLogger(__name__)

_METHOD_NAMES = {"tsmkl", "target-align", "average", "best-kernel"}


class ConfigError(Exception):
    """Bad arguments, config files, or input data; exits with code 1."""


def _load_data(path: str, fmt: str):
    try:
        return load_dataset(path, fmt)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load dataset {path!r}: {exc}") from exc


def _load_config(path: str) -> experiment.ExperimentConfig:
    try:
        return experiment.load_config(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"bad config {path!r}: {exc}") from exc


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepared_bank(dataset, recipe: str):
    scaler = FeatureScaler.fit(dataset.instances)
    bank, dropped = center_bank(build_kernel_bank(scaler.apply(dataset.instances), recipe))
    return bank, dropped


def cmd_kernels_build(args) -> int:
    dataset = _load_data(args.data, args.format)
    bank, dropped = _prepared_bank(dataset, args.recipe)
    os.makedirs(args.out, exist_ok=True)
    save_bank(bank, args.out, text=args.text)
    print(f"wrote {bank.p} centered kernels (n={bank.n}, dropped={len(dropped)}) to {args.out}")
    return 0


def cmd_learn(args) -> int:
    dataset = _load_data(args.data, args.format)
    method = args.method.replace("-", "_")
    try:
        config = experiment.ExperimentConfig(
            dataset_path=args.data,
            dataset_format=args.format,
            kernel_recipe=args.recipe,
            method=method,
            mkl_num_steps=args.steps,
            mkl_batch_size=args.batch_size,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    res = experiment.learn_weights(dataset.instances, dataset.labels, config, args.seed)
    payload = {
        "method": method,
        "mu": [float(v) for v in res.mu],
        "p": len(res.mu),
        "dropped_kernels": [int(i) for i in res.dropped],
        "seed": args.seed,
        **res.details,
    }
    _write_json(payload, args.out)
    print(f"{method}: {int(np.count_nonzero(res.mu))}/{len(res.mu)} nonzero weights -> {args.out}")
    return 0


def cmd_svm_train(args) -> int:
    dataset = _load_data(args.data, args.format)
    bank, _ = _prepared_bank(dataset, args.recipe)
    if args.weights:
        try:
            with open(args.weights, encoding="utf-8") as fh:
                mu = np.asarray(json.load(fh)["mu"], dtype=np.float64)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read weights {args.weights!r}: {exc}") from exc
        if mu.shape != (bank.p,):
            raise ConfigError(
                f"weight vector has {mu.size} entries, bank has {bank.p} kernels"
            )
    else:
        mu = np.full(bank.p, 1.0 / bank.p)
    combined = combine(bank.train_grams, mu)
    folds = kfold_plan(dataset.n, args.folds, args.seed)
    best_C, records = svm.select_C(
        combined, dataset.labels, folds, n_classes=dataset.n_classes
    )
    ovr = svm.ovr_train(combined, dataset.labels, best_C, n_classes=dataset.n_classes)
    payload = {
        "chosen_C": best_C,
        "cv_records": records,
        "class_names": list(dataset.class_names),
        **ovr.to_dict(instance_ids=dataset.instance_ids),
    }
    _write_json(payload, args.out)
    print(f"trained {ovr.n_classes}-class model, C={best_C:g} -> {args.out}")
    return 0


def _read_label_file(path: str) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            values = [line.strip() for line in fh if line.strip()]
        return np.array([int(v) for v in values], dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read label file {path!r}: {exc}") from exc


def cmd_evaluate(args) -> int:
    true = _read_label_file(args.true)
    pred = _read_label_file(args.pred)
    if true.shape != pred.shape:
        raise ConfigError("true/pred label files differ in length")
    c = args.classes if args.classes else int(max(true.max(), pred.max())) + 1
    report = metrics.evaluate(true, pred, c)
    out = {"metrics": report.to_dict(include_confusion=True)}
    if args.drop_fraction > 0.0:
        if not args.confidence:
            raise ConfigError("--drop-fraction needs --confidence")
        conf = np.loadtxt(args.confidence, dtype=np.float64, ndmin=1)
        if conf.shape != true.shape:
            raise ConfigError("confidence file length mismatch")
        retained, filtered = metrics.filter_unsure(conf, pred, true, args.drop_fraction, c)
        out["filtered_metrics"] = filtered.to_dict()
        out["retained"] = [int(i) for i in retained]
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_experiment_run(args) -> int:
    config = _load_config(args.config)
    if args.out:
        config.output_dir = args.out
    report = experiment.run_experiment(config)
    os.makedirs(config.output_dir, exist_ok=True)
    json_path = os.path.join(config.output_dir, "report.json")
    md_path = os.path.join(config.output_dir, "report.md")
    experiment.emit_report(report, "json", json_path)
    experiment.emit_report(report, "markdown_table", md_path)
    acc = report.aggregate["accuracy"]
    print(experiment.render_markdown_table(report), end="")
    print(
        f"{config.method}: accuracy {100 * acc['mean']:.2f}({100 * acc['std']:.2f}) "
        f"over {report.aggregate['n_succeeded']}/{report.aggregate['n_splits']} splits "
        f"-> {json_path}"
    )
    return 0


def cmd_report_sweep(args) -> int:
    config = _load_config(args.config)
    if args.out:
        config.output_dir = args.out
    sweep = experiment.run_lambda_sweep(config)
    os.makedirs(config.output_dir, exist_ok=True)
    tsv_path = os.path.join(config.output_dir, "sweep.tsv")
    experiment.emit_report(sweep, "tsv_sweep", tsv_path)
    _write_json(sweep, os.path.join(config.output_dir, "sweep.json"))
    print(f"{len(sweep['records'])} sweep records -> {tsv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kweave",
        description="Two-stage multiple kernel learning over precomputed Gram banks.",
        epilog=f"Set {THREADS_ENV} to cap worker threads (default 1).",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command")

    def add_data_args(p):
        p.add_argument("--data", required=True, help="dataset file")
        p.add_argument("--format", default="csv", choices=["csv", "sparse_svm"])
        p.add_argument("--recipe", default="uci_full")

    p = sub.add_parser("kernels", help="kernel bank operations")
    ksub = p.add_subparsers(dest="subcommand")
    kb = ksub.add_parser("build", help="build and center a kernel bank")
    add_data_args(kb)
    kb.add_argument("--out", required=True, help="output directory")
    kb.add_argument("--text", action="store_true", help="TSV matrices instead of binary")
    kb.set_defaults(func=cmd_kernels_build)

    p = sub.add_parser("learn", help="learn kernel weights on a full dataset")
    add_data_args(p)
    p.add_argument("--method", required=True, choices=sorted(_METHOD_NAMES))
    p.add_argument("--out", required=True, help="weights JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None, help="subgradient steps (default: auto)")
    p.add_argument("--batch-size", type=int, default=100)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("svm", help="SVM operations")
    ssub = p.add_subparsers(dest="subcommand")
    st = ssub.add_parser("train", help="train a combined-kernel SVM")
    add_data_args(st)
    st.add_argument("--weights", help="weights JSON from `learn` (default: uniform)")
    st.add_argument("--out", required=True, help="model JSON path")
    st.add_argument("--folds", type=int, default=4)
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_svm_train)

    p = sub.add_parser("evaluate", help="score prediction files")
    p.add_argument("--true", required=True, help="file with one true label id per line")
    p.add_argument("--pred", required=True, help="file with one predicted label id per line")
    p.add_argument("--classes", type=int, default=0, help="class count (default: infer)")
    p.add_argument("--drop-fraction", type=float, default=0.0)
    p.add_argument("--confidence", help="per-instance confidence file for filtering")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="experiment pipelines")
    esub = p.add_subparsers(dest="subcommand")
    er = esub.add_parser("run", help="run a config end to end")
    er.add_argument("--config", required=True, help="experiment config JSON")
    er.add_argument("--out", help="override the config's output directory")
    er.set_defaults(func=cmd_experiment_run)

    p = sub.add_parser("report", help="report utilities")
    rsub = p.add_subparsers(dest="subcommand")
    rs = rsub.add_parser("sweep", help="lambda sweep diagnostics on one split")
    rs.add_argument("--config", required=True, help="experiment config JSON")
    rs.add_argument("--out", help="override the config's output directory")
    rs.set_defaults(func=cmd_report_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; fold those into the config-error code
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not hasattr(args, "func"):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything past config validation is a runtime failure
        logger.error("%s", exc)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
