"""End-to-end experiment protocol: random splits, per-split weight learning,
SVM training with CV-selected C, evaluation, and Table-style aggregation.

Per split: (1) train/test split, (2) feature scaling fit on train, (3) kernel
bank on train plus centered cross blocks for test, (4) method-specific kernel
weights, (5) Gram combination, (6) C selection and one-vs-rest training,
(7) prediction and metrics, (8) per-stage wall-clock accounting. Everything
randomized is seeded from base_seed + split_index, so reports are
reproducible byte for byte apart from timing fields.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines, metrics, mkl, svm
from .data import Dataset, FeatureScaler, holdout_split, kfold_plan, load_dataset
from .kernels import (
    build_kernel_bank,
    center_bank,
    center_standardize_apply,
    combine,
    combine_cross,
    compute_cross_gram,
)
from .kspace import balance, make_kexamples
from .util import derive_seed, parallel_map

logger = logging.getLogger(__name__)

METHODS = ("tsmkl", "target_align", "average", "best_kernel")

# stage ids for seed derivation; fixed so reports stay reproducible
_SEED_BALANCE = 1
_SEED_LAMBDA = 2
_SEED_FINAL = 3
_SEED_BESTK = 4
_SEED_ALIGN = 5
_SEED_SVM_FOLDS = 6


@dataclass
class ExperimentConfig:
    dataset_path: str
    dataset_format: str = "csv"
    kernel_recipe: str = "uci_full"
    method: str = "tsmkl"
    n_splits: int = 10
    train_fraction: float = 0.8
    base_seed: int = 0
    stratified: bool = True
    mkl_num_steps: int | None = None  # None: 10^3 below 1000 train rows, else 10^5
    mkl_batch_size: int = 100
    lambda_grid: list | None = None
    c_grid: list = field(default_factory=lambda: list(svm.DEFAULT_C_GRID))
    svm_folds: int = 4
    drop_fraction: float = 0.0
    output_dir: str = "out"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.n_splits < 1:
            raise ValueError("n_splits must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if not 0.0 <= self.drop_fraction < 1.0:
            raise ValueError("drop_fraction must be in [0, 1)")
        if self.svm_folds < 2:
            raise ValueError("svm_folds must be >= 2")
        if self.mkl_batch_size < 1:
            raise ValueError("mkl_batch_size must be >= 1")
        if not self.c_grid:
            raise ValueError("c_grid must be non-empty")

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        """Nested JSON config, erroring on unknown keys so typos surface."""
        obj = dict(obj)

        def section(name):
            sec = obj.pop(name, {})
            if not isinstance(sec, dict):
                raise ValueError(f"config section {name!r} must be an object")
            return dict(sec)

        ds = section("dataset")
        kcfg = section("kernels")
        splits = section("splits")
        mcfg = section("mkl")
        scfg = section("svm")
        metcfg = section("metrics")
        kwargs = {
            "dataset_path": ds.pop("path", None),
            "dataset_format": ds.pop("format", "csv"),
            "kernel_recipe": kcfg.pop("recipe", "uci_full"),
            "method": obj.pop("method", "tsmkl"),
            "n_splits": splits.pop("count", 10),
            "train_fraction": splits.pop("train_fraction", 0.8),
            "base_seed": splits.pop("base_seed", 0),
            "stratified": splits.pop("stratified", True),
            "mkl_num_steps": mcfg.pop("num_steps", None),
            "mkl_batch_size": mcfg.pop("batch_size", 100),
            "lambda_grid": mcfg.pop("lambda_grid", None),
            "c_grid": scfg.pop("c_grid", list(svm.DEFAULT_C_GRID)),
            "svm_folds": scfg.pop("folds", 4),
            "drop_fraction": metcfg.pop("drop_fraction", 0.0),
            "output_dir": obj.pop("output_dir", "out"),
        }
        if kwargs["dataset_path"] is None:
            raise ValueError("config requires dataset.path")
        leftovers = {
            "top-level": obj, "dataset": ds, "kernels": kcfg, "splits": splits,
            "mkl": mcfg, "svm": scfg, "metrics": metcfg,
        }
        for where, sec in leftovers.items():
            if sec:
                raise ValueError(f"unknown config keys in {where}: {sorted(sec)}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "dataset": {"path": self.dataset_path, "format": self.dataset_format},
            "kernels": {"recipe": self.kernel_recipe},
            "method": self.method,
            "splits": {
                "count": self.n_splits,
                "train_fraction": self.train_fraction,
                "base_seed": self.base_seed,
                "stratified": self.stratified,
            },
            "mkl": {
                "num_steps": self.mkl_num_steps,
                "batch_size": self.mkl_batch_size,
                "lambda_grid": self.lambda_grid,
            },
            "svm": {"c_grid": list(self.c_grid), "folds": self.svm_folds},
            "metrics": {"drop_fraction": self.drop_fraction},
            "output_dir": self.output_dir,
        }


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def _mkl_steps(config: ExperimentConfig, n_train: int) -> int:
    if config.mkl_num_steps is not None:
        return config.mkl_num_steps
    return 1000 if n_train < 1000 else 100000


@dataclass
class WeightsResult:
    """Output of the train-side pipeline: scaler, centered bank, weights."""

    mu: np.ndarray
    bank: object
    scaler: FeatureScaler
    scaled_train: np.ndarray
    dropped: list
    details: dict


def learn_weights(train_X, train_y, config: ExperimentConfig, seed: int) -> WeightsResult:
    """Scale, build and center the bank, and learn weights from train rows only.

    Nothing here may see test rows; run_experiment feeds it the train split
    and reuses the returned scaler and centering statistics on the test side.
    """
    train_y = np.asarray(train_y, dtype=np.int64)
    scaler = FeatureScaler.fit(train_X)
    Xs = scaler.apply(train_X)
    raw_bank = build_kernel_bank(Xs, config.kernel_recipe)
    bank, dropped = center_bank(raw_bank)
    details: dict = {}

    if config.method == "tsmkl":
        steps = _mkl_steps(config, len(train_y))
        kset = make_kexamples(train_y, bank)
        bal = balance(kset, derive_seed(seed, _SEED_BALANCE))
        lam, lam_records = mkl.select_lambda(
            bal,
            grid=config.lambda_grid,
            seed=derive_seed(seed, _SEED_LAMBDA),
            batch_size=config.mkl_batch_size,
            num_steps=steps,
        )
        final = mkl.pegasos_train(
            bal,
            mkl.MklConfig(
                lam=lam,
                batch_size=config.mkl_batch_size,
                num_steps=steps,
                seed=derive_seed(seed, _SEED_FINAL),
            ),
        )
        mu = final.mu
        details = {
            "chosen_lambda": lam,
            "final_train_hinge": final.final_train_hinge,
            "num_steps": steps,
            "n_kexamples": len(bal),
            "lambda_records": lam_records,
        }
    elif config.method == "target_align":
        mu = baselines.target_align(bank, train_y, seed=derive_seed(seed, _SEED_ALIGN))
    elif config.method == "average":
        mu = baselines.uniform_weights(bank.p)
    elif config.method == "best_kernel":
        folds = kfold_plan(len(train_y), config.svm_folds, derive_seed(seed, _SEED_BESTK))
        idx, mu = baselines.best_kernel(bank, train_y, folds, c_grid=config.c_grid)
        details = {"chosen_kernel": idx, "kernel_label": bank.specs[idx].label()}
    else:  # unreachable after config validation
        raise ValueError(config.method)

    return WeightsResult(
        mu=mu, bank=bank, scaler=scaler, scaled_train=Xs, dropped=dropped, details=details
    )


def _mu_summary(mu: np.ndarray) -> dict:
    top = np.argsort(mu)[::-1][:5]
    return {
        "nonzero": int(np.count_nonzero(mu)),
        "top5": [[int(i), float(mu[i])] for i in top if mu[i] > 0],
    }


def _run_split(dataset: Dataset, config: ExperimentConfig, split_index: int) -> dict:
    seed = config.base_seed + split_index
    record: dict = {"split_index": split_index, "seed": seed}
    timings: dict = {}
    stage = "split"
    try:
        t0 = time.perf_counter()
        plan = holdout_split(dataset, config.train_fraction, seed, config.stratified)
        train = dataset.subset(plan.train_indices)
        test = dataset.subset(plan.test_indices)
        record["n_train"], record["n_test"] = train.n, test.n
        timings["split"] = time.perf_counter() - t0

        stage = "kernel_learning"
        t0 = time.perf_counter()
        res = learn_weights(train.instances, train.labels, config, seed)
        timings["kernel_learning"] = time.perf_counter() - t0
        record["mu"] = [float(v) for v in res.mu]
        record["mu_summary"] = _mu_summary(res.mu)
        record["dropped_kernels"] = [int(i) for i in res.dropped]
        record.update({k: v for k, v in res.details.items() if k != "lambda_records"})

        stage = "kernel_build"
        t0 = time.perf_counter()
        Xt = res.scaler.apply(test.instances)
        crosses = [
            center_standardize_apply(
                compute_cross_gram(spec, Xt, res.scaled_train), gram.center_stats
            )
            for spec, gram in zip(res.bank.specs, res.bank.train_grams)
        ]
        combined = combine(res.bank.train_grams, res.mu)
        combined_cross = combine_cross(crosses, res.mu)
        timings["kernel_build"] = time.perf_counter() - t0

        stage = "svm"
        t0 = time.perf_counter()
        folds = kfold_plan(train.n, config.svm_folds, derive_seed(seed, _SEED_SVM_FOLDS))
        best_C, _ = svm.select_C(
            combined, train.labels, folds, grid=config.c_grid, n_classes=dataset.n_classes
        )
        ovr = svm.ovr_train(combined, train.labels, best_C, n_classes=dataset.n_classes)
        if any(not m.converged for m in ovr.models):
            logger.warning("split %d: SMO non-convergence, retrying with jitter", split_index)
            record["svm_jitter_retry"] = True
            ovr = svm.ovr_train(
                combined, train.labels, best_C, n_classes=dataset.n_classes, jitter=1e-10
            )
        record["chosen_C"] = float(best_C)
        timings["svm"] = time.perf_counter() - t0

        stage = "evaluation"
        t0 = time.perf_counter()
        D = ovr.decision_matrix(combined_cross)
        pred = D.argmax(axis=1)
        record["metrics"] = metrics.evaluate(test.labels, pred, dataset.n_classes).to_dict()
        if config.drop_fraction > 0.0:
            conf = metrics.margin_confidence(D)
            _, filtered = metrics.filter_unsure(
                conf, pred, test.labels, config.drop_fraction, dataset.n_classes
            )
            record["filtered_metrics"] = filtered.to_dict()
        timings["evaluation"] = time.perf_counter() - t0
    except Exception as exc:  # per-split isolation: one bad split must not kill the run
        logger.warning("split %d failed at stage %s: %s", split_index, stage, exc)
        record["error"] = f"{type(exc).__name__}: {exc}"
        record["stage"] = stage
    record["timings"] = timings
    return record


def _mean_std(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "count": int(arr.size)}


def aggregate_records(per_split: list[dict]) -> dict:
    """Mean/std over successful splits for the headline metrics."""
    ok = [r for r in per_split if "error" not in r]
    if not ok:
        raise RuntimeError("no split succeeded; cannot aggregate")
    agg = {"n_splits": len(per_split), "n_succeeded": len(ok)}
    for key in ("accuracy", "mean_per_class_accuracy", "macro_f1", "mean_mcc"):
        agg[key] = _mean_std([r["metrics"][key] for r in ok])
    filt = [r for r in ok if "filtered_metrics" in r]
    if filt:
        agg["filtered_accuracy"] = _mean_std([r["filtered_metrics"]["accuracy"] for r in filt])
    return agg


@dataclass
class ExperimentReport:
    config: dict
    per_split: list
    aggregate: dict
    artifact_hashes: dict
    created_at: str
    total_seconds: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "per_split": self.per_split,
            "aggregate": self.aggregate,
            "artifact_hashes": self.artifact_hashes,
            "created_at": self.created_at,
            "total_seconds": self.total_seconds,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentReport":
        return cls(
            config=obj["config"],
            per_split=obj["per_split"],
            aggregate=obj["aggregate"],
            artifact_hashes=obj["artifact_hashes"],
            created_at=obj["created_at"],
            total_seconds=obj["total_seconds"],
        )


def _dataset_sha256(config: ExperimentConfig, dataset: Dataset) -> str:
    try:
        with open(config.dataset_path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()
    except OSError:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(dataset.instances).tobytes())
        h.update(np.ascontiguousarray(dataset.labels).tobytes())
        return h.hexdigest()


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None) -> ExperimentReport:
    """The full multi-split protocol; needs >= 1 successful split to report."""
    t_start = time.perf_counter()
    if dataset is None:
        dataset = load_dataset(config.dataset_path, config.dataset_format)
    per_split = parallel_map(
        lambda i: _run_split(dataset, config, i), list(range(config.n_splits))
    )
    aggregate = aggregate_records(per_split)
    cfg_dict = config.to_dict()
    hashes = {
        "dataset_sha256": _dataset_sha256(config, dataset),
        "config_sha256": hashlib.sha256(
            json.dumps(cfg_dict, sort_keys=True).encode()
        ).hexdigest(),
    }
    return ExperimentReport(
        config=cfg_dict,
        per_split=per_split,
        aggregate=aggregate,
        artifact_hashes=hashes,
        created_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        total_seconds=time.perf_counter() - t_start,
    )


def run_lambda_sweep(config: ExperimentConfig, dataset: Dataset | None = None) -> dict:
    """One split, one model per lambda, downstream accuracy per model.

    The records pair K-space validation hinge with test accuracy of the
    combined-kernel SVM, the data behind the hinge-vs-accuracy diagnostic.
    """
    t_start = time.perf_counter()
    if dataset is None:
        dataset = load_dataset(config.dataset_path, config.dataset_format)
    seed = config.base_seed
    plan = holdout_split(dataset, config.train_fraction, seed, config.stratified)
    train = dataset.subset(plan.train_indices)
    test = dataset.subset(plan.test_indices)

    scaler = FeatureScaler.fit(train.instances)
    Xs = scaler.apply(train.instances)
    Xt = scaler.apply(test.instances)
    raw_bank = build_kernel_bank(Xs, config.kernel_recipe)
    bank, _ = center_bank(raw_bank)
    crosses = [
        center_standardize_apply(compute_cross_gram(spec, Xt, Xs), gram.center_stats)
        for spec, gram in zip(bank.specs, bank.train_grams)
    ]
    kset = make_kexamples(train.labels, bank)
    bal = balance(kset, derive_seed(seed, _SEED_BALANCE))
    steps = _mkl_steps(config, train.n)

    def evaluator(model):
        if model.collapsed:
            return None
        try:
            combined = combine(bank.train_grams, model.mu)
            combined_cross = combine_cross(crosses, model.mu)
            folds = kfold_plan(train.n, config.svm_folds, derive_seed(seed, _SEED_SVM_FOLDS))
            best_C, _ = svm.select_C(
                combined, train.labels, folds, grid=config.c_grid,
                n_classes=dataset.n_classes,
            )
            ovr = svm.ovr_train(combined, train.labels, best_C, n_classes=dataset.n_classes)
            pred = ovr.predict(combined_cross)
            return float(np.mean(pred == test.labels))
        except (ValueError, RuntimeError) as exc:
            logger.warning("sweep evaluator failed: %s", exc)
            return None

    grid = config.lambda_grid if config.lambda_grid is not None else mkl.default_lambda_grid()
    records = mkl.lambda_sweep_report(
        bal, grid, evaluator, seed=derive_seed(seed, _SEED_LAMBDA),
        batch_size=config.mkl_batch_size, num_steps=steps,
    )
    return {
        "config": config.to_dict(),
        "split": {"seed": seed, "n_train": train.n, "n_test": test.n},
        "records": records,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "total_seconds": time.perf_counter() - t_start,
    }


# ---------------------------------------------------------------------------
# report emission

_TIMING_KEYS = ("timings", "created_at", "total_seconds")


def strip_timing_fields(obj):
    """Recursively drop wall-clock fields; what remains is the deterministic core."""
    if isinstance(obj, dict):
        return {k: strip_timing_fields(v) for k, v in obj.items() if k not in _TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing_fields(v) for v in obj]
    return obj


def _pct_cell(stat: dict) -> str:
    return f"{100.0 * stat['mean']:.2f}({100.0 * stat['std']:.2f})"


def render_markdown_table(reports) -> str:
    """One row per report, Table-style mean(std) percent cells."""
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    lines = [
        "| Method | Accuracy | Mean per-class | Macro F1 | Mean MCC | Splits |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    for rep in reports:
        agg = rep.aggregate
        lines.append(
            "| {m} | {acc} | {mpc} | {f1} | {mcc} | {k} |".format(
                m=rep.config["method"],
                acc=_pct_cell(agg["accuracy"]),
                mpc=_pct_cell(agg["mean_per_class_accuracy"]),
                f1=_pct_cell(agg["macro_f1"]),
                mcc=_pct_cell(agg["mean_mcc"]),
                k=agg["n_succeeded"],
            )
        )
    return "\n".join(lines) + "\n"


def render_sweep_tsv(sweep: dict) -> str:
    cols = ("lambda", "k_hinge", "k_accuracy", "data_accuracy")
    lines = ["\t".join(cols)]
    for rec in sweep["records"]:
        lines.append(
            "\t".join("nan" if rec[c] is None else f"{rec[c]:.10g}" for c in cols)
        )
    return "\n".join(lines) + "\n"


def emit_report(report, fmt: str, path) -> None:
    """Write a report artifact: json, markdown_table, or tsv_sweep."""
    if fmt == "json":
        payload = report.to_dict() if isinstance(report, ExperimentReport) else report
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    elif fmt == "markdown_table":
        text = render_markdown_table(report)
    elif fmt == "tsv_sweep":
        if not isinstance(report, dict) or "records" not in report:
            raise ValueError("tsv_sweep needs a lambda-sweep report")
        text = render_sweep_tsv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
