"""Dataset ingestion, label encoding, and deterministic split generation.

Supported on-disk formats:
  * CSV: UTF-8, header row, a column named ``label`` (any position),
    every other column parsed as float64.
  * sparse: one instance per line, ``<label> <idx>:<val> ...`` with
    1-based strictly increasing indices (libsvm style).

Labels are re-encoded to dense 0..c-1 ids in order of first appearance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class DatasetError(ValueError):
    """Malformed dataset file or degenerate dataset contents."""


@dataclass
class Dataset:
    """An in-memory dataset: feature matrix plus encoded labels.

    instances: (n, d) float64 matrix, all values finite.
    labels: (n,) integer class ids in 0..c-1; every id occurs at least once.
    class_names: the original label strings, indexed by class id.
    instance_ids: per-row identifiers (row numbers for file-loaded data).
    """

    instances: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    instance_ids: tuple[str, ...]

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.instances.shape[0]
        if n < 2:
            raise DatasetError(f"need at least 2 instances, got {n}")
        if self.labels.shape != (n,):
            raise DatasetError("labels length does not match instance count")
        if len(self.instance_ids) != n:
            raise DatasetError("instance_ids length does not match instance count")
        if not np.all(np.isfinite(self.instances)):
            raise DatasetError("non-finite feature value in dataset")
        c = len(self.class_names)
        if c < 2:
            raise DatasetError("only one class present")
        if self.labels.min() < 0 or self.labels.max() >= c:
            raise DatasetError("label id out of range")
        present = np.bincount(self.labels, minlength=c)
        if np.any(present == 0):
            missing = int(np.argmin(present))
            raise DatasetError(f"class id {missing} has no instances")

    @property
    def n(self) -> int:
        return self.instances.shape[0]

    @property
    def d(self) -> int:
        return self.instances.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def decoded_labels(self) -> list[str]:
        """Map encoded ids back to the source label strings."""
        return [self.class_names[i] for i in self.labels]

    def subset(self, indices) -> "Dataset":
        """Row subset keeping the global label encoding."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            instances=self.instances[idx],
            labels=self.labels[idx],
            class_names=self.class_names,
            instance_ids=tuple(self.instance_ids[i] for i in idx),
        )


def _encode_labels(raw: list[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    # class ids by first appearance, single pass
    ids: dict[str, int] = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, name in enumerate(raw):
        if name not in ids:
            ids[name] = len(ids)
        out[i] = ids[name]
    return out, tuple(ids.keys())


def _parse_float(text: str, path: str, lineno: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DatasetError(f"{path}:{lineno}: cannot parse {text!r} as float") from None
    if not math.isfinite(v):
        raise DatasetError(f"{path}:{lineno}: non-finite value {text!r}")
    return v


def _load_csv(path: str) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}:1: empty file") from None
        header = [h.strip() for h in header]
        if "label" not in header:
            raise DatasetError(f"{path}:1: no 'label' column in header")
        label_col = header.index("label")
        feat_cols = [j for j in range(len(header)) if j != label_col]

        rows: list[list[float]] = []
        raw_labels: list[str] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue  # skip blank lines
            if len(rec) != len(header):
                raise DatasetError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}"
                )
            raw_labels.append(rec[label_col].strip())
            rows.append([_parse_float(rec[j], path, lineno) for j in feat_cols])

    if len(rows) < 2:
        raise DatasetError(f"{path}: fewer than 2 data rows")
    labels, class_names = _encode_labels(raw_labels)
    if len(class_names) < 2:
        raise DatasetError(f"{path}: only one class present")
    return Dataset(
        instances=np.array(rows, dtype=np.float64),
        labels=labels,
        class_names=class_names,
        instance_ids=tuple(str(i) for i in range(len(rows))),
    )


def _load_sparse(path: str) -> Dataset:
    raw_labels: list[str] = []
    entries: list[list[tuple[int, float]]] = []
    d = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            raw_labels.append(parts[0])
            row: list[tuple[int, float]] = []
            prev = 0
            for tok in parts[1:]:
                if ":" not in tok:
                    raise DatasetError(f"{path}:{lineno}: malformed entry {tok!r}")
                idx_s, val_s = tok.split(":", 1)
                try:
                    idx = int(idx_s)
                except ValueError:
                    raise DatasetError(
                        f"{path}:{lineno}: bad feature index {idx_s!r}"
                    ) from None
                if idx < 1:
                    raise DatasetError(f"{path}:{lineno}: index {idx} is not 1-based")
                if idx <= prev:
                    raise DatasetError(
                        f"{path}:{lineno}: indices not strictly increasing at {idx}"
                    )
                prev = idx
                row.append((idx, _parse_float(val_s, path, lineno)))
                d = max(d, idx)
            entries.append(row)

    if len(entries) < 2:
        raise DatasetError(f"{path}: fewer than 2 data rows")
    labels, class_names = _encode_labels(raw_labels)
    if len(class_names) < 2:
        raise DatasetError(f"{path}: only one class present")
    X = np.zeros((len(entries), d), dtype=np.float64)
    for i, row in enumerate(entries):
        for idx, val in row:
            X[i, idx - 1] = val
    return Dataset(
        instances=X,
        labels=labels,
        class_names=class_names,
        instance_ids=tuple(str(i) for i in range(len(entries))),
    )


def load_dataset(path: str, format: str = "csv") -> Dataset:
    """Load a dataset from disk.

    Args:
        path: file to read.
        format: "csv" or "sparse_svm".
    """
    if format == "csv":
        return _load_csv(path)
    if format == "sparse_svm":
        return _load_sparse(path)
    raise DatasetError(f"unknown format {format!r}")


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitPlan:
    """A deterministic train/test index split.

    kind is "holdout" (params: fraction) or "kfold" (params: k, fold_id).
    train and test are disjoint, sorted, both non-empty.
    """

    seed: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.train_indices = np.asarray(self.train_indices, dtype=np.int64)
        self.test_indices = np.asarray(self.test_indices, dtype=np.int64)
        if self.train_indices.size == 0 or self.test_indices.size == 0:
            raise ValueError("split has an empty side")
        if np.intersect1d(self.train_indices, self.test_indices).size > 0:
            raise ValueError("train and test overlap")

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "kind": {"name": self.kind, **self.params},
            "train": [int(i) for i in self.train_indices],
            "test": [int(i) for i in self.test_indices],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SplitPlan":
        kind = dict(obj["kind"])
        name = kind.pop("name")
        return cls(
            seed=obj["seed"],
            train_indices=np.array(obj["train"], dtype=np.int64),
            test_indices=np.array(obj["test"], dtype=np.int64),
            kind=name,
            params=kind,
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def holdout_split(
    dataset: Dataset,
    train_fraction: float,
    seed: int,
    stratified: bool = True,
) -> SplitPlan:
    """One random train/test split, deterministic for a fixed seed.

    Stratified mode shuffles and splits each class separately, so class
    proportions are preserved up to rounding of one instance per class.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0,1), got {train_fraction}")
    n = dataset.n
    rng = np.random.default_rng(seed)

    if stratified:
        train_parts, test_parts = [], []
        for c in range(dataset.n_classes):
            idx_c = np.flatnonzero(dataset.labels == c)
            if idx_c.size < 2:
                raise ValueError(
                    f"stratified split needs >= 2 members per class, class {c} has {idx_c.size}"
                )
            perm = rng.permutation(idx_c)
            t = _round_half_up(train_fraction * idx_c.size)
            t = min(max(t, 1), idx_c.size - 1)
            train_parts.append(perm[:t])
            test_parts.append(perm[t:])
        train = np.sort(np.concatenate(train_parts))
        test = np.sort(np.concatenate(test_parts))
    else:
        n_train = _round_half_up(train_fraction * n)
        if n_train == 0 or n_train == n:
            raise ValueError(f"train_fraction {train_fraction} yields an empty side for n={n}")
        perm = rng.permutation(n)
        train = np.sort(perm[:n_train])
        test = np.sort(perm[n_train:])

    return SplitPlan(
        seed=seed,
        train_indices=train,
        test_indices=test,
        kind="holdout",
        params={"fraction": train_fraction, "stratified": stratified},
    )


def kfold_plan(n: int, k: int, seed: int) -> list[SplitPlan]:
    """k plans whose test folds partition [0, n); fold sizes differ by <= 1."""
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    base, extra = divmod(n, k)
    plans = []
    start = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        fold = perm[start : start + size]
        start += size
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        plans.append(
            SplitPlan(
                seed=seed,
                train_indices=np.sort(np.flatnonzero(mask)),
                test_indices=np.sort(fold),
                kind="kfold",
                params={"k": k, "fold_id": f},
            )
        )
    return plans


# ---------------------------------------------------------------------------
# feature preprocessing


@dataclass
class FeatureScaler:
    """Per-column z-scoring fit on training rows only.

    Zero-variance columns are centered but not scaled (scale 1), so
    constant features pass through as exact zeros.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "FeatureScaler":
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        scale = np.where(std > 1e-12, std, 1.0)
        return cls(mean=mean, scale=scale)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
