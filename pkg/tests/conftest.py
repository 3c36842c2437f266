"""Shared fixtures: synthetic datasets, centered banks, and benchmark gating."""

from pathlib import Path

import numpy as np
import pytest

from kweave.data import Dataset, load_dataset
from kweave.kernels import build_kernel_bank, center_bank
from kweave.kspace import KExampleSet

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def make_blobs(n_per_class=20, d=5, gap=2.0, seed=0, n_classes=2) -> Dataset:
    """Gaussian class blobs along the first axis; linearly separable for gap >~ 3."""
    rng = np.random.default_rng(seed)
    parts, labels = [], []
    for c in range(n_classes):
        X = rng.normal(0.0, 1.0, (n_per_class, d))
        X[:, 0] += gap * c
        parts.append(X)
        labels.extend([c] * n_per_class)
    X = np.vstack(parts)
    return Dataset(
        instances=X,
        labels=np.array(labels),
        class_names=tuple(f"c{c}" for c in range(n_classes)),
        instance_ids=tuple(str(i) for i in range(X.shape[0])),
    )


def centered_bank_for(dataset: Dataset, recipe: str = "uci_full"):
    bank, _ = center_bank(build_kernel_bank(dataset.instances, recipe))
    return bank


def alignment_grid_max(M, a, n_grid=200):
    """Dense-grid maximum of mu.a / sqrt(mu' M mu) over the nonneg unit sphere.

    Brute-force oracle for p <= 3, independent of the ascent code: p = 2 walks
    one angle over the quarter circle, p = 3 walks two angles over the octant.
    Returns (best value, best direction).
    """
    M = np.asarray(M, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    p = a.shape[0]
    if p == 1:
        U = np.ones((1, 1))
    elif p == 2:
        theta = np.linspace(0.0, np.pi / 2, n_grid)
        U = np.stack([np.cos(theta), np.sin(theta)])
    elif p == 3:
        theta = np.linspace(0.0, np.pi / 2, n_grid)
        phi = np.linspace(0.0, np.pi / 2, n_grid)
        T, P = np.meshgrid(theta, phi, indexing="ij")
        U = np.stack(
            [
                (np.sin(P) * np.cos(T)).ravel(),
                (np.sin(P) * np.sin(T)).ravel(),
                np.cos(P).ravel(),
            ]
        )
    else:
        raise ValueError("grid oracle only handles p <= 3")
    num = a @ U
    quad = np.einsum("ij,ij->j", U, M @ U)
    vals = np.where(quad > 0.0, num / np.sqrt(np.maximum(quad, 1e-300)), -np.inf)
    k = int(vals.argmax())
    return float(vals[k]), U[:, k]


def synth_kset(Z, t) -> KExampleSet:
    """A K-example set with prescribed z vectors, for solver tests.

    Each row of Z becomes the Gram entry of its own off-diagonal pair, so
    z_rows reproduces Z exactly while staying a legitimate KExampleSet.
    """
    Z = np.asarray(Z, dtype=np.float64)
    t = np.asarray(t)
    m, p = Z.shape
    n = 2 * m
    stack = np.zeros((p, n, n))
    pairs = np.empty((m, 2), dtype=np.int64)
    for r in range(m):
        i, j = 2 * r, 2 * r + 1
        pairs[r] = (i, j)
        for l in range(p):
            stack[l, i, j] = stack[l, j, i] = Z[r, l]
    return KExampleSet(pairs=pairs, t=t, stack=stack)


@pytest.fixture
def toy_dataset() -> Dataset:
    return make_blobs(n_per_class=20, d=5, gap=2.0, seed=0)


@pytest.fixture
def toy_bank(toy_dataset):
    return centered_bank_for(toy_dataset)


def _benchmark(name: str) -> Dataset:
    path = DATA_DIR / f"{name}.csv"
    if not path.exists():
        pytest.skip(f"{path} not present; run scripts/fetch_uci.py to download it")
    return load_dataset(str(path), "csv")


@pytest.fixture(scope="session")
def sonar_dataset() -> Dataset:
    return _benchmark("sonar")


@pytest.fixture(scope="session")
def pima_dataset() -> Dataset:
    return _benchmark("pima")
