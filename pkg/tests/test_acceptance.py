"""Acceptance gate: one test per headline requirement.

Benchmark reproductions need data/sonar.csv and data/pima.csv; run
scripts/fetch_uci.py once to download them, otherwise those tests skip.
Everything else runs self-contained against independent oracles.
"""

import json
import time

import numpy as np
import pytest

from kweave import mkl
from kweave.baselines import alignment_problem_from_bank, maximize_alignment, target_align
from kweave.experiment import ExperimentConfig, run_experiment, run_lambda_sweep, strip_timing_fields
from kweave.kernels import CENTERED, GramMatrix, KernelBank, KernelSpec, center_standardize_fit, compute_gram
from kweave.kspace import make_kexamples
from kweave.mkl import BoundInputs, MklConfig, concentration_bound, pegasos_train
from kweave.svm import decision_values, smo_train

from conftest import DATA_DIR, alignment_grid_max, centered_bank_for, make_blobs, synth_kset
from test_baselines import random_problem
from test_experiment import write_toy_csv
from test_mkl import objective as kspace_objective
from test_mkl import qp_oracle
from test_svm import kkt_gap, oracle_bias, pgd_dual, random_dual_problem


def run_uci(dataset, path, method, recipe="uci_full"):
    config = ExperimentConfig(
        dataset_path=str(path),
        kernel_recipe=recipe,
        method=method,
        n_splits=10,
        train_fraction=0.8,
        base_seed=0,
    )
    report = run_experiment(config, dataset=dataset)
    assert report.aggregate["n_succeeded"] == 10
    return 100.0 * report.aggregate["accuracy"]["mean"]


def test_sonar_p13_reproduction(sonar_dataset):
    # three methods on the 13-kernel bank, 10 random 80/20 splits
    t0 = time.time()
    path = DATA_DIR / "sonar.csv"
    acc_tsmkl = run_uci(sonar_dataset, path, "tsmkl")
    acc_avg = run_uci(sonar_dataset, path, "average")
    acc_align = run_uci(sonar_dataset, path, "target_align")
    elapsed = time.time() - t0
    print(
        f"\nsonar p=13: tsmkl {acc_tsmkl:.2f} (target 86.19+-4.0), "
        f"average {acc_avg:.2f} (target 86.42+-4.0), "
        f"target_align {acc_align:.2f} (target 85.47+-4.5), {elapsed:.0f}s"
    )
    assert abs(acc_tsmkl - 86.19) <= 4.0
    assert abs(acc_avg - 86.42) <= 4.0
    assert abs(acc_align - 85.47) <= 4.5
    assert elapsed < 300.0


def test_pima_p13_reproduction(pima_dataset):
    acc = run_uci(pima_dataset, DATA_DIR / "pima.csv", "tsmkl")
    print(f"\npima p=13: tsmkl {acc:.2f} (target 76.42+-4.0)")
    assert abs(acc - 76.42) <= 4.0


def test_sonar_p793_per_feature_reproduction(sonar_dataset):
    t0 = time.time()
    acc = run_uci(
        sonar_dataset, DATA_DIR / "sonar.csv", "tsmkl", recipe="uci_full_plus_per_feature"
    )
    elapsed = time.time() - t0
    print(f"\nsonar p=793: tsmkl {acc:.2f} (target 86.43+-4.5), {elapsed:.0f}s")
    assert abs(acc - 86.43) <= 4.5
    assert elapsed < 1800.0


def test_external_kernel_bank_benchmarks_unavailable():
    pytest.skip(
        "Caltech/Psort/Plant use precomputed third-party kernel banks that are "
        "not obtainable here; coverage is substituted by the oracle and "
        "invariant tests in this module"
    )


def test_kspace_solver_oracle():
    # 20 randomized instances against a shrinking-window grid-refined optimum
    t0 = time.time()
    rng = np.random.default_rng(77)
    for trial in range(20):
        p = int(rng.integers(1, 4))
        m = int(rng.integers(6, 51))
        Z = rng.normal(0.0, 1.0, (m, p))
        t = np.where(rng.random(m) < 0.5, 1, -1)
        if abs(t.sum()) == m:
            t[0] = -t[0]
        lam = float(rng.choice([0.5, 0.1, 0.02]))
        model = pegasos_train(
            synth_kset(Z, t), MklConfig(lam=lam, num_steps=20_000, seed=trial)
        )
        _, f_star = qp_oracle(Z, t.astype(float), lam)
        f_hat = kspace_objective(Z, t.astype(float), lam, model.mu)
        assert f_hat <= f_star * 1.01 + 1e-9, f"trial {trial}: {f_hat} vs {f_star}"
    assert time.time() - t0 < 60.0


def test_alignment_oracle():
    t0 = time.time()
    # bank-level: learned weights vs the dense-grid maximum of the same problem
    for seed in (0, 1):
        data = make_blobs(n_per_class=10, d=2, gap=3.0, seed=seed)
        grams = []
        rng = np.random.default_rng(seed)
        for _ in range(3):
            A = rng.normal(0.0, 1.0, (data.instances.shape[0], 4))
            A[:, 0] += np.where(data.labels == 0, -1.0, 1.0)
            grams.append(GramMatrix(A @ A.T, state=CENTERED))
        bank = KernelBank([KernelSpec("linear")] * 3, grams)
        mu = target_align(bank, data.labels, seed=seed)
        prob = alignment_problem_from_bank(bank, data.labels)
        grid_val, _ = alignment_grid_max(prob.M, prob.a, n_grid=600)
        assert abs(prob.objective(mu) - grid_val) <= 1e-3
    # problem-level: random well-conditioned instances, p in {2, 3}
    for seed in range(10):
        prob = random_problem(2 + seed % 2, seed)
        grid_val, _ = alignment_grid_max(prob.M, prob.a, n_grid=400)
        mu, obj = maximize_alignment(prob, seed=seed)
        assert mu is not None
        assert abs(obj - grid_val) <= 1e-3
    assert time.time() - t0 < 60.0


def test_smo_oracle():
    for seed in range(20):
        K, y, C, cross = random_dual_problem(seed)
        a_star = pgd_dual(K, y, C)
        b_star = oracle_bias(K, y, a_star, C)
        model = smo_train(K, y, C, track_objective=True)
        assert model.converged
        # decision agreement with the brute-force dual
        f_star = cross @ (a_star * y) + b_star
        np.testing.assert_allclose(decision_values(model, cross), f_star, atol=1e-2)
        # dual feasibility on every problem
        n = len(y)
        assert np.all(model.alpha >= 0.0) and np.all(model.alpha <= C)
        assert abs(model.alpha @ y) <= 1e-6 * C * n
        # objective monotonicity on every problem
        trace = np.array(model.objective_trace)
        assert np.all(np.diff(trace) >= -1e-9)
        assert kkt_gap(K, y, model.alpha, C) <= 1e-3 + 1e-12


def random_kernel_spec(rng):
    kind = rng.integers(3)
    if kind == 0:
        return KernelSpec("gaussian", gamma=float(2.0 ** rng.uniform(-10, 2)))
    if kind == 1:
        return KernelSpec("polynomial", degree=int(rng.integers(2, 5)), offset=1.0)
    return KernelSpec("linear")


def test_preprocessing_invariants():
    rng = np.random.default_rng(2718)
    for _ in range(100):
        n = int(rng.integers(4, 31))
        d = int(rng.integers(1, 7))
        X = rng.normal(0.0, rng.uniform(0.5, 3.0), (n, d))
        spec = random_kernel_spec(rng)
        raw = compute_gram(spec, X)
        cen = center_standardize_fit(raw)
        V = cen.values
        scale = max(1.0, float(np.abs(V).max()))
        # symmetry
        assert float(np.abs(V - V.T).max()) <= 1e-12 * scale
        # PSD within tolerance
        eig = np.linalg.eigvalsh(V)
        assert eig.min() >= -1e-8 * max(eig.max(), 1.0)
        # feature-space centering: zero row sums
        assert float(np.abs(V.sum(axis=1)).max()) <= 1e-9 * n
        # unit average self-similarity
        assert abs(float(np.trace(V)) / n - 1.0) <= 1e-12
        # positive scaling of the raw kernel must not change the result
        for c in (1e-6, 3.0, 1e6):
            scaled = center_standardize_fit(GramMatrix(c * raw.values))
            np.testing.assert_allclose(scaled.values, V, atol=1e-12 * scale)


def test_kspace_counting_law():
    for n in range(1, 201):
        bank = KernelBank(
            [KernelSpec("linear")], [GramMatrix(np.eye(n), state=CENTERED)]
        )
        labels = np.arange(n) % 2
        kset = make_kexamples(labels, bank)
        assert len(kset) == n * (n + 1) // 2


def test_hinge_accuracy_anticorrelation(sonar_dataset):
    # the lambda sweep must show K-space hinge loss moving against test accuracy
    scipy_stats = pytest.importorskip("scipy.stats")
    config = ExperimentConfig(
        dataset_path=str(DATA_DIR / "sonar.csv"),
        method="tsmkl",
        n_splits=1,
        base_seed=0,
    )
    sweep = run_lambda_sweep(config, dataset=sonar_dataset)
    pairs = [
        (r["k_hinge"], r["data_accuracy"])
        for r in sweep["records"]
        if r["data_accuracy"] is not None
    ]
    assert len(pairs) >= 5
    hinges, accs = zip(*pairs)
    rho = scipy_stats.spearmanr(hinges, accs).statistic
    print(f"\nsonar sweep: {len(pairs)} points, spearman(hinge, accuracy) = {rho:.3f}")
    assert rho < 0.0


def test_concentration_bound_diagnostic():
    slack = concentration_bound(
        BoundInputs(gamma=1.0, R=1.0, delta=0.05, n=100, empirical_hinge=0.0)
    )
    assert abs(slack - 0.48960) <= 1e-4
    # quadrupling n must halve the slack exactly
    for n in (25, 100, 400):
        s1 = concentration_bound(
            BoundInputs(gamma=2.0, R=1.5, delta=0.1, n=n, empirical_hinge=0.0)
        )
        s2 = concentration_bound(
            BoundInputs(gamma=2.0, R=1.5, delta=0.1, n=4 * n, empirical_hinge=0.0)
        )
        assert s1 == 2.0 * s2


def test_report_determinism(tmp_path):
    csv = write_toy_csv(tmp_path / "toy.csv")
    config = ExperimentConfig(
        dataset_path=csv,
        method="tsmkl",
        n_splits=2,
        mkl_num_steps=200,
        base_seed=11,
    )
    a = json.dumps(strip_timing_fields(run_experiment(config).to_dict()), sort_keys=True)
    b = json.dumps(strip_timing_fields(run_experiment(config).to_dict()), sort_keys=True)
    assert a.encode() == b.encode()
