"""Soft-margin kernel SVM over a precomputed Gram, trained with SMO.

Solves the standard dual

    min_a  1/2 a^T Q a - e^T a,   Q_ij = y_i y_j K_ij,
    s.t.   0 <= a_i <= C,  y^T a = 0,

by repeatedly optimizing the maximal-KKT-violating pair analytically.
Multiclass is one-vs-rest with argmax over per-class decision values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .kernels import CrossGram, GramMatrix
from .util import parallel_map

logger = logging.getLogger(__name__)

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)
_TAU = 1e-12  # curvature floor for the pair subproblem


def _gram_values(gram) -> np.ndarray:
    if isinstance(gram, (GramMatrix, CrossGram)):
        return gram.values
    return np.asarray(gram, dtype=np.float64)


@dataclass
class SvmModel:
    """Dual solution of one binary problem.

    alpha is dense length-n in [0, C]; support_indices are the positions
    with alpha > 0. signed_labels are the +-1 training labels the duals
    refer to. converged is False when the iteration cap was hit first.
    """

    alpha: np.ndarray
    bias: float
    signed_labels: np.ndarray
    support_indices: np.ndarray
    C: float
    converged: bool = True
    iterations: int = 0
    objective_trace: list = field(default_factory=list)

    def to_dict(self, instance_ids=None) -> dict:
        sup = self.support_indices
        out = {
            "alpha": [[int(i), float(self.alpha[i])] for i in sup],
            "bias": float(self.bias),
            "C": float(self.C),
            "signed_labels": [int(v) for v in self.signed_labels],
            "converged": bool(self.converged),
        }
        if instance_ids is not None:
            out["instance_ids"] = list(instance_ids)
        return out


def smo_train(
    gram,
    y,
    C: float,
    tol: float = 1e-3,
    max_iter: int | None = None,
    jitter: float = 0.0,
    track_objective: bool = False,
) -> SvmModel:
    """Maximize the dual over a precomputed Gram.

    Converged once the maximal KKT violation drops to tol. Hitting
    max_iter returns a model flagged non-converged instead of raising.
    jitter > 0 adds jitter * mean(diag) to the diagonal, a rescue for
    combined kernels that are numerically semi-definite.
    """
    K = _gram_values(gram)
    y = np.asarray(y, dtype=np.float64)
    n = K.shape[0]
    if y.shape != (n,):
        raise ValueError("labels do not match Gram dimension")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("both classes required to train an SVM")
    if C <= 0:
        raise ValueError("C must be positive")
    if max_iter is None:
        max_iter = max(20000, 200 * n)
    if jitter > 0:
        K = K + (jitter * float(np.mean(np.diag(K)))) * np.eye(n)

    diag = np.ascontiguousarray(np.diag(K))
    yK = y[:, None] * K  # yK[:, i] = y * K[:, i]
    alpha = np.zeros(n, dtype=np.float64)
    G = -np.ones(n, dtype=np.float64)  # gradient of the minimization dual
    pos = y > 0
    trace: list[float] = []

    converged = False
    it = 0
    while it < max_iter:
        m = -y * G
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.where(up, m, -np.inf).argmax())
        j = int(np.where(low, m, np.inf).argmin())
        if m[i] - m[j] <= tol:
            converged = True
            break

        quad = diag[i] + diag[j] - 2.0 * K[i, j]
        delta = (m[i] - m[j]) / max(quad, _TAU)
        # box caps along the feasible direction (a_i += y_i d, a_j -= y_j d)
        cap_i = (C - alpha[i]) if y[i] > 0 else alpha[i]
        cap_j = alpha[j] if y[j] > 0 else (C - alpha[j])
        delta = min(delta, cap_i, cap_j)

        old_i, old_j = alpha[i], alpha[j]
        s = y[i] * old_i + y[j] * old_j  # conserved by the pair update
        if cap_j <= cap_i and delta >= cap_j:
            # j hits its bound: land there exactly (a rounded near-bound value
            # would keep j selectable while leaving no room to move) and
            # recover i from the conserved sum
            aj = 0.0 if y[j] > 0 else C
            ai = y[i] * (s - y[j] * aj)
        elif delta >= cap_i:
            ai = C if y[i] > 0 else 0.0
            aj = y[j] * (s - y[i] * ai)
        else:
            ai = old_i + y[i] * delta
            aj = old_j - y[j] * delta
        ai = min(max(ai, 0.0), C)
        aj = min(max(aj, 0.0), C)
        alpha[i], alpha[j] = ai, aj
        dai, daj = ai - old_i, aj - old_j
        if dai == 0.0 and daj == 0.0:
            # the best pair cannot move at this precision; stop without
            # claiming the tolerance was reached
            logger.warning(
                "SMO stalled at KKT gap %g (tol %g) after %d pair steps",
                m[i] - m[j], tol, it,
            )
            break
        G += yK[:, i] * (y[i] * dai) + yK[:, j] * (y[j] * daj)
        it += 1
        if track_objective:
            # maximization value e^T a - 1/2 a^T Q a, via a^T Q a = a^T (G + e);
            # must be non-decreasing across pair updates
            trace.append(float(-0.5 * (alpha @ G - alpha.sum())))
    else:
        logger.warning("SMO hit the iteration cap (%d) before tol %g", max_iter, tol)

    # bias: average of y_i - f(x_i) over free support vectors, else the
    # midpoint of the feasible interval from the bound KKT conditions
    eps = 1e-8 * C
    v = -y * G
    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        bias = float(v[free].mean())
    else:
        lower = (pos & (alpha <= eps)) | (~pos & (alpha >= C - eps))
        upper = (pos & (alpha >= C - eps)) | (~pos & (alpha <= eps))
        lo = v[lower].max() if lower.any() else -np.inf
        hi = v[upper].min() if upper.any() else np.inf
        if np.isinf(lo):
            bias = float(hi)
        elif np.isinf(hi):
            bias = float(lo)
        else:
            bias = float((lo + hi) / 2.0)

    return SvmModel(
        alpha=alpha,
        bias=bias,
        signed_labels=y.astype(np.int64),
        support_indices=np.flatnonzero(alpha > 0),
        C=C,
        converged=converged,
        iterations=it,
        objective_trace=trace,
    )


def dual_objective(gram, model: SvmModel) -> float:
    """e^T a - 1/2 a^T Q a for a trained model (maximization convention)."""
    K = _gram_values(gram)
    ay = model.alpha * model.signed_labels
    return float(model.alpha.sum() - 0.5 * ay @ K @ ay)


def decision_values(model: SvmModel, cross) -> np.ndarray:
    """f(x) = sum_i alpha_i y_i K(x, x_i) + bias for each test row."""
    V = _gram_values(cross)
    if V.shape[1] != model.alpha.shape[0]:
        raise ValueError(
            f"cross block has {V.shape[1]} columns, model expects {model.alpha.shape[0]}"
        )
    return V @ (model.alpha * model.signed_labels) + model.bias


@dataclass
class OvrModel:
    """One binary SVM per class; prediction is argmax of decision values."""

    models: list[SvmModel]
    n_classes: int

    def decision_matrix(self, cross) -> np.ndarray:
        return np.column_stack([decision_values(mdl, cross) for mdl in self.models])

    def predict(self, cross) -> np.ndarray:
        # np.argmax takes the first maximum: ties go to the lower class id
        return self.decision_matrix(cross).argmax(axis=1)

    def to_dict(self, instance_ids=None) -> dict:
        return {
            "n_classes": self.n_classes,
            "models": [
                {"class_id": k, **mdl.to_dict(instance_ids)}
                for k, mdl in enumerate(self.models)
            ],
        }


def ovr_train(
    gram, labels, C: float, n_classes: int | None = None, tol: float = 1e-3,
    max_iter: int | None = None, jitter: float = 0.0,
) -> OvrModel:
    """Train class-k-vs-rest models over a shared Gram."""
    labels = np.asarray(labels, dtype=np.int64)
    c = int(labels.max()) + 1 if n_classes is None else n_classes
    if c < 2:
        raise ValueError("need at least two classes")
    models = []
    for k in range(c):
        yk = np.where(labels == k, 1.0, -1.0)
        if not np.any(labels == k):
            raise ValueError(f"class {k} absent from training data")
        models.append(smo_train(gram, yk, C, tol=tol, max_iter=max_iter, jitter=jitter))
    return OvrModel(models=models, n_classes=c)


def select_C(
    gram,
    labels,
    folds,
    grid=DEFAULT_C_GRID,
    n_classes: int | None = None,
    tol: float = 1e-3,
    max_iter: int | None = None,
):
    """Mean k-fold CV accuracy per C; returns (best C, per-C records).

    Folds whose training side loses a class (or otherwise fail) are skipped
    with a warning; a C with no surviving folds scores None. Ties break
    toward the smaller C.
    """
    grid = [float(c) for c in grid]
    if not grid:
        raise ValueError("empty C grid")
    K = _gram_values(gram)
    labels = np.asarray(labels, dtype=np.int64)
    c = int(labels.max()) + 1 if n_classes is None else n_classes

    def run_one(C: float):
        accs = []
        for plan in folds:
            tr, te = plan.train_indices, plan.test_indices
            try:
                ovr = ovr_train(
                    K[np.ix_(tr, tr)], labels[tr], C, n_classes=c, tol=tol, max_iter=max_iter
                )
            except ValueError as exc:
                logger.warning("C=%g fold %s skipped: %s", C, plan.params, exc)
                continue
            pred = ovr.predict(K[np.ix_(te, tr)])
            accs.append(float(np.mean(pred == labels[te])))
        return float(np.mean(accs)) if accs else None

    cv = parallel_map(run_one, grid)
    records = [{"C": Cv, "cv_accuracy": acc} for Cv, acc in zip(grid, cv)]
    scored = [(Cv, acc) for Cv, acc in zip(grid, cv) if acc is not None]
    if not scored:
        raise RuntimeError("every C failed cross-validation")
    best_acc = max(acc for _, acc in scored)
    best_C = min(Cv for Cv, acc in scored if acc == best_acc)
    return best_C, records
