"""The pairwise K-space: one example per instance pair (i <= j).

A pair (i, j) of training instances becomes a p-dimensional example whose
coordinates are the p base-kernel values for that pair, labeled +1 when the
instances share a class and -1 otherwise. z vectors are never materialized
up front; they are gathered from the bank's Gram entries on demand, which
bounds memory by the Grams themselves regardless of pair count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import CENTERED, KernelBank


@dataclass
class KBatch:
    """A gathered minibatch: z is (batch, p), t is a +-1 vector."""

    z: np.ndarray
    t: np.ndarray


class KExampleSet:
    """Labeled instance pairs backed by a (p, n, n) stack of Gram values.

    pairs[k] = (i, j) with i <= j; z_k[l] = K_l[i, j]; t_k = +1 iff the
    two instances share a class (diagonal pairs are always +1).
    """

    def __init__(self, pairs: np.ndarray, t: np.ndarray, stack: np.ndarray):
        self.pairs = np.asarray(pairs, dtype=np.int64)
        self.t = np.asarray(t, dtype=np.int8)
        self.stack = stack
        if self.pairs.ndim != 2 or self.pairs.shape[1] != 2:
            raise ValueError("pairs must be (m, 2)")
        if self.t.shape != (self.pairs.shape[0],):
            raise ValueError("labels length does not match pair count")

    def __len__(self) -> int:
        return self.pairs.shape[0]

    @property
    def p(self) -> int:
        return self.stack.shape[0]

    @property
    def n_pos(self) -> int:
        return int(np.sum(self.t > 0))

    @property
    def n_neg(self) -> int:
        return int(np.sum(self.t < 0))

    def z_rows(self, positions) -> np.ndarray:
        """Gather z vectors for the given pair positions: (len, p)."""
        pos = np.asarray(positions, dtype=np.int64)
        ii = self.pairs[pos, 0]
        jj = self.pairs[pos, 1]
        return self.stack[:, ii, jj].T

    def scores(self, mu: np.ndarray) -> np.ndarray:
        """mu . z for every pair in the set, without materializing z rows."""
        ii = self.pairs[:, 0]
        jj = self.pairs[:, 1]
        mu = np.asarray(mu, dtype=np.float64)
        out = np.zeros(len(self), dtype=np.float64)
        for l in np.flatnonzero(mu):
            out += mu[l] * self.stack[l, ii, jj]
        return out

    def subset(self, positions) -> "KExampleSet":
        pos = np.asarray(positions, dtype=np.int64)
        return KExampleSet(self.pairs[pos], self.t[pos], self.stack)


def make_kexamples(train_labels: np.ndarray, bank: KernelBank) -> KExampleSet:
    """Enumerate all pairs i <= j over the training instances.

    The bank must be centered/standardized and share the ordering of
    train_labels.
    """
    labels = np.asarray(train_labels, dtype=np.int64)
    n = labels.shape[0]
    if bank.n != n:
        raise ValueError(f"bank Grams are {bank.n} x {bank.n}, labels have length {n}")
    if any(g.state != CENTERED for g in bank.train_grams):
        raise ValueError("bank Grams must be centered_standardized")
    ii, jj = np.triu_indices(n)
    pairs = np.stack([ii, jj], axis=1)
    t = np.where(labels[ii] == labels[jj], 1, -1).astype(np.int8)
    return KExampleSet(pairs=pairs, t=t, stack=bank.stacked())


def balance(kset: KExampleSet, seed: int) -> KExampleSet:
    """Subsample the majority K-class down to the minority count.

    Without replacement, uniform, deterministic for a fixed seed; the
    minority side is kept whole and the original pair order is preserved.
    """
    n_pos, n_neg = kset.n_pos, kset.n_neg
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"cannot balance: n_pos={n_pos}, n_neg={n_neg}")
    if n_pos == n_neg:
        return kset
    rng = np.random.default_rng(seed)
    if n_pos > n_neg:
        maj = np.flatnonzero(kset.t > 0)
        target = n_neg
    else:
        maj = np.flatnonzero(kset.t < 0)
        target = n_pos
    keep_maj = rng.choice(maj, size=target, replace=False)
    mask = np.ones(len(kset), dtype=bool)
    mask[maj] = False
    mask[keep_maj] = True
    return kset.subset(np.flatnonzero(mask))


def sample_batch(kset: KExampleSet, batch_size: int, rng) -> KBatch:
    """Draw batch_size pairs uniformly with replacement and gather z rows."""
    if len(kset) == 0:
        raise ValueError("cannot sample from an empty K-example set")
    idx = rng.integers(0, len(kset), size=batch_size)
    return KBatch(z=kset.z_rows(idx), t=kset.t[idx].astype(np.float64))


def dump_tsv(kset: KExampleSet, path) -> None:
    """Debug dump of pairs and labels (not the z vectors)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i\tj\tt\n")
        for (i, j), t in zip(kset.pairs, kset.t):
            fh.write(f"{i}\t{j}\t{t:+d}\n")
