"""k-means over action embeddings (k-means++ seeding, Lloyd iterations)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import _kernels
from .types import ActionSet


@dataclass(frozen=True, eq=False)
class Clustering:
    assignments: np.ndarray  # (|A|,) cluster id per action
    centers: np.ndarray  # (k, d_e)
    inertia_history: List[float] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1] if self.inertia_history else float("nan")

    def one_hot(self) -> np.ndarray:
        """``(|A|, k)`` membership matrix."""
        out = np.zeros((len(self.assignments), self.n_clusters))
        out[np.arange(len(self.assignments)), self.assignments] = 1.0
        return out

    def to_dict(self) -> dict:
        return {"assignments": self.assignments.tolist(), "centers": self.centers.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Clustering":
        return cls(np.array(d["assignments"], dtype=np.int64), np.array(d["centers"], dtype=np.float64))


def _plus_plus(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _repair_empty(X, labels, centers, d2):
    """Give every empty cluster the point farthest from its own center."""
    k = centers.shape[0]
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        donors = counts[labels] > 1
        if not donors.any():
            break
        cand = np.where(donors, d2, -1.0)
        i = int(np.argmax(cand))
        counts[labels[i]] -= 1
        labels[i] = c
        counts[c] = 1
        centers[c] = X[i]
        d2[i] = 0.0
    return labels, centers


def cluster_actions(actions, k: int = 10, rng=None, max_iter: int = 100, tol: float = 1e-8) -> Clustering:
    """Partition actions into ``k`` clusters; deterministic for a given seed."""
    X = actions.embeddings if isinstance(actions, ActionSet) else np.asarray(actions, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(rng)
    centers = _plus_plus(X, k, rng)
    history: List[float] = []
    labels, d2 = _kernels.assign_nearest(X, centers)
    history.append(float(d2.sum()))
    for _ in range(max_iter):
        new = centers.copy()
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c]:
                new[c] = X[labels == c].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            far = np.argsort(-d2, kind="stable")
            for c, i in zip(empty, far):
                new[c] = X[i]
        shift = float(np.max(np.abs(new - centers)))
        centers = new
        labels, d2 = _kernels.assign_nearest(X, centers)
        history.append(float(d2.sum()))
        if shift < tol:
            break
    labels = labels.astype(np.int64).copy()
    labels, centers = _repair_empty(X, labels, centers, d2.copy())
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        if counts[c]:
            centers[c] = X[labels == c].mean(axis=0)
    final = float(((X - centers[labels]) ** 2).sum())
    if final < history[-1]:
        history.append(final)
    return Clustering(labels, centers, history)
