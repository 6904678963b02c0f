"""Choosing representative states: k-means, uniform random subsets and regular grids."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import DomainError
from .kernels import KernelSpec


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str = "kmeans"
    m: int = 100
    seed: int = 0
    kmeans_max_iters: int = 100

    def __post_init__(self):
        if self.kind not in ("kmeans", "random", "grid"):
            raise DomainError(f"unknown selection strategy {self.kind!r}")
        if self.m < 1:
            raise DomainError("m must be >= 1")


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    objective: list[float]
    iterations: int


def _assign(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d, lab = cKDTree(C).query(X, k=1)
    return lab, d * d


def _plusplus(X: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    C = [X[rng.integers(len(X))]]
    d2 = np.sum((X - C[0]) ** 2, axis=1)
    for _ in range(1, m):
        total = d2.sum()
        j = rng.integers(len(X)) if total == 0 else rng.choice(len(X), p=d2 / total)
        C.append(X[j])
        d2 = np.minimum(d2, np.sum((X - X[j]) ** 2, axis=1))
    return np.array(C)


def kmeans(points, m: int, seed: int = 0, max_iters: int = 100, init: str = "k-means++",
           kernel: KernelSpec | None = None) -> KMeansResult:
    """Lloyd's algorithm under the kernel's (possibly weighted) norm.

    Empty clusters are reseeded with the point farthest from its current center.
    """
    X0 = np.atleast_2d(np.asarray(points, dtype=float))
    if X0.size == 0:
        raise DomainError("no points to cluster")
    distinct = np.unique(X0, axis=0)
    if m < 1 or m > len(distinct):
        raise DomainError(f"m={m} must lie in [1, {len(distinct)}] (number of distinct points)")
    scale = np.ones(X0.shape[1]) if kernel is None or kernel.weights is None else np.sqrt(np.asarray(kernel.weights))
    X = X0 * scale
    rng = np.random.default_rng(seed)
    if m == len(distinct):
        C = distinct * scale
    elif init == "k-means++":
        C = _plusplus(X, m, rng)
    elif init == "random":
        C = (distinct * scale)[rng.choice(len(distinct), m, replace=False)]
    else:
        raise DomainError(f"unknown initialisation {init!r}")
    labels, d2 = _assign(X, C)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        C = C.copy()
        counts = np.bincount(labels, minlength=m)
        for j in range(m):
            if counts[j]:
                C[j] = X[labels == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2))
            C[j] = X[far]
            d2[far] = 0.0
        new_labels, d2 = _assign(X, C)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels) and not np.any(counts == 0):
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(C / scale, labels, history, it)


def kmeans_centers(points, m: int, seed: int = 0, max_iters: int = 100, init: str = "k-means++",
                   kernel: KernelSpec | None = None) -> np.ndarray:
    return kmeans(points, m, seed, max_iters, init, kernel).centers


def random_subset(points, m: int, seed: int = 0) -> np.ndarray:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if not 1 <= m <= len(X):
        raise DomainError(f"m={m} must lie in [1, {len(X)}]")
    return X[np.random.default_rng(seed).choice(len(X), m, replace=False)]


def grid_centers(bounds, counts) -> np.ndarray:
    """Cartesian product of evenly spaced coordinates, endpoints included (first axis varies slowest)."""
    bounds = [tuple(map(float, b)) for b in bounds]
    counts = [int(c) for c in counts]
    if len(bounds) != len(counts):
        raise DomainError("one count per dimension required")
    axes = []
    for (lo, hi), c in zip(bounds, counts):
        if c < 1:
            raise DomainError("counts must be >= 1")
        if lo >= hi:
            raise DomainError("low must be < high")
        axes.append(np.linspace(lo, hi, c) if c > 1 else np.array([(lo + hi) / 2]))
    return np.array(list(itertools.product(*axes)))


def select(strategy: SelectionStrategy, points, bounds=None, kernel: KernelSpec | None = None) -> np.ndarray:
    if strategy.kind == "kmeans":
        return kmeans_centers(points, strategy.m, strategy.seed, strategy.kmeans_max_iters, kernel=kernel)
    if strategy.kind == "random":
        X = np.unique(np.atleast_2d(points), axis=0)
        return random_subset(X, strategy.m, strategy.seed)
    if bounds is None:
        raise DomainError("grid selection needs state bounds")
    per = max(1, int(round(strategy.m ** (1.0 / len(bounds)))))
    return grid_centers(bounds, [per] * len(bounds))
