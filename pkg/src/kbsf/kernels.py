"""Mother kernels, normalized kernel rows and exact nearest-neighbour truncation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .core import DomainError, as_state

# name -> (log phi, A_phi, lambda_phi, B_phi); None constants mean the decay
# assumption A exp(-x) <= phi(x) <= lambda A exp(-x) (x >= B) does not hold.
_PHIS = {
    "exp": (lambda z: -z, 1.0, 1.0, 0.0),
    "gaussian": (lambda z: -z * z, None, None, None),
}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel ``k(s, s') = phi(||s - s'|| / tau)``.

    ``mu > 0`` keeps only the ``mu`` nearest points of every row (the rest are
    set to zero before normalization). ``weights`` turns the Euclidean norm into
    ``sqrt(sum_i w_i (s_i - s'_i)^2)``.
    """

    tau: float = 1.0
    phi: str = "exp"
    mu: int = 0
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("kernel width must be positive")
        if self.phi not in _PHIS:
            raise DomainError(f"unknown mother kernel {self.phi!r}")
        if self.mu < 0:
            raise DomainError("mu must be >= 0")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if any(x <= 0 for x in w):
                raise DomainError("norm weights must be positive")
            object.__setattr__(self, "weights", w)

    @property
    def A_phi(self):
        return _PHIS[self.phi][1]

    @property
    def lambda_phi(self):
        return _PHIS[self.phi][2]

    @property
    def B_phi(self):
        return _PHIS[self.phi][3]

    def log_phi(self, z):
        return _PHIS[self.phi][0](np.asarray(z, dtype=float))

    def phi_value(self, z):
        return np.exp(self.log_phi(z))

    def scale(self, X) -> np.ndarray:
        """Map points so that the configured norm becomes plain Euclidean."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.weights is None:
            return X
        if len(self.weights) != X.shape[1]:
            raise DomainError("norm weights do not match the state dimension")
        return X * np.sqrt(np.asarray(self.weights))

    def with_tau(self, tau: float) -> KernelSpec:
        return KernelSpec(tau=tau, phi=self.phi, mu=self.mu, weights=self.weights)


def distance(spec: KernelSpec, s, s2) -> float:
    s, s2 = as_state(s), as_state(s2)
    if s.shape != s2.shape:
        raise DomainError("dimension mismatch")
    return float(np.linalg.norm(spec.scale(s - s2)))


def distances(spec: KernelSpec, X, Y) -> np.ndarray:
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)
    if X.shape[1] != Y.shape[1]:
        raise DomainError("dimension mismatch")
    return cdist(spec.scale(X), spec.scale(Y))


def kernel_value(spec: KernelSpec, s, s2) -> float:
    return float(spec.phi_value(distance(spec, s, s2) / spec.tau))


class NeighborIndex:
    """Exact k-nearest-neighbour search under a kernel's norm (KD-tree backed)."""

    def __init__(self, points, spec: KernelSpec | None = None):
        self.spec = spec or KernelSpec()
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.size = 0 if self.points.size == 0 else len(self.points)
        self._tree = cKDTree(self.spec.scale(self.points)) if self.size else None

    def query(self, Q, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the ``min(k, size)`` nearest points, sorted by distance."""
        if self.size == 0:
            raise DomainError("empty neighbour index")
        if k < 1:
            raise DomainError("k must be >= 1")
        k = min(k, self.size)
        d, i = self._tree.query(self.spec.scale(Q), k=k)
        d = np.asarray(d).reshape(-1, k)
        i = np.asarray(i).reshape(-1, k)
        return i, d


def nearest(index: NeighborIndex, q, k: int) -> list[tuple[int, float]]:
    idx, dist = index.query(np.atleast_2d(as_state(q)), k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


def log_kernel_matrix(spec: KernelSpec, centers, points, index: NeighborIndex | None = None) -> np.ndarray:
    """``log k(center_i, point_j)``; entries cut by ``mu`` truncation are ``-inf``."""
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.size == 0 or len(X) == 0:
        raise DomainError("no points to weight")
    if C.shape[1] != X.shape[1]:
        raise DomainError("dimension mismatch")
    if spec.mu == 0 or spec.mu >= len(X):
        return spec.log_phi(distances(spec, C, X) / spec.tau)
    index = index if index is not None else NeighborIndex(X, spec)
    idx, dist = index.query(C, spec.mu)
    L = np.full((len(C), len(X)), -np.inf)
    np.put_along_axis(L, idx, spec.log_phi(dist / spec.tau), axis=1)
    return L


def normalize_log_rows(L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize ``exp(L)`` stably; returns the stochastic rows and each row's log mass."""
    top = L.max(axis=1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise DomainError("isolated query point: every kernel value is zero")
    E = np.exp(L - top)
    s = E.sum(axis=1, keepdims=True)
    return E / s, (top + np.log(s)).ravel()


def normalized_matrix(spec: KernelSpec, centers, points, index: NeighborIndex | None = None) -> np.ndarray:
    """Row ``i`` is the normalized kernel of ``centers[i]`` over ``points``."""
    return normalize_log_rows(log_kernel_matrix(spec, centers, points, index))[0]


def normalized_row(spec: KernelSpec, center, points, index: NeighborIndex | None = None) -> np.ndarray:
    c = as_state(center)
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if len(X) == 0:
        raise DomainError("points must be nonempty")
    return normalized_matrix(spec, c[None, :], X, index)[0]


def monotone_on_grid(spec: KernelSpec, upper: float = 50.0, num: int = 2001) -> bool:
    """Numerical spot check that phi is non-increasing on [0, upper]."""
    z = np.linspace(0, upper, num)
    return bool(np.all(np.diff(spec.phi_value(z)) <= 0))


def log_mass(L: np.ndarray) -> np.ndarray:
    top = L.max(axis=1)
    out = np.full(len(L), -np.inf)
    ok = np.isfinite(top)
    out[ok] = top[ok] + np.log(np.exp(L[ok] - top[ok, None]).sum(axis=1))
    return out


__all__ = [
    "KernelSpec",
    "NeighborIndex",
    "distance",
    "distances",
    "kernel_value",
    "log_kernel_matrix",
    "log_mass",
    "monotone_on_grid",
    "nearest",
    "normalize_log_rows",
    "normalized_matrix",
    "normalized_row",
]
