"""Batch KBSF: stochastic factorization of KBRL's model over representative states."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigurationError, DomainError, FiniteMDP, SampleSet, ValueFunction
from .dp import SolverConfig, solve
from .kbrl import sample_q
from .kernels import KernelSpec, NeighborIndex, log_kernel_matrix, normalize_log_rows, normalized_matrix

FORMAT_VERSION = "kbsf-reduced-model/1"


class RepresentativeSet:
    """Representative states plus the kernel (tau-bar, mu-bar) that maps states onto them."""

    def __init__(self, states, kernel: KernelSpec):
        S = np.atleast_2d(np.asarray(states, dtype=float))
        if S.size == 0:
            raise DomainError("need at least one representative state")
        if not np.all(np.isfinite(S)):
            raise DomainError("non-finite representative state")
        if len(np.unique(S, axis=0)) != len(S):
            raise DomainError("duplicate representative states")
        self.states = S
        self.kernel = kernel
        self._index: NeighborIndex | None = None

    @property
    def m(self) -> int:
        return len(self.states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def index(self) -> NeighborIndex | None:
        if self.kernel.mu == 0:
            return None
        if self._index is None:
            self._index = NeighborIndex(self.states, self.kernel)
        return self._index

    def weights(self, X) -> np.ndarray:
        """Rows of kappa-bar: each row of ``X`` mapped to a distribution over the representatives."""
        return normalized_matrix(self.kernel, X, self.states, self.index)

    def added(self, s) -> RepresentativeSet:
        return RepresentativeSet(np.vstack([self.states, np.asarray(s, dtype=float)[None, :]]), self.kernel)


@dataclass
class Factorization:
    """Per-action factors: ``Ddot[a]`` is n_a x m, ``Kdot[a]`` is m x n_a."""

    Ddot: list[np.ndarray]
    Kdot: list[np.ndarray]
    rbar: list[np.ndarray]
    done: list[np.ndarray]
    log_w: list[np.ndarray]

    @property
    def m(self) -> int:
        return self.Kdot[0].shape[0]

    def D(self) -> np.ndarray:
        return np.vstack(self.Ddot)

    def K(self, a: int) -> np.ndarray:
        """K^a: m x n with Kdot[a] in action a's column block."""
        counts = [d.shape[0] for d in self.Ddot]
        off = int(sum(counts[:a]))
        out = np.zeros((self.m, sum(counts)))
        out[:, off:off + counts[a]] = self.Kdot[a]
        return out


def build_factorization(samples: SampleSet, reps: RepresentativeSet, kernel: KernelSpec) -> Factorization:
    if any(c == 0 for c in samples.counts):
        raise ConfigurationError("every action needs at least one transition")
    if samples.dim != reps.dim:
        raise DomainError("representative states and samples differ in dimension")
    Dd, Kd, rb, dn, lw = [], [], [], [], []
    for a in range(samples.num_actions):
        Dd.append(reps.weights(samples.ends[a]))
        K, logw = normalize_log_rows(log_kernel_matrix(kernel, reps.states, samples.starts[a]))
        Kd.append(K)
        rb.append(K @ samples.rewards[a])
        dn.append(samples.terminal[a].astype(float))
        lw.append(logw)
    return Factorization(Dd, Kd, rb, dn, lw)


@dataclass
class ReducedModel:
    """The m-state MDP plus the per-action kernel-mass accumulators ``w = exp(log_w)``.

    ``P[a]`` is m x m and ``term[a]`` holds each row's probability of ending the
    episode. Rows with zero mass (``log_w = -inf``) have not seen data yet.
    """

    reps: RepresentativeSet
    kernel: KernelSpec
    gamma: float
    P: np.ndarray
    r: np.ndarray
    term: np.ndarray
    log_w: np.ndarray
    qbar: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.reps.m

    @property
    def num_actions(self) -> int:
        return self.P.shape[0]

    @property
    def w(self) -> np.ndarray:
        return np.exp(self.log_w)

    def zero_mass_rows(self) -> np.ndarray:
        """Boolean (A, m) mask of rows without any kernel mass."""
        return ~np.isfinite(self.log_w)

    def to_mdp(self) -> FiniteMDP:
        """Finite MDP for DP; zero-mass rows become reward-0 self-loops."""
        P, r = self.P.copy(), self.r.copy()
        term = self.term.copy()
        zero = self.zero_mass_rows()
        for a, i in zip(*np.nonzero(zero)):
            P[a, i] = 0.0
            P[a, i, i] = 1.0
            r[a, i] = 0.0
            term[a, i] = 0.0
        return FiniteMDP(list(P), r, self.gamma, term=term if term.any() else None)

    def memory_bytes(self) -> int:
        return sum(x.nbytes for x in (self.P, self.r, self.term, self.log_w, self.reps.states)) + (
            0 if self.qbar is None else self.qbar.nbytes)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(model_to_dict(self)))

    @classmethod
    def load(cls, path: str | Path) -> ReducedModel:
        return model_from_dict(json.loads(Path(path).read_text()))


def _renormalize(P: np.ndarray, term: np.ndarray) -> None:
    s = P.sum(axis=-1) + term
    ok = s > 0
    P[ok] /= s[ok][:, None]
    term[ok] /= s[ok]


def swap_factors(f: Factorization, gamma: float, reps: RepresentativeSet, kernel: KernelSpec) -> ReducedModel:
    """``Pbar^a = Kdot^a Ddot^a`` (terminal end states feed ``term`` instead of a column)."""
    A = len(f.Kdot)
    m = f.m
    P = np.empty((A, m, reps.m))
    term = np.empty((A, m))
    for a in range(A):
        if f.Kdot[a].shape[1] != f.Ddot[a].shape[0]:
            raise DomainError(f"action {a}: Kdot and Ddot do not conform")
        P[a] = f.Kdot[a] @ (f.Ddot[a] * (1.0 - f.done[a])[:, None])
        term[a] = f.Kdot[a] @ f.done[a]
        _renormalize(P[a], term[a])
    return ReducedModel(reps, kernel, gamma, P, np.array(f.rbar), term, np.array(f.log_w))


def solve_reduced(model: ReducedModel, config: SolverConfig = SolverConfig(), method: str = "mpi") -> ValueFunction:
    vf = solve(model.to_mdp(), config, method)
    model.qbar = vf.Q
    return vf


def vtilde(model: ReducedModel, samples: SampleSet) -> np.ndarray:
    """``Gamma D Qbar``, computed block by block over the actions."""
    if model.qbar is None:
        raise RuntimeError("reduced model has not been solved")
    return np.concatenate([(model.reps.weights(e) @ model.qbar).max(axis=1) for e in samples.ends])


def batch_kbsf(samples: SampleSet, reps: RepresentativeSet, kernel: KernelSpec, gamma: float,
               config: SolverConfig = SolverConfig(), method: str = "mpi") -> tuple[ReducedModel, np.ndarray]:
    f = build_factorization(samples, reps, kernel)
    model = swap_factors(f, gamma, reps, kernel)
    solve_reduced(model, config, method)
    return model, vtilde(model, samples)


def kbsf_q_many(model: ReducedModel, samples: SampleSet, S, v_tilde: np.ndarray | None = None) -> np.ndarray:
    """``Q(s, a) = sum_i kappa^a(s, s^a_i) [r^a_i + gamma Vtilde(shat^a_i)]``."""
    v = vtilde(model, samples) if v_tilde is None else v_tilde
    return sample_q(samples, model.kernel, model.gamma, v, S)


def kbsf_q(model: ReducedModel, samples: SampleSet, s, a: int, v_tilde: np.ndarray | None = None) -> float:
    return float(kbsf_q_many(model, samples, s, v_tilde)[0, a])


def rep_q_many(model: ReducedModel, S) -> np.ndarray:
    """Sample-free query ``Q(s, a) = sum_i kappa-bar(s, sbar_i) Qbar(sbar_i, a)``."""
    if model.qbar is None:
        raise RuntimeError("reduced model has no Qbar")
    return model.reps.weights(np.atleast_2d(S)) @ model.qbar


def nadaraya_watson_row(rows, weights) -> np.ndarray:
    R = np.atleast_2d(np.asarray(rows, dtype=float))
    w = np.asarray(weights, dtype=float).reshape(-1)
    if len(w) != len(R):
        raise DomainError("one weight per row required")
    return w @ R


def kernel_to_dict(k: KernelSpec) -> dict:
    return {"tau": k.tau, "phi": k.phi, "mu": k.mu, "weights": None if k.weights is None else list(k.weights)}


def kernel_from_dict(d: dict) -> KernelSpec:
    return KernelSpec(tau=d["tau"], phi=d["phi"], mu=d["mu"], weights=None if d["weights"] is None else tuple(d["weights"]))


def model_to_dict(model: ReducedModel) -> dict:
    finite = lambda x: [None if not np.isfinite(v) else float(v) for v in np.ravel(x)]  # noqa: E731
    return {
        "version": FORMAT_VERSION,
        "gamma": model.gamma,
        "m": model.m,
        "num_actions": model.num_actions,
        "reps": model.reps.states.tolist(),
        "rep_kernel": kernel_to_dict(model.reps.kernel),
        "kernel": kernel_to_dict(model.kernel),
        "P": [p.ravel().tolist() for p in model.P],
        "r": model.r.tolist(),
        "w": model.w.tolist(),
        "log_w": [finite(x) for x in model.log_w],
        "term": model.term.tolist(),
        "qbar": None if model.qbar is None else model.qbar.tolist(),
        "meta": model.meta,
    }


def model_from_dict(d: dict) -> ReducedModel:
    if d.get("version") != FORMAT_VERSION:
        raise DomainError(f"unsupported model format {d.get('version')!r}")
    m, A = d["m"], d["num_actions"]
    reps = RepresentativeSet(np.array(d["reps"]), kernel_from_dict(d["rep_kernel"]))
    log_w = np.array([[(-np.inf if v is None else v) for v in row] for row in d["log_w"]], dtype=float)
    return ReducedModel(
        reps,
        kernel_from_dict(d["kernel"]),
        d["gamma"],
        np.array(d["P"], dtype=float).reshape(A, m, m),
        np.array(d["r"], dtype=float).reshape(A, m),
        np.array(d["term"], dtype=float).reshape(A, m),
        log_w.reshape(A, m),
        None if d["qbar"] is None else np.array(d["qbar"], dtype=float),
        d.get("meta", {}),
    )
