"""Experiment orchestration: seeded runs, evaluation on test grids, committees, sweeps and benchmarks."""

from __future__ import annotations

import csv
import itertools
import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .batch import (
    RepresentativeSet,
    build_factorization,
    kbsf_q_many,
    kernel_from_dict,
    kernel_to_dict,
    model_from_dict,
    model_to_dict,
    rep_q_many,
    solve_reduced,
    swap_factors,
    vtilde,
)
from .core import ConfigurationError, SampleSet, ValueFunction
from .dp import SolverConfig
from .envs import TASKS, Environment, make_env
from .incremental import IncrementalConfig, refresh_qbar, run_ikbsf
from .kbrl import build_kbrl, kbrl_q_many, solve_kbrl
from .kernels import KernelSpec
from .selection import SelectionStrategy, grid_centers, select

ALGORITHMS = ("kbrl", "kbsf", "ikbsf")
SELECTIONS = ("kmeans", "random", "grid", "ends", "online")


@dataclass
class ExperimentConfig:
    """Everything that determines a run.

    ``weights`` rescales state dimensions inside every kernel: ``None`` keeps the
    plain Euclidean norm, ``"range"`` divides each coordinate by the half-width
    of the task's test box, a list gives explicit squared-norm weights.
    ``query`` picks how KBSF answers ``Q(s, a)`` at evaluation: ``"samples"``
    smooths over the sampled transitions, ``"reps"`` interpolates ``Qbar``
    over the representative states. ``timing=False`` replaces the wall clock
    with zeros; metrics do not depend on it.
    """

    task: str = "puddle"
    algorithm: str = "kbsf"
    n: int = 8000
    m: int = 100
    tau: float = 0.1
    tau_bar: float = 0.1
    mu: int = 0
    mu_bar: int = 0
    phi: str = "exp"
    selection: str = "kmeans"
    gamma: float | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    incremental: IncrementalConfig = field(default_factory=IncrementalConfig)
    epsilon_schedule: list = field(default_factory=list)
    runs: int = 50
    seed: int = 0
    committee: int = 1
    query: str = "samples"
    weights: object = None
    eval_repeats: int = 1
    eval_steps: int | None = None
    collect_lanes: int = 100
    kmeans_iters: int = 100
    env: dict = field(default_factory=dict)
    timing: bool = True
    out: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.selection not in SELECTIONS:
            raise ConfigurationError(f"unknown selection {self.selection!r}")
        if not (self.tau > 0 and self.tau_bar > 0):
            raise ConfigurationError("kernel widths must be positive")
        if self.runs < 1 or self.committee < 1 or self.eval_repeats < 1:
            raise ConfigurationError("runs, committee and eval_repeats must be >= 1")
        if self.n < 1 or self.m < 1:
            raise ConfigurationError("n and m must be >= 1")
        if self.query not in ("samples", "reps"):
            raise ConfigurationError(f"unknown query {self.query!r}")
        if isinstance(self.solver, dict):
            self.solver = SolverConfig(**self.solver)
        if isinstance(self.incremental, dict):
            self.incremental = IncrementalConfig(**self.incremental)
        self.epsilon_schedule = [tuple(x) for x in self.epsilon_schedule]

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solver"].pop("warm_start", None)
        d["epsilon_schedule"] = [list(x) for x in self.epsilon_schedule]
        return d

    def kernels(self, env: Environment) -> tuple[KernelSpec, KernelSpec]:
        w = self.weights
        if isinstance(w, str):
            if w != "range":
                raise ConfigurationError(f"unknown weights {w!r}")
            w = tuple(1.0 / h ** 2 for h in _half_ranges(env))
        elif w is not None:
            w = tuple(float(x) for x in w)
        return (KernelSpec(self.tau, self.phi, self.mu, w), KernelSpec(self.tau_bar, self.phi, self.mu_bar, w))


def _half_ranges(env: Environment) -> np.ndarray:
    hr = getattr(env, "half_ranges", None)
    if hr is not None:
        return np.asarray(hr)
    return np.array([(hi - lo) / 2 for lo, hi in env.bounds])


@dataclass
class RunResult:
    """Per-run metrics; every list has one entry per run."""

    config: ExperimentConfig
    returns: list[float] = field(default_factory=list)
    success: list[float] = field(default_factory=list)
    build_seconds: list[float] = field(default_factory=list)
    solve_seconds: list[float] = field(default_factory=list)
    final_m: list[int] = field(default_factory=list)
    m_history: list[list] = field(default_factory=list)
    errors: list[str | None] = field(default_factory=list)
    bound_reports: list = field(default_factory=list)

    METRIC_FIELDS = ("run", "return", "success", "m", "error")

    def metric_rows(self) -> list[tuple]:
        return [(i, self.returns[i], self.success[i], self.final_m[i], self.errors[i] or "") for i in range(len(self.returns))]

    def write(self, out: str | Path) -> None:
        """``metrics.csv`` is timing-free so identical configs give identical files."""
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.METRIC_FIELDS)
            w.writerows(self.metric_rows())
        with open(out / "timings.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("run", "build_seconds", "solve_seconds"))
            w.writerows(zip(range(len(self.returns)), self.build_seconds, self.solve_seconds))
        if any(self.m_history):
            with open(out / "model_size.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("run", "step", "m"))
                for i, hist in enumerate(self.m_history):
                    w.writerows((i, t, m) for t, m in hist)
        (out / "summary.json").write_text(json.dumps(summarize(self), indent=2))


# -- data collection ---------------------------------------------------------


def collect_samples(env: Environment, n: int, rng: np.random.Generator, lanes: int = 100,
                    policy: Callable | None = None) -> SampleSet:
    """``n`` transitions from parallel episodes with uniformly random actions (by default).

    Episodes restart from the exploration start distribution after an absorbing
    transition or after ``env.max_steps`` steps.
    """
    lanes = max(1, min(lanes, n))
    S = env.sample_starts(lanes, rng)
    steps = np.zeros(lanes, dtype=int)
    out_s, out_a, out_r, out_e, out_t = [], [], [], [], []
    count = 0
    while count < n:
        A = rng.integers(env.num_actions, size=lanes) if policy is None else policy(S, rng)
        S2, R, T = env.batch_step(S, A, rng)
        take = min(lanes, n - count)
        out_s.append(S[:take])
        out_a.append(A[:take])
        out_r.append(R[:take])
        out_e.append(S2[:take])
        out_t.append(T[:take])
        count += take
        steps += 1
        reset = T | (steps >= env.max_steps) | ~np.all(np.isfinite(S2), axis=1)
        S = S2.copy()
        if reset.any():
            S[reset] = env.sample_starts(int(reset.sum()), rng)
            steps[reset] = 0
    S, A, R, E, T = (np.concatenate(x) for x in (out_s, out_a, out_r, out_e, out_t))
    return SampleSet([S[A == a] for a in range(env.num_actions)], [R[A == a] for a in range(env.num_actions)],
                     [E[A == a] for a in range(env.num_actions)], [T[A == a] for a in range(env.num_actions)])


# -- agents and committees ---------------------------------------------------


class Agent:
    """A trained policy's Q-function over batches of states."""

    def __init__(self, q: Callable[[np.ndarray], np.ndarray], m: int, build: float = 0.0, solve: float = 0.0,
                 m_history: list | None = None, export: Callable[[], dict] | None = None):
        self.q = q
        self.m = m
        self.build_seconds = build
        self.solve_seconds = solve
        self.m_history = m_history or []
        self.export = export

    def greedy(self, S: np.ndarray) -> np.ndarray:
        return np.argmax(self.q(np.atleast_2d(S)), axis=1)


def committee_actions(agents: list[Agent], S: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Plurality vote over the agents' greedy actions; ties broken uniformly at random."""
    if len(agents) == 1:
        return agents[0].greedy(S)
    votes = np.stack([a.greedy(S) for a in agents], axis=1)
    A = max(int(votes.max()) + 1, 1)
    counts = np.zeros((len(votes), A))
    for j in range(votes.shape[1]):
        counts[np.arange(len(votes)), votes[:, j]] += 1
    tied = counts == counts.max(axis=1, keepdims=True)
    return np.argmax(tied * rng.random(counts.shape), axis=1)


def committee_decide(agents: list[Agent], s, rng: np.random.Generator) -> int:
    if not agents:
        raise ConfigurationError("committee needs at least one agent")
    return int(committee_actions(agents, np.atleast_2d(np.asarray(s, dtype=float)), rng)[0])


# -- evaluation ----------------------------------------------------------------


@dataclass
class Evaluation:
    returns: np.ndarray
    success: np.ndarray
    steps: np.ndarray


def evaluate(decide: Callable[[np.ndarray], np.ndarray], env: Environment, states: np.ndarray,
             rng: np.random.Generator, repeats: int = 1, max_steps: int | None = None) -> Evaluation:
    """Run the policy from every test state in parallel; discounted returns and success flags."""
    S = np.repeat(np.atleast_2d(states).astype(float), repeats, axis=0)
    N = len(S)
    horizon = env.max_steps if max_steps is None else max_steps
    ret = np.zeros(N)
    absorbed = np.zeros(N, dtype=bool)
    steps = np.zeros(N, dtype=int)
    active = np.ones(N, dtype=bool)
    disc = 1.0
    for _ in range(horizon):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        A = decide(S[idx])
        S2, R, T = env.batch_step(S[idx], A, rng)
        ret[idx] += disc * R
        disc *= env.gamma
        S[idx] = S2
        steps[idx] += 1
        absorbed[idx[T]] = True
        active[idx[T]] = False
    success = absorbed if env.absorbing_is_success else ~absorbed
    return Evaluation(ret, success, steps)


# -- training ----------------------------------------------------------------


def _epsilon_policy(config: ExperimentConfig, num_actions: int) -> Callable:
    schedule = sorted(config.epsilon_schedule)

    def choose(t: int, q, rng: np.random.Generator) -> int:
        eps = config.incremental.epsilon_greedy
        for start, e in schedule:
            if t >= start:
                eps = e
        if q is None or rng.random() < eps:
            return int(rng.integers(num_actions))
        return int(np.argmax(q))

    return choose


def _select_reps(config: ExperimentConfig, samples: SampleSet, env: Environment, kernel_bar: KernelSpec,
                 seed: int) -> np.ndarray:
    ends = samples.all_ends()
    if config.selection == "ends":
        return np.unique(ends, axis=0)
    strategy = SelectionStrategy(config.selection, config.m, seed, config.kmeans_iters)
    return select(strategy, ends, env.bounds, kernel_bar)


def _no_clock() -> float:
    return 0.0


def train_agent(config: ExperimentConfig, env: Environment, rng: np.random.Generator) -> Agent:
    clock = time.perf_counter if config.timing else _no_clock
    k, kb = config.kernels(env)
    seed = int(rng.integers(2**31))
    if config.algorithm == "ikbsf":
        return _train_ikbsf(config, env, k, kb, rng, seed, clock)
    samples = collect_samples(env, config.n, rng, config.collect_lanes)
    if config.algorithm == "kbrl":
        t0 = clock()
        model = build_kbrl(samples, k, env.gamma)
        t1 = clock()
        solve_kbrl(model, config.solver)
        t2 = clock()
        export = lambda: {"kind": "kbrl", "kernel": kernel_to_dict(k), "gamma": env.gamma,  # noqa: E731
                          "samples": samples_to_dict(samples), "v": model.vstar.v.tolist()}
        return Agent(lambda S: kbrl_q_many(model, S), samples.n, t1 - t0, t2 - t1, export=export)
    reps = RepresentativeSet(_select_reps(config, samples, env, kb, seed), kb)
    t0 = clock()
    f = build_factorization(samples, reps, k)
    model = swap_factors(f, env.gamma, reps, k)
    t1 = clock()
    solve_reduced(model, config.solver)
    vt = vtilde(model, samples)
    t2 = clock()
    if config.query == "reps":
        export = lambda: {"kind": "kbsf", "query": "reps", "model": model_to_dict(model)}  # noqa: E731
        return Agent(lambda S: rep_q_many(model, S), model.m, t1 - t0, t2 - t1, export=export)
    export = lambda: {"kind": "kbsf", "query": "samples", "model": model_to_dict(model),  # noqa: E731
                      "samples": samples_to_dict(samples), "vtilde": vt.tolist()}
    return Agent(lambda S: kbsf_q_many(model, samples, S, vt), model.m, t1 - t0, t2 - t1, export=export)


def _train_ikbsf(config, env, k, kb, rng, seed, clock=time.perf_counter) -> Agent:
    if config.selection == "grid":
        per = max(1, int(round(config.m ** (1.0 / env.dim))))
        init = grid_centers(env.bounds if env.dim == 2 else [(-h, h) for h in _half_ranges(env)], [per] * env.dim)
    elif config.selection == "online":
        init = env.sample_starts(1, rng)
    else:
        pilot = collect_samples(env, max(config.m, min(config.n, 10 * config.m)), rng, config.collect_lanes)
        init = _select_reps(config, pilot, env, kb, seed)
    reps = RepresentativeSet(init, kb)
    env.rng = np.random.default_rng(int(rng.integers(2**31)))
    t0 = clock()
    model, log = run_ikbsf(env, reps, k, config.incremental, config.n, rng=rng, solver=config.solver,
                           policy=_epsilon_policy(config, env.num_actions), log_rows=False)
    if model.qbar is None or config.n % config.incremental.t_v:
        refresh_qbar(model, config.solver)
    elapsed = clock() - t0
    export = lambda: {"kind": "kbsf", "query": "reps", "model": model_to_dict(model)}  # noqa: E731
    return Agent(lambda S: rep_q_many(model, S), model.m, elapsed, 0.0, log.m_history, export=export)


def samples_to_dict(samples: SampleSet) -> dict:
    return {"starts": [x.tolist() for x in samples.starts], "rewards": [x.tolist() for x in samples.rewards],
            "ends": [x.tolist() for x in samples.ends], "terminal": [x.tolist() for x in samples.terminal]}


def samples_from_dict(d: dict) -> SampleSet:
    dim = len(next((s[0] for s in d["starts"] if s), [0]))
    arr = lambda xs: [np.asarray(x, dtype=float).reshape(-1, dim) for x in xs]  # noqa: E731
    return SampleSet(arr(d["starts"]), [np.asarray(x, dtype=float) for x in d["rewards"]], arr(d["ends"]),
                     [np.asarray(x, dtype=bool) for x in d["terminal"]])


def agent_from_dict(d: dict) -> Agent:
    """Rebuild a trained agent from its exported form."""
    if d["kind"] == "kbrl":
        samples = samples_from_dict(d["samples"])
        model = build_kbrl(samples, kernel_from_dict(d["kernel"]), d["gamma"])
        model.vstar = ValueFunction(np.asarray(d["v"]))
        return Agent(lambda S: kbrl_q_many(model, S), samples.n, export=lambda: d)
    model = model_from_dict(d["model"])
    if d.get("query") == "samples":
        samples = samples_from_dict(d["samples"])
        vt = np.asarray(d["vtilde"])
        return Agent(lambda S: kbsf_q_many(model, samples, S, vt), model.m, export=lambda: d)
    return Agent(lambda S: rep_q_many(model, S), model.m, export=lambda: d)


# -- experiments ---------------------------------------------------------------


def _one_run(config: ExperimentConfig, seq: np.random.SeedSequence) -> dict:
    train_seq, eval_seq, env_seq = seq.spawn(3)
    try:
        agents = []
        for member in train_seq.spawn(config.committee):
            rng = np.random.default_rng(member)
            env = make_env(config.task, seed=int(rng.integers(2**31)), overrides=config.env)
            if config.gamma is not None:
                env.gamma = config.gamma
            agents.append(train_agent(config, env, rng))
        env = make_env(config.task, seed=int(np.random.default_rng(env_seq).integers(2**31)), overrides=config.env)
        if config.gamma is not None:
            env.gamma = config.gamma
        vote_rng, dyn_rng = (np.random.default_rng(s) for s in eval_seq.spawn(2))
        ev = evaluate(lambda S: committee_actions(agents, S, vote_rng), env, env.test_states(), dyn_rng,
                      config.eval_repeats, config.eval_steps)
        return {
            "return": float(ev.returns.mean()),
            "success": float(ev.success.mean()),
            "build": sum(a.build_seconds for a in agents),
            "solve": sum(a.solve_seconds for a in agents),
            "m": int(agents[0].m),
            "m_history": agents[0].m_history,
            "error": None,
        }
    except Exception as exc:  # a failed run is recorded, not fatal to the batch
        return {"return": float("nan"), "success": float("nan"), "build": float("nan"), "solve": float("nan"),
                "m": 0, "m_history": [], "error": f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"}


def run_seeds(config: ExperimentConfig) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(config.seed).spawn(config.runs)


def run_experiment(config: ExperimentConfig, workers: int = 1) -> RunResult:
    seeds = run_seeds(config)
    if workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_one_run, [config] * config.runs, seeds))
    else:
        outs = [_one_run(config, s) for s in seeds]
    res = RunResult(config)
    for o in outs:
        res.returns.append(o["return"])
        res.success.append(o["success"])
        res.build_seconds.append(o["build"])
        res.solve_seconds.append(o["solve"])
        res.final_m.append(o["m"])
        res.m_history.append(o["m_history"])
        res.errors.append(o["error"])
    if config.out:
        res.write(config.out)
    return res


# -- statistics ------------------------------------------------------------------


@dataclass
class Summary:
    mean: float
    std: float | None
    low: float | None
    high: float | None
    count: int

    @property
    def half_width(self) -> float | None:
        return None if self.high is None else (self.high - self.low) / 2


def aggregate(values, confidence: float = 0.99) -> Summary:
    """Mean, sample std and two-sided t-interval; fewer than two values give a point estimate."""
    x = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if len(x) == 0:
        return Summary(float("nan"), None, None, None, 0)
    mean = float(x.mean())
    if len(x) < 2:
        return Summary(mean, None, None, None, 1)
    std = float(x.std(ddof=1))
    h = float(stats.t.ppf(0.5 + confidence / 2, len(x) - 1)) * std / np.sqrt(len(x))
    return Summary(mean, std, mean - h, mean + h, len(x))


def pooled_difference(a, b, confidence: float = 0.99) -> tuple[float, float]:
    """Difference of means and the pooled two-sample t-interval half-width."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    na, nb = len(a), len(b)
    sp2 = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    h = float(stats.t.ppf(0.5 + confidence / 2, na + nb - 2)) * np.sqrt(sp2 * (1 / na + 1 / nb))
    return float(a.mean() - b.mean()), h


@dataclass
class Regression:
    slope: float
    intercept: float
    r_squared: float
    loglog_slope: float | None


def runtime_regression(ns, seconds) -> Regression:
    """Linear fit of runtime against n, plus the log-log slope (1 for linear scaling)."""
    ns, seconds = np.asarray(ns, dtype=float), np.asarray(seconds, dtype=float)
    lin = stats.linregress(ns, seconds)
    ll = stats.linregress(np.log(ns), np.log(seconds)).slope if np.all(seconds > 0) and len(set(ns)) > 1 else None
    return Regression(float(lin.slope), float(lin.intercept), float(lin.rvalue ** 2), None if ll is None else float(ll))


def summarize(res: RunResult) -> dict:
    out = {}
    for name, vals in (("return", res.returns), ("success", res.success), ("build_seconds", res.build_seconds),
                       ("solve_seconds", res.solve_seconds)):
        out[name] = asdict(aggregate(vals))
    out["failed_runs"] = sum(e is not None for e in res.errors)
    return out


# -- sweeps and benchmarks -----------------------------------------------------


def sweep(config: ExperimentConfig, grid: dict, workers: int = 1, metric: str = "return") -> list[dict]:
    """Run every combination in ``grid`` (field -> values); rows sorted best first by mean ``metric``."""
    rows = []
    keys = list(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, combo))
        cfg = replace(config, **params, out=None if config.out is None else str(
            Path(config.out) / "_".join(f"{k}={v}" for k, v in params.items())))
        res = run_experiment(cfg, workers)
        s = summarize(res)
        rows.append({**params, "mean": s[metric]["mean"], "low": s[metric]["low"], "high": s[metric]["high"],
                     "result": res})
    rows.sort(key=lambda r: -np.nan_to_num(r["mean"], nan=-np.inf))
    return rows


def write_sweep(rows: list[dict], path: str | Path) -> None:
    keys = [k for k in rows[0] if k != "result"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        w.writerows([[r[k] for k in keys] for r in rows])


@dataclass
class BenchRow:
    algorithm: str
    n: int
    build_seconds: float
    solve_seconds: float

    @property
    def total(self) -> float:
        return self.build_seconds + self.solve_seconds


def bench(config: ExperimentConfig, ns, algorithm: str, repeats: int = 3, solver: SolverConfig | None = None) -> list[BenchRow]:
    """Median wall-clock of model construction and solve for each n (sample collection not timed)."""
    rows = []
    rng = np.random.default_rng(config.seed)
    env = make_env(config.task, seed=config.seed, overrides=config.env)
    k, kb = config.kernels(env)
    solver = solver or config.solver
    for n in ns:
        samples = collect_samples(env, int(n), rng, config.collect_lanes)
        builds, solves = [], []
        reps = None if algorithm == "kbrl" else RepresentativeSet(_select_reps(config, samples, env, kb, config.seed), kb)
        for _ in range(repeats):
            if algorithm == "kbrl":
                t0 = time.perf_counter()
                model = build_kbrl(samples, k, env.gamma)
                t1 = time.perf_counter()
                solve_kbrl(model, solver)
                t2 = time.perf_counter()
                del model
            else:
                t0 = time.perf_counter()
                model = swap_factors(build_factorization(samples, reps, k), env.gamma, reps, k)
                t1 = time.perf_counter()
                solve_reduced(model, solver)
                t2 = time.perf_counter()
            builds.append(t1 - t0)
            solves.append(t2 - t1)
        rows.append(BenchRow(algorithm, int(n), float(np.median(builds)), float(np.median(solves))))
    return rows
