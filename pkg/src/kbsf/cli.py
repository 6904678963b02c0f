"""Command-line entry point: ``kbsf <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import bounds
from .batch import RepresentativeSet, build_factorization, solve_reduced, swap_factors
from .core import ConfigurationError, write_samples_csv
from .envs import make_env
from .harness import (
    ExperimentConfig,
    _select_reps,
    agent_from_dict,
    bench,
    collect_samples,
    committee_actions,
    evaluate,
    run_experiment,
    runtime_regression,
    summarize,
    sweep,
    train_agent,
    write_sweep,
)
from .kbrl import build_kbrl, solve_kbrl

log = logging.getLogger("kbsf")

# flags that map one-to-one onto ExperimentConfig fields
FIELD_FLAGS = {
    "task": str, "algorithm": str, "n": int, "m": int, "tau": float, "tau_bar": float, "mu": int, "mu_bar": int,
    "phi": str, "selection": str, "gamma": float, "runs": int, "committee": int, "query": str,
    "eval_repeats": int, "eval_steps": int,
}


def load_config(args) -> ExperimentConfig:
    d = {}
    if getattr(args, "config", None):
        d = yaml.safe_load(Path(args.config).read_text()) or {}
    for name in FIELD_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    for item in getattr(args, "set", None) or []:
        key, _, raw = item.partition("=")
        d[key] = yaml.safe_load(raw)
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "out", None) is not None and "out" in {f.name for f in fields(ExperimentConfig)}:
        d.setdefault("out", args.out)
    return ExperimentConfig.from_dict(d)


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    if config:
        p.add_argument("--config", help="YAML experiment file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field")
        for name, typ in FIELD_FLAGS.items():
            p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def cmd_collect(args) -> int:
    cfg = load_config(args)
    env = make_env(cfg.task, seed=cfg.seed, overrides=cfg.env)
    samples = collect_samples(env, cfg.n, np.random.default_rng(cfg.seed), cfg.collect_lanes)
    write_samples_csv(samples, args.out or "samples.csv")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    env = make_env(cfg.task, seed=cfg.seed, overrides=cfg.env)
    if cfg.gamma is not None:
        env.gamma = cfg.gamma
    agent = train_agent(cfg, env, np.random.default_rng(cfg.seed))
    payload = {"config": cfg.to_dict(), **agent.export()}
    Path(args.out or "model.json").write_text(json.dumps(payload))
    log.info("model with m=%d written", agent.m)
    return 0


def cmd_eval(args) -> int:
    payloads = [json.loads(Path(p).read_text()) for p in args.model]
    agents = [agent_from_dict(p) for p in payloads]
    task = args.task or payloads[0]["config"]["task"]
    env = make_env(task, seed=args.seed or 0)
    if args.gamma is not None:
        env.gamma = args.gamma
    vote_rng, dyn_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(args.seed or 0).spawn(2))
    states = env.test_states()
    ev = evaluate(lambda S: committee_actions(agents, S, vote_rng), env, states, dyn_rng, args.repeats, args.steps)
    out = Path(args.out or "eval.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "repeat", "return", "success", "steps"])
        for i in range(len(ev.returns)):
            w.writerow([i // args.repeats, i % args.repeats, ev.returns[i], int(ev.success[i]), ev.steps[i]])
    print(json.dumps({"mean_return": float(ev.returns.mean()), "success_rate": float(ev.success.mean())}))
    return 0


def _parse_grid(items) -> dict:
    grid = {}
    for item in items or []:
        key, _, raw = item.partition("=")
        grid[key] = [yaml.safe_load(v) for v in raw.split(",")]
    return grid


def cmd_run(args) -> int:
    cfg = load_config(args)
    res = run_experiment(cfg, args.workers)
    print(json.dumps(summarize(res), indent=2))
    return 0 if any(e is None for e in res.errors) else 2


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    grid = _parse_grid(args.grid) or {"tau": [0.01, 0.1, 1.0], "tau_bar": [0.01, 0.1, 1.0]}
    rows = sweep(cfg, grid, args.workers, args.metric)
    out = Path(args.out or "sweep")
    out.mkdir(parents=True, exist_ok=True)
    write_sweep(rows, out / "sweep.csv")
    best = {k: v for k, v in rows[0].items() if k != "result"}
    print(json.dumps({"best": best}, default=float))
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args)
    ns = [int(float(x)) for x in args.ns.split(",")]
    solver = replace(cfg.solver, exact_eval_limit=0) if args.no_exact else cfg.solver
    rows = bench(cfg, ns, cfg.algorithm, args.repeats, solver)
    out = Path(args.out or "bench.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "n", "build_seconds", "solve_seconds", "total_seconds"])
        w.writerows([(r.algorithm, r.n, r.build_seconds, r.solve_seconds, r.total) for r in rows])
    if len(rows) > 1:
        print(json.dumps(asdict(runtime_regression([r.n for r in rows], [r.total for r in rows]))))
    return 0


def cmd_diagnose(args) -> int:
    cfg = load_config(args)
    if cfg.n > bounds.DIAGNOSTIC_MAX_N:
        raise ConfigurationError(f"diagnose needs n <= {bounds.DIAGNOSTIC_MAX_N}")
    env = make_env(cfg.task, seed=cfg.seed, overrides=cfg.env)
    if cfg.gamma is not None:
        env.gamma = cfg.gamma
    rng = np.random.default_rng(cfg.seed)
    samples = collect_samples(env, cfg.n, rng, cfg.collect_lanes)
    if samples.has_terminals():
        # the bounds concern the continuing model; drop absorbing transitions
        samples = samples.subset([~t for t in samples.terminal])
    k, kb = cfg.kernels(env)
    kbrl = build_kbrl(samples, k, env.gamma)
    solve_kbrl(kbrl, bounds.TIGHT)
    reps = RepresentativeSet(_select_reps(cfg, samples, env, kb, cfg.seed), kb)
    f = build_factorization(samples, reps, k)
    reduced = swap_factors(f, env.gamma, reps, k)
    solve_reduced(reduced, bounds.TIGHT)
    report = bounds.xi_v(kbrl, f, reduced)
    report.epsilon_qbar = bounds.epsilon_qbar(reduced)
    observed = float(np.max(np.abs(kbrl.vstar.v - np.concatenate(
        [(reps.weights(e) @ reduced.qbar).max(axis=1) for e in samples.ends]))))
    payload = {"report": json.loads(report.to_json()), "observed_value_gap": observed,
               "query_bound": bounds.prop2_query_bound(report)}
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kbsf", description="Kernel-based RL and stochastic factorization experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("collect", help="sample transitions with a random policy into CSV")
    _common(s)
    s.set_defaults(func=cmd_collect)

    s = sub.add_parser("train", help="train one agent and write the model file")
    _common(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate model files on a task's test states")
    _common(s, config=False)
    s.add_argument("model", nargs="+", help="one model file, or several for a committee")
    s.add_argument("--task", default=None)
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--steps", type=int, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("run", help="seeded replicated experiment from a config")
    _common(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="grid over config fields, e.g. --grid tau=0.01,0.1,1")
    _common(s)
    s.add_argument("--grid", action="append")
    s.add_argument("--metric", default="return", choices=["return", "success"])
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("bench", help="construction and solve time as n grows")
    _common(s)
    s.add_argument("--ns", default="1000,10000")
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--no-exact", action="store_true", help="iterative policy evaluation at every size")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("diagnose", help="error-bound report on a small instance")
    _common(s)
    s.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
