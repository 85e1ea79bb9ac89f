"""Command line entry point: ``mcglab <command> ...`` or ``python -m mcglab``.

Commands: ``env gen``, ``train``, ``eval``, ``reach``, ``plan``, ``report``
and ``run``.  Every command is seeded and prints plain text or CSV.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time

from . import numkit as nk
from .agent import train
from .envsim import GoalTask, make_env, read_descriptor, write_descriptor, write_trajectory
from .harness import ConfigError, load_config, parse_overrides
from .harness.evaluate import eval_identifiability, eval_prediction_accuracy
from .harness.runner import build_model, report, run, train_config
from .planner import CemConfig, EnvModel, run_episode
from .reach import StateSpaceTooLarge, build_operators, encode, reach_table
from .worldmodel import CheckpointError, load, save


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _writer():
    return csv.writer(sys.stdout, lineterminator="\n")


def cmd_env_gen(args) -> int:
    desc = {"env.name": args.name, "env.seed": str(args.seed)}
    if args.name == "chemical":
        desc.update({"env.variant": args.variant, "env.nodes": str(args.nodes),
                     "env.colors": str(args.colors), "env.sharpness": repr(args.sharpness)})
    env = make_env(desc)
    write_descriptor(env, args.out)
    print(f"wrote {args.out}: {env!r}, meta states {', '.join(env.meta_ids)}")
    if args.trajectory:
        rng = nk.RandomSource(args.seed, "env-gen")
        s = env.reset(rng)
        records = []
        for _ in range(args.steps):
            rec = env.step(s, int(rng.integers(env.n_actions)), rng)
            records.append(rec)
            s = rec.next_state
        write_trajectory(records, env, args.trajectory)
        print(f"wrote {args.steps} transitions to {args.trajectory}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, parse_overrides(args.set))
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    desc = cfg.env_descriptor(seed)
    env = make_env(desc)
    model = build_model(cfg, env, args.variant, seed)
    t0 = time.time()

    def progress(_, row):
        print(f"step {row['step']} loss {row['loss_total']:.4f} meta_acc {row['meta_acc']:.3f} "
              f"shd {row['shd_per_code']}", file=sys.stderr)

    rep = train(env, model, train_config(cfg, args.variant, seed), callback=progress)
    save(model, args.out, desc)
    if args.report:
        rep.to_csv(args.report)
    print(f"saved {args.out} after {model.step} steps ({time.time() - t0:.1f}s)")
    return 0


def _load_ckpt(path):
    model, desc = load(path)
    if not desc:
        raise CheckpointError(f"{path} carries no environment descriptor")
    return model, make_env(desc)


def cmd_eval(args) -> int:
    model, env = _load_ckpt(args.checkpoint)
    w = _writer()
    w.writerow(["metric", "value"])
    for k in _ints(args.noise):
        w.writerow([f"accuracy_noise{k}", f"{eval_prediction_accuracy(model, env, k, args.samples, args.seed):.4f}"])
    if model.use_codebook:
        for key, v in eval_identifiability(model, env, args.samples, args.seed).items():
            w.writerow([key, f"{v:.4f}" if isinstance(v, float) else v])
    return 0


def cmd_reach(args) -> int:
    env = make_env(read_descriptor(args.env))
    inter = range(env.p) if args.intervenable == "all" else _ints(args.intervenable)
    ops = build_operators(env, inter, cap=args.cap)
    start = encode(_ints(args.start), env.cards)
    w = _writer()
    w.writerow(["state_index", "values", "min_k_reach", "feasible"])
    for idx, values, k, feas in reach_table(ops, start, args.max_k):
        w.writerow([idx, " ".join(map(str, values)), k, int(feas)])
    return 0


def cmd_plan(args) -> int:
    if args.checkpoint:
        model, env = _load_ckpt(args.checkpoint)
        if args.env:
            env = make_env(read_descriptor(args.env))
    elif args.env:
        env = make_env(read_descriptor(args.env))
        model = EnvModel(env)
    else:
        raise SystemExit("plan needs --checkpoint or --env")
    goal = tuple(_ints(args.goal))
    if len(goal) != env.p:
        raise SystemExit(f"goal has {len(goal)} values, environment has {env.p} nodes")
    config = CemConfig(args.length, args.candidates, args.elites, args.iterations, args.exploration)
    w = _writer()
    w.writerow(["seed", "episode", "reward"])
    for seed in _ints(args.seeds):
        for ep in range(args.episodes):
            rng = nk.RandomSource(seed, f"plan/{ep}")
            start = _ints(args.start) if args.start else env.natural_states(1, rng)[0]
            r = run_episode(env, model, GoalTask(goal, args.horizon), start, config, rng, args.noise)
            w.writerow([seed, ep, repr(r)])
    return 0


def cmd_report(args) -> int:
    sys.stdout.write(report(args.run_dir))
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config, parse_overrides(args.set))
    t0 = time.time()
    res = run(cfg, args.out, log=lambda m: print(m, file=sys.stderr))
    sys.stdout.write((res.path / "summary.txt").read_text())
    print(f"# wall clock {time.time() - t0:.1f}s, artifacts in {res.path}", file=sys.stderr)
    if args.strict and not res.passed:
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcglab", description="Meta-causal graph world models on tabular environments")
    sub = ap.add_subparsers(dest="command", required=True)

    env = sub.add_parser("env", help="environment utilities")
    env_sub = env.add_subparsers(dest="env_command", required=True)
    gen = env_sub.add_parser("gen", help="write an environment descriptor (and optionally a trajectory)")
    gen.add_argument("--name", choices=["chemical", "lockbox"], default="chemical")
    gen.add_argument("--variant", choices=["full_chain", "full_fork"], default="full_chain")
    gen.add_argument("--nodes", type=int, default=5)
    gen.add_argument("--colors", type=int, default=3)
    gen.add_argument("--sharpness", type=float, default=0.9)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--trajectory", help="also write a random-action trajectory here")
    gen.add_argument("--steps", type=int, default=100)
    gen.set_defaults(func=cmd_env_gen)

    tr = sub.add_parser("train", help="train one model and save a checkpoint")
    tr.add_argument("--config")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--variant", default="mcg", choices=["mcg", "dense", "pooled", "no_mask", "no_verify"])
    tr.add_argument("--out", required=True)
    tr.add_argument("--report", help="training report CSV")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="accuracy under corruption and identifiability of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--noise", default="0,1,2")
    ev.add_argument("--samples", type=int, default=2000)
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=cmd_eval)

    rc = sub.add_parser("reach", help="minimal-k reachability table as CSV")
    rc.add_argument("--env", required=True, help="environment descriptor file")
    rc.add_argument("--intervenable", default="all", help="comma-separated node ids or 'all'")
    rc.add_argument("--start", required=True, help="comma-separated start values")
    rc.add_argument("--max-k", type=int)
    rc.add_argument("--cap", type=int, default=100_000)
    rc.set_defaults(func=cmd_reach)

    pl = sub.add_parser("plan", help="CEM planning episodes; per-episode reward CSV")
    pl.add_argument("--checkpoint")
    pl.add_argument("--env", help="descriptor; without --checkpoint the true dynamics are used")
    pl.add_argument("--goal", required=True)
    pl.add_argument("--start")
    pl.add_argument("--seeds", default="0")
    pl.add_argument("--episodes", type=int, default=1)
    pl.add_argument("--horizon", type=int, default=25)
    pl.add_argument("--noise", type=int, default=0)
    defaults = CemConfig()
    pl.add_argument("--length", type=int, default=defaults.length)
    pl.add_argument("--candidates", type=int, default=defaults.candidates)
    pl.add_argument("--elites", type=int, default=defaults.elites)
    pl.add_argument("--iterations", type=int, default=defaults.iterations)
    pl.add_argument("--exploration", type=float, default=defaults.exploration)
    pl.set_defaults(func=cmd_plan)

    rp = sub.add_parser("report", help="recompute the summary of a run directory from metrics.csv")
    rp.add_argument("run_dir")
    rp.set_defaults(func=cmd_report)

    rn = sub.add_parser("run", help="full train/eval pipeline from a config file")
    rn.add_argument("--config", required=True)
    rn.add_argument("--set", action="append", metavar="KEY=VALUE")
    rn.add_argument("--out")
    rn.add_argument("--strict", action="store_true", help="exit 1 when an acceptance check fails")
    rn.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, StateSpaceTooLarge, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
