"""Train -> evaluate pipeline over seeds and model variants.

Artifacts in the run directory:

* ``metrics.csv``: append-only rows ``run_id,seed,metric,value,step``
  (``run_id`` is the variant name),
* ``summary.txt``: per-variant aggregates recomputed from ``metrics.csv``,
  followed by the acceptance checks,
* ``skeletons/*.txt`` and ``checkpoints/*.ckpt``.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..agent import CuriosityConfig, TrainConfig, train
from ..envsim import TabularEnv, make_env
from ..planner import CemConfig
from ..worldmodel import WorldModel, dense_baseline, save
from .config import ExperimentConfig
from .evaluate import eval_downstream, eval_identifiability, eval_prediction_accuracy

METRIC_COLUMNS = ["run_id", "seed", "metric", "value", "step"]
# metrics logged once per (variant, seed) after training; the summary aggregates these
FINAL_PREFIXES = ("accuracy_noise", "swap_acc", "obs_acc", "distinct_skeletons", "shd_context",
                  "codes_in_use_final", "episode_reward_noise")


@dataclass
class MetricRow:
    run_id: str
    seed: int
    metric: str
    value: float
    step: int

    def as_list(self) -> list[str]:
        return [self.run_id, str(self.seed), self.metric, repr(float(self.value)), str(self.step)]


class MetricLog:
    """Single-writer, append-only CSV log."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(METRIC_COLUMNS)
        self.rows: list[MetricRow] = []

    def append(self, row: MetricRow) -> None:
        self.rows.append(row)
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(row.as_list())


def read_metrics(path) -> list[MetricRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [MetricRow(r["run_id"], int(r["seed"]), r["metric"], float(r["value"]), int(r["step"]))
                for r in reader]


# -- model variants ------------------------------------------------------------

def build_model(cfg: ExperimentConfig, env: TabularEnv, variant: str, seed: int) -> WorldModel:
    common = dict(d=cfg["model.embed_dim"], hidden=cfg["model.hidden"], seed=seed)
    if variant == "dense":
        return dense_baseline(env.cards, **common)
    K = 1 if variant == "pooled" else cfg["model.codebook_size"]
    return WorldModel(env.cards, K=K, lambda_sparse=cfg["model.lambda_sparse"],
                      lambda_mask=0.0 if variant == "no_mask" else cfg["model.lambda_mask"],
                      lambda_quant=cfg["model.lambda_quant"], beta=cfg["model.beta"],
                      lambda1=cfg["model.lambda1"], lambda2=cfg["model.lambda2"], **common)


def train_config(cfg: ExperimentConfig, variant: str, seed: int) -> TrainConfig:
    cur = CuriosityConfig(kind=cfg["agent.reward"], exploration=cfg["agent.exploration"],
                          tau=cfg["agent.tau"], samples=cfg["agent.samples"],
                          min_samples=cfg["agent.min_samples"])
    inter = cfg["agent.intervenable"]
    return TrainConfig(steps=cfg["train.steps"], batch=cfg["train.batch"], lr=cfg["train.lr"],
                       n_envs=cfg["train.n_envs"], episode_len=cfg["train.episode_len"],
                       curiosity=variant != "no_verify", verify=variant != "no_verify",
                       fuse_every=cfg["train.fuse_every"], sim_threshold=cfg["train.sim_threshold"],
                       dead_patience=cfg["train.dead_patience"], report_every=cfg["train.report_every"],
                       intervenable=None if inter is None else tuple(inter), seed=seed,
                       reset=cfg["train.reset"], curiosity_cfg=cur)


def cem_config(cfg: ExperimentConfig) -> CemConfig:
    return CemConfig(cfg["planner.length"], cfg["planner.candidates"], cfg["planner.elites"],
                     cfg["planner.iterations"], cfg["planner.exploration"])


# -- one (variant, seed) -----------------------------------------------------------

def evaluate_model(cfg: ExperimentConfig, env: TabularEnv, model: WorldModel, variant: str,
                   seed: int) -> dict[str, float | list[float]]:
    """Final metrics of one trained model, keyed by metric name."""
    out: dict = {}
    levels = cfg.noise_levels(env.p)
    for k in levels:
        out[f"accuracy_noise{k}"] = eval_prediction_accuracy(model, env, k, cfg["eval.samples"], seed)
    if cfg["eval.episodes"] > 0:
        k = min(levels)
        res = eval_downstream(model, env, cem_config(cfg), cfg["eval.episodes"], k, seed,
                              cfg["eval.horizon"])
        out[f"episode_reward_noise{k}"] = res.rewards
    if model.use_codebook:
        ident = eval_identifiability(model, env, cfg["eval.samples"], seed)
        out["swap_acc"], out["obs_acc"] = ident["swap_acc"], ident["obs_acc"]
        out["distinct_skeletons"] = ident["distinct_skeletons"]
        out["codes_in_use_final"] = ident["codes_in_use"]
        for key, v in ident.items():
            if key.startswith("shd_context"):
                out[key] = v
    return out


def _dump_skeletons(directory: Path, env: TabularEnv, model: WorldModel, variant: str, seed: int):
    directory.mkdir(exist_ok=True)
    for m, name in enumerate(env.meta_ids):
        path = directory / f"truth_{name}.txt"
        if not path.exists():
            env.subgraph(m).save(path)
    if not model.use_codebook:
        return
    used = np.nonzero(model.usage > 0)[0] if model.usage.any() else range(model.K)
    for u in used:
        model.skeleton(int(u)).save(directory / f"{variant}_seed{seed}_code{int(u)}.txt")


# -- aggregation ---------------------------------------------------------------------

def _per_seed(values) -> float:
    return float(np.mean(values)) if isinstance(values, list) else float(values)


def aggregate(per_seed: dict[tuple[str, str], dict[int, float]]) -> dict[tuple[str, str], tuple[float, float, int]]:
    """(variant, metric) -> (mean, sample std, seed count)."""
    out = {}
    for key, by_seed in per_seed.items():
        vals = np.array([by_seed[s] for s in sorted(by_seed)], dtype=np.float64)
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[key] = (float(vals.mean()), std, len(vals))
    return out


def summarize_log(rows: list[MetricRow]) -> dict[tuple[str, str], tuple[float, float, int]]:
    """Independent aggregation pass over the raw log: final metrics only,
    per-episode rewards averaged within a seed first."""
    grouped: dict = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r.metric.startswith(FINAL_PREFIXES):
            grouped[(r.run_id, r.metric)][r.seed].append(r.value)
    return aggregate({k: {s: float(np.mean(v)) for s, v in d.items()} for k, d in grouped.items()})


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def acceptance_checks(cfg: ExperimentConfig, n_meta: int,
                      per_seed: dict[tuple[str, str], dict[int, float]]) -> list[Check]:
    """Thresholds from the ``accept.*`` keys; seed-wise checks need 4/5 of seeds."""
    checks = []

    def frac(variant, metric, ok) -> tuple[float, int] | None:
        vals = per_seed.get((variant, metric))
        if not vals:
            return None
        good = sum(1 for v in vals.values() if ok(v))
        return good / len(vals), len(vals)

    K = cfg["model.codebook_size"]
    for variant in cfg["eval.variants"]:
        k_eff = 1 if variant == "pooled" else K
        if variant == "dense" or k_eff < n_meta:
            continue
        metric = "swap_acc" if k_eff == n_meta else "obs_acc"
        r = frac(variant, metric, lambda v: v >= cfg["accept.meta_acc"])
        if r:
            checks.append(Check(f"{variant} {metric} >= {cfg['accept.meta_acc']}", r[0] >= 0.8,
                                f"{r[0] * r[1]:.0f}/{r[1]} seeds"))
    if "mcg" in cfg["eval.variants"]:
        shd_keys = [k for k in per_seed if k[0] == "mcg" and k[1].startswith("shd_context")]
        if shd_keys:
            seeds = sorted(per_seed[shd_keys[0]])
            good = sum(1 for s in seeds if max(per_seed[k][s] for k in shd_keys) <= cfg["accept.shd"])
            checks.append(Check(f"mcg per-context shd <= {cfg['accept.shd']}", good >= 0.8 * len(seeds),
                                f"{good}/{len(seeds)} seeds"))
    if {"mcg", "dense"} <= set(cfg["eval.variants"]):
        k = min(cfg.noise_levels(3 if cfg["env.name"] == "lockbox" else cfg["env.nodes"]))
        a = per_seed.get(("mcg", f"accuracy_noise{k}"))
        b = per_seed.get(("dense", f"accuracy_noise{k}"))
        if a and b:
            gap = float(np.mean(list(a.values())) - np.mean(list(b.values())))
            checks.append(Check(f"mcg - dense accuracy at noise {k} >= {cfg['accept.margin']}",
                                gap >= cfg["accept.margin"], f"gap {gap:.2f} points"))
    return checks


def format_summary(cfg: ExperimentConfig, summary: dict, checks: list[Check]) -> str:
    lines = [f"# config {cfg.source}", "run_id metric mean std n"]
    for (variant, metric), (mean, std, n) in sorted(summary.items()):
        lines.append(f"{variant} {metric} {mean:.6g} {std:.6g} {n}")
    lines.append("# acceptance")
    for c in checks:
        lines.append(f"{'PASS' if c.passed else 'FAIL'} {c.name} ({c.detail})")
    return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    path: Path
    summary: dict
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def run(cfg: ExperimentConfig, out_dir=None, log=print) -> RunResult:
    """Execute every (seed, variant) and write the artifacts."""
    out = Path(out_dir if out_dir is not None else cfg["run.out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    metrics = MetricLog(out / "metrics.csv")
    per_seed: dict = defaultdict(dict)
    n_meta = 0
    for seed in cfg.seeds:
        desc = cfg.env_descriptor(seed)
        env = make_env(desc)
        n_meta = len(env.meta_ids)
        for variant in cfg["eval.variants"]:
            log(f"seed {seed} variant {variant}: training {cfg['train.steps']} steps")
            model = build_model(cfg, env, variant, seed)
            report = train(env, model, train_config(cfg, variant, seed))
            for row in report.rows:
                for key in ("loss_total", "loss_mle", "loss_sparse", "loss_mask", "loss_quant",
                            "reward_mean", "meta_acc", "codes_in_use"):
                    metrics.append(MetricRow(variant, seed, key, row[key], row["step"]))
            final = evaluate_model(cfg, env, model, variant, seed)
            for key, value in final.items():
                if isinstance(value, list):
                    for k, v in enumerate(value):
                        metrics.append(MetricRow(variant, seed, key, v, k))
                else:
                    metrics.append(MetricRow(variant, seed, key, value, model.step))
                per_seed[(variant, key)][seed] = _per_seed(value)
            save(model, out / "checkpoints" / f"{variant}_seed{seed}.ckpt", desc)
            _dump_skeletons(out / "skeletons", env, model, variant, seed)
    direct = aggregate(per_seed)
    recomputed = summarize_log(read_metrics(out / "metrics.csv"))
    _agree(direct, recomputed)
    checks = acceptance_checks(cfg, n_meta, per_seed)
    (out / "summary.txt").write_text(format_summary(cfg, recomputed, checks))
    return RunResult(out, recomputed, checks)


def _agree(a: dict, b: dict) -> None:
    """Two-path agreement between in-memory and log-derived aggregates."""
    if set(a) != set(b):
        raise RuntimeError(f"summary key mismatch: {sorted(set(a) ^ set(b))}")
    for key in a:
        for x, y in zip(a[key], b[key]):
            if not math.isclose(x, y, rel_tol=1e-9, abs_tol=1e-9):
                raise RuntimeError(f"summary disagreement for {key}: {a[key]} vs {b[key]}")


def report(run_dir) -> str:
    """Summary text recomputed from ``metrics.csv`` of an existing run."""
    rows = read_metrics(Path(run_dir) / "metrics.csv")
    summary = summarize_log(rows)
    lines = ["run_id metric mean std n"]
    for (variant, metric), (mean, std, n) in sorted(summary.items()):
        lines.append(f"{variant} {metric} {mean:.6g} {std:.6g} {n}")
    return "\n".join(lines) + "\n"
