"""Flat ``key = value`` experiment configuration with dotted keys.

Lines may carry ``#`` comments.  Every key must be one of :data:`DEFAULTS`;
validation collects all problems before raising, and unknown keys get a
nearest-name suggestion.  ``MCG_SEED`` in the environment overrides
``run.seeds``.
"""
from __future__ import annotations

import difflib
import math
import os
from pathlib import Path

from ..agent import REWARD_KINDS

VARIANTS = ("mcg", "dense", "pooled", "no_mask", "no_verify")

# every key and its default, as text; the parse step below types them
DEFAULTS: dict[str, str] = {
    "env.name": "chemical",
    "env.variant": "full_chain",
    "env.nodes": "5",
    "env.colors": "3",
    "env.sharpness": "0.9",
    "model.codebook_size": "4",
    "model.embed_dim": "16",
    "model.hidden": "64",
    "model.lambda_sparse": "0.001",
    "model.lambda_mask": "1.0",
    "model.lambda_quant": "1.0",
    "model.beta": "0.25",
    "model.lambda1": "1.0",
    "model.lambda2": "1.0",
    "agent.reward": "edge_entropy",
    "agent.exploration": "0.05",
    "agent.tau": "0.3",
    "agent.samples": "50",
    "agent.min_samples": "50",
    "agent.intervenable": "all",
    "planner.length": "3",
    "planner.candidates": "64",
    "planner.elites": "32",
    "planner.iterations": "5",
    "planner.exploration": "0.05",
    "train.steps": "15000",
    "train.batch": "256",
    "train.lr": "0.0001",
    "train.n_envs": "8",
    "train.episode_len": "25",
    "train.reset": "natural",
    "train.report_every": "500",
    "train.fuse_every": "2000",
    "train.sim_threshold": "0.98",
    "train.dead_patience": "1000",
    "eval.noise_levels": "auto",
    "eval.samples": "2000",
    "eval.episodes": "10",
    "eval.horizon": "25",
    "eval.variants": "mcg,dense",
    "run.seeds": "0,1,2,3,4",
    "run.out": "runs/default",
    "accept.meta_acc": "0.95",
    "accept.shd": "2",
    "accept.margin": "10",
}

_INT = {"env.nodes", "env.colors", "model.codebook_size", "model.embed_dim", "model.hidden",
        "agent.samples", "agent.min_samples", "planner.length", "planner.candidates",
        "planner.elites", "planner.iterations", "train.steps", "train.batch", "train.n_envs",
        "train.episode_len", "train.report_every", "train.fuse_every", "train.dead_patience",
        "eval.samples", "eval.episodes", "eval.horizon", "accept.shd"}
_FLOAT = {"env.sharpness", "model.lambda_sparse", "model.lambda_mask", "model.lambda_quant",
          "model.beta", "model.lambda1", "model.lambda2", "agent.exploration", "agent.tau",
          "planner.exploration", "train.lr", "train.sim_threshold", "accept.meta_acc",
          "accept.margin"}
_CHOICES = {"env.name": ("chemical", "lockbox"), "env.variant": ("full_chain", "full_fork"),
            "agent.reward": REWARD_KINDS, "train.reset": ("natural", "uniform")}
_INT_LISTS = {"run.seeds", "eval.noise_levels", "agent.intervenable"}


class ConfigError(ValueError):
    """Raised with every offending key listed, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


def parse_text(text: str) -> dict[str, str]:
    """Raw ``key -> value`` pairs; later lines win."""
    out: dict[str, str] = {}
    problems = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            problems.append(f"line {n}: expected 'key = value', got {raw.strip()!r}")
            continue
        out[key.strip()] = value.strip()
    if problems:
        raise ConfigError(problems)
    return out


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(" ", "").split(",") if v]


class ExperimentConfig:
    """Validated configuration; values are reachable as ``cfg["train.steps"]``."""

    def __init__(self, values: dict[str, str] | None = None, source: str = "<defaults>"):
        self.source = source
        self.raw = dict(DEFAULTS)
        self.raw.update(values or {})
        self.values = self._validate(values or {})

    def _validate(self, given: dict[str, str]) -> dict:
        problems = []
        for key in given:
            if key not in DEFAULTS:
                close = difflib.get_close_matches(key, list(DEFAULTS), n=1, cutoff=0.5)
                hint = f"; did you mean {close[0]!r}?" if close else ""
                problems.append(f"unknown key {key!r}{hint}")
        typed: dict = {}
        for key, text in self.raw.items():
            if key not in DEFAULTS:
                continue
            try:
                typed[key] = self._convert(key, text)
            except ValueError as exc:
                problems.append(f"{key}: {exc}")
        if not problems:
            problems.extend(self._check(typed))
        if problems:
            raise ConfigError(problems)
        return typed

    @staticmethod
    def _convert(key: str, text: str):
        if key in _INT:
            return int(text)
        if key in _FLOAT:
            v = float(text)
            if not math.isfinite(v):
                raise ValueError(f"not a finite number: {text!r}")
            return v
        if key in _CHOICES:
            if text not in _CHOICES[key]:
                raise ValueError(f"{text!r} not one of {', '.join(_CHOICES[key])}")
            return text
        if key == "eval.noise_levels" and text == "auto":
            return "auto"
        if key == "agent.intervenable" and text == "all":
            return None
        if key in _INT_LISTS:
            vals = _int_list(text)
            if not vals:
                raise ValueError("empty list")
            return vals
        if key == "eval.variants":
            names = [v for v in text.replace(" ", "").split(",") if v]
            bad = [v for v in names if v not in VARIANTS]
            if bad or not names:
                raise ValueError(f"unknown variant(s) {bad}; expected from {', '.join(VARIANTS)}")
            return names
        return text

    @staticmethod
    def _check(v: dict) -> list[str]:
        out = []
        positive = ["env.nodes", "model.codebook_size", "model.embed_dim", "model.hidden",
                    "planner.length", "planner.candidates", "planner.elites", "planner.iterations",
                    "train.batch", "train.n_envs", "train.episode_len", "train.report_every",
                    "eval.samples", "eval.horizon", "agent.samples"]
        out += [f"{k}: must be >= 1" for k in positive if v[k] < 1]
        out += [f"{k}: must be >= 0" for k in ("train.steps", "eval.episodes", "model.lambda_sparse",
                                               "model.lambda_mask", "model.lambda_quant", "agent.tau")
                if v[k] < 0]
        if v["env.colors"] < 2:
            out.append("env.colors: must be >= 2")
        if v["planner.elites"] > v["planner.candidates"]:
            out.append("planner.elites: must not exceed planner.candidates")
        if v["train.lr"] <= 0:
            out.append("train.lr: must be > 0")
        for k in ("agent.exploration", "planner.exploration"):
            if not 0.0 <= v[k] <= 1.0:
                out.append(f"{k}: must be in [0, 1]")
        if not 0.0 < v["env.sharpness"] <= 1.0:
            out.append("env.sharpness: must be in (0, 1]")
        p = 3 if v["env.name"] == "lockbox" else v["env.nodes"]
        if v["eval.noise_levels"] != "auto" and any(not 0 <= n <= p for n in v["eval.noise_levels"]):
            out.append(f"eval.noise_levels: each level must be in [0, {p}]")
        if v["agent.intervenable"] is not None and any(not 0 <= i < p for i in v["agent.intervenable"]):
            out.append(f"agent.intervenable: node ids must be in [0, {p})")
        return out

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seeds(self) -> list[int]:
        return list(self.values["run.seeds"])

    def noise_levels(self, p: int) -> list[int]:
        """Explicit levels, or ceil(p * {0.2, 0.4, 0.6}) (2/4/6 at p = 10)."""
        if self.values["eval.noise_levels"] != "auto":
            return list(self.values["eval.noise_levels"])
        return sorted({min(p, math.ceil(p * f - 1e-9)) for f in (0.2, 0.4, 0.6)})

    def env_descriptor(self, seed: int) -> dict[str, str]:
        d = {"env.name": self["env.name"], "env.seed": str(seed)}
        if self["env.name"] == "chemical":
            d.update({"env.variant": self["env.variant"], "env.nodes": str(self["env.nodes"]),
                      "env.colors": str(self["env.colors"]), "env.sharpness": repr(self["env.sharpness"])})
        return d

    def to_text(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in DEFAULTS)


def load_config(path=None, overrides: dict[str, str] | None = None, environ=None) -> ExperimentConfig:
    """Read ``path`` (or start from defaults), apply ``overrides`` then ``MCG_SEED``."""
    environ = os.environ if environ is None else environ
    values = parse_text(Path(path).read_text()) if path is not None else {}
    values.update(overrides or {})
    if environ.get("MCG_SEED"):
        values["run.seeds"] = environ["MCG_SEED"]
    return ExperimentConfig(values, str(path) if path is not None else "<defaults>")


def parse_overrides(items) -> dict[str, str]:
    """``["a.b=1", ...]`` from repeated ``--set`` flags."""
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError([f"override {item!r} is not key=value"])
        out[key.strip()] = value.strip()
    return out
