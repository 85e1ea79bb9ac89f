import itertools
import math

import numpy as np
import pytest

from mcglab import numkit as nk
from mcglab.envsim import GoalTask, make_chemical, make_lockbox
from mcglab.harness import (ConfigError, ExperimentConfig, MetricLog, MetricRow, eval_downstream,
                            eval_prediction_accuracy, load_config, misclassification_estimate,
                            parse_overrides, read_metrics, report, run)
from mcglab.harness.runner import aggregate, summarize_log
from mcglab.planner import CemConfig, EnvModel, run_episode


class RandomPredictor:
    """Random categorical per node; the modal value is uniform over colors."""

    def __init__(self, colors, seed=0):
        self.colors = colors
        self.rng = np.random.default_rng(seed)

    def predict_proba(self, states, actions):
        states = np.asarray(states)
        return self.rng.random(states.shape + (self.colors,))


# -- accuracy ---------------------------------------------------------------------------------

def test_oracle_accuracy_is_perfect():
    env = make_chemical("full_chain", 5, 3, 0, sharpness=1.0)
    assert eval_prediction_accuracy(EnvModel(env), env, 0, 1000) == 100.0


def test_random_predictor_at_chance():
    env = make_chemical("full_fork", 5, 5, 0)
    n = 4000
    acc = eval_prediction_accuracy(RandomPredictor(5), env, 2, n)
    band = 3 * 100 * math.sqrt(0.2 * 0.8 / (n * env.p))
    assert abs(acc - 20.0) <= max(band, 2.0)


def test_accuracy_zero_samples():
    env = make_lockbox()
    with pytest.raises(ValueError):
        eval_prediction_accuracy(EnvModel(env), env, 0, 0)


# -- downstream ---------------------------------------------------------------------------------

def test_oracle_downstream_near_optimum():
    # 3-node chain with exact tables: the optimum is found by exhaustive search
    # over open-loop action sequences of the episode horizon
    env = make_chemical("full_chain", 3, 2, 0, sharpness=1.0)
    horizon = 4
    rng = nk.RandomSource(0)
    got, best = [], []
    for _ in range(10):
        start, goal = env.natural_states(2, rng)
        task = GoalTask(tuple(int(v) for v in goal), horizon)
        opt = -math.inf
        for seq in itertools.product(range(env.n_actions), repeat=horizon):
            s, total = np.asarray(start), 0.0
            for a in seq:
                s = env.step_batch(s[None], np.array([a]), rng)[0]
                total -= np.count_nonzero(s != goal)
            opt = max(opt, total)
        best.append(opt)
        got.append(run_episode(env, EnvModel(env), task, start, CemConfig(), rng))
    assert abs(np.mean(got) - np.mean(best)) <= 0.05 * abs(np.mean(best)) + 1e-9


def test_downstream_same_tasks_for_same_seed():
    env = make_lockbox()
    a = eval_downstream(EnvModel(env), env, episodes=3, seed=2)
    b = eval_downstream(EnvModel(env), env, episodes=3, seed=2)
    assert a == b and len(a.rewards) == 3


# -- misclassification --------------------------------------------------------------------------

def test_misclassification_perfect_encoder():
    assert misclassification_estimate([0.5, 0.5], np.eye(2), 1).approx == pytest.approx(0.0)


def test_misclassification_uniform_confusion():
    assert misclassification_estimate([0.5, 0.5], np.full((2, 2), 0.5), 1).approx == pytest.approx(0.25)


def test_misclassification_monte_carlo_matches_exact():
    rng = np.random.default_rng(0)
    for trial in range(20):
        U, K = rng.integers(2, 4), rng.integers(2, 4)
        mu = rng.dirichlet(np.ones(U))
        P = rng.dirichlet(np.ones(K), size=U)
        m = misclassification_estimate(mu, P, int(rng.integers(1, 6)), seed=trial)
        assert abs(m.monte_carlo - m.exact) <= 3 * m.std_error + 1e-12


def test_misclassification_invalid_simplex():
    with pytest.raises(ValueError):
        misclassification_estimate([0.6, 0.6], np.eye(2), 1)
    with pytest.raises(ValueError):
        misclassification_estimate([0.5, 0.5], [[0.5, 0.6], [1.0, 0.0]], 1)


# -- configuration --------------------------------------------------------------------------------

def test_config_typo_suggests_key():
    with pytest.raises(ConfigError, match="model.codebook_size"):
        ExperimentConfig({"model.codebok_size": "4"})


def test_config_lists_every_problem():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig({"model.codebok_size": "4", "train.stepz": "1"})
    assert len(err.value.problems) == 2


def test_config_file_and_env_seed(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("env.name = lockbox  # comment\ntrain.steps = 10\n")
    cfg = load_config(path, parse_overrides(["train.lr=0.01"]), environ={"MCG_SEED": "7"})
    assert cfg["env.name"] == "lockbox" and cfg["train.steps"] == 10
    assert cfg["train.lr"] == 0.01 and cfg.seeds == [7]


def test_noise_levels_scale_with_nodes():
    cfg = ExperimentConfig()
    assert cfg.noise_levels(10) == [2, 4, 6]
    assert cfg.noise_levels(5) == [1, 2, 3]


# -- metric log and runner ----------------------------------------------------------------------

def test_metric_log_round_trip(tmp_path):
    log = MetricLog(tmp_path / "m.csv")
    rows = [MetricRow("mcg", 0, "swap_acc", 0.975, 10), MetricRow("dense", 1, "accuracy_noise1", 51.5, 10)]
    for r in rows:
        log.append(r)
    assert read_metrics(tmp_path / "m.csv") == rows


def test_two_path_agreement():
    rows = [MetricRow("mcg", s, "swap_acc", v, 5) for s, v in [(0, 0.9), (1, 1.0), (2, 0.8)]]
    direct = aggregate({("mcg", "swap_acc"): {0: 0.9, 1: 1.0, 2: 0.8}})
    assert summarize_log(rows)[("mcg", "swap_acc")] == pytest.approx(direct[("mcg", "swap_acc")])


def _tiny(tmp_path, name):
    cfg = ExperimentConfig({"env.name": "lockbox", "model.codebook_size": "2", "train.steps": "40",
                            "train.report_every": "20", "eval.samples": "200", "eval.episodes": "2",
                            "run.seeds": "0", "eval.variants": "mcg,dense"})
    return run(cfg, tmp_path / name, log=lambda *_: None)


def test_tiny_run_deterministic(tmp_path):
    a, b = _tiny(tmp_path, "a"), _tiny(tmp_path, "b")
    assert (a.path / "metrics.csv").read_bytes() == (b.path / "metrics.csv").read_bytes()
    for name in ("summary.txt", "config.txt"):
        assert (a.path / name).exists()
    assert list((a.path / "checkpoints").glob("*.ckpt"))
    assert "mcg swap_acc" in report(a.path)
