"""Shared fixtures: trained models are cached for the whole session so the
module tests and the acceptance suite reuse the same runs."""
from __future__ import annotations

import functools

from mcglab.agent import TrainConfig, train
from mcglab.envsim import make_chemical, make_lockbox
from mcglab.worldmodel import WorldModel, dense_baseline

# desk budgets; the learning rate is raised from the default so runs fit in minutes
LR = 1e-3
LOCKBOX_STEPS = 2000
CHEMICAL_STEPS = 3000


def make(env_name: str, seed: int):
    if env_name == "lockbox":
        return make_lockbox(seed)
    return make_chemical(env_name, 5, 3, seed)


@functools.lru_cache(maxsize=None)
def trained(env_name: str, K: int, seed: int, variant: str = "mcg", steps: int | None = None):
    """(env, model, report) for one training run; ``K=0`` means the dense baseline."""
    env = make(env_name, seed)
    if steps is None:
        steps = LOCKBOX_STEPS if env_name == "lockbox" else CHEMICAL_STEPS
    if variant == "dense":
        model = dense_baseline(env.cards, seed=seed)
    else:
        model = WorldModel.for_env(env, K=K, seed=seed, lambda_mask=0.0 if variant == "no_mask" else 1.0)
    cfg = TrainConfig(steps=steps, lr=LR, seed=seed, report_every=500,
                      curiosity=variant != "no_verify", verify=variant != "no_verify")
    report = train(env, model, cfg)
    return env, model, report


# acceptance criteria report: one line per criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    print(ACCEPTANCE[criterion])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
