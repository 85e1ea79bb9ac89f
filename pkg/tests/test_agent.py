import csv
import math

import numpy as np
import pytest

from conftest import trained
from mcglab import numkit as nk
from mcglab.agent import (REPORT_COLUMNS, CuriosityConfig, EffectStore, TrainConfig, candidate_scores,
                          curiosity_reward, pool_effects, select_intervention, state_patterns, train,
                          verify_interventions)
from mcglab.envsim import make_chemical, make_lockbox
from mcglab.planner import EnvModel
from mcglab.worldmodel import WorldModel


def model_with_logits(cards, logits, K=1):
    """Model whose decoder emits the fixed ``logits`` matrix for every code."""
    m = WorldModel(cards, K=K, seed=0)
    m.dec_w2.data[:] = 0.0
    m.dec_b2.data[:] = np.asarray(logits, dtype=float).ravel()
    return m


class OracleModel(EnvModel):
    """Ground-truth predictor with the attributes the reward code reads."""


# -- curiosity rewards --------------------------------------------------------------------------

def test_edge_entropy_zero_for_saturated_graph():
    m = model_with_logits((2, 2, 2), np.where(np.eye(3) > 0, 0.0, 20.0))
    r = curiosity_reward(m, ((0, 0, 0), 0, (0, 0, 0)), CuriosityConfig())
    assert r == pytest.approx(0.0, abs=1e-3)


def test_edge_entropy_half_probabilities():
    m = model_with_logits((2, 2, 2), np.zeros((3, 3)))
    r = curiosity_reward(m, ((0, 0, 0), 0, (0, 0, 0)), CuriosityConfig())
    assert r == pytest.approx(6 * math.log(2), abs=1e-6)


def test_predictive_nll_perfect_vs_random():
    env = make_chemical("full_chain", 4, 3, 0, sharpness=1.0)
    cfg = CuriosityConfig(kind="predictive_nll")
    rng = nk.RandomSource(0)
    s = env.random_states(1000, rng)
    a = rng.integers(0, env.n_actions, size=1000)
    nxt = env.step_batch(s, a, rng)
    perfect = OracleModel(env)
    random_model = WorldModel.for_env(env, K=2, seed=1)
    good = [curiosity_reward(perfect, (s[k], a[k], nxt[k]), cfg) for k in range(1000)]
    bad = [curiosity_reward(random_model, (s[k], a[k], nxt[k]), cfg) for k in range(1000)]
    assert np.mean(good) == pytest.approx(0.0, abs=1e-4)
    assert np.mean(bad) > np.mean(good) + 1.0


@pytest.mark.parametrize("kind", ["edge_entropy", "pred_uncertainty", "feature_discrepancy", "predictive_nll"])
def test_rewards_non_negative(kind):
    env = make_lockbox()
    m = WorldModel.for_env(env, K=2, seed=2)
    rng = nk.RandomSource(1)
    for _ in range(20):
        rec = env.step(env.reset(rng), int(rng.integers(env.n_actions)), rng)
        assert curiosity_reward(m, rec, CuriosityConfig(kind=kind)) >= 0.0


def test_unknown_reward_kind():
    with pytest.raises(ValueError):
        CuriosityConfig(kind="novelty")
    with pytest.raises(ValueError):
        CuriosityConfig(exploration=1.5)


# -- selection ------------------------------------------------------------------------------

def test_single_candidate_returned():
    m = WorldModel((2, 2, 2), K=2)
    assert select_intervention(m, (0, 0, 0), [4], CuriosityConfig(), nk.RandomSource(0)) == 4


def test_uncertain_edge_candidate_chosen():
    logits = np.full((3, 3), 20.0)
    logits[0, 1] = 0.0                         # the only uncertain edge leaves node 0
    m = model_with_logits((2, 2, 2), logits)
    do0, do1 = 1, 3                             # do(0=1), do(1=1)
    cfg = CuriosityConfig(exploration=0.0)
    for seed in range(10):
        assert select_intervention(m, (0, 0, 0), [do1, do0], cfg, nk.RandomSource(seed)) == do0


def test_pure_exploration_is_uniform():
    m = WorldModel((2, 2, 2), K=2)
    cands = [0, 1, 2, 3, 6]
    rng = nk.RandomSource(2)
    picks = [select_intervention(m, (1, 0, 1), cands, CuriosityConfig(exploration=1.0), rng) for _ in range(10_000)]
    freq = np.array([picks.count(c) for c in cands]) / 10_000
    assert np.all(np.abs(freq - 0.2) <= 3 * math.sqrt(0.2 * 0.8 / 10_000))


def test_selection_invariant_to_reward_scale():
    m = WorldModel((3, 3, 3), K=2, seed=5)
    cands = list(range(m.n_actions))
    scores = candidate_scores(m, (0, 1, 2), cands, CuriosityConfig())
    chosen = select_intervention(m, (0, 1, 2), cands, CuriosityConfig(exploration=0.0), nk.RandomSource(0))
    for c in (0.01, 7.0):
        assert scores[cands.index(chosen)] * c == pytest.approx((scores * c).max())


def test_empty_candidates():
    with pytest.raises(ValueError):
        select_intervention(WorldModel((2, 2)), (0, 0), [], CuriosityConfig(), nk.RandomSource(0))


# -- verification -----------------------------------------------------------------------------

def _delta(env, states, samples=10_000):
    m = WorldModel.for_env(env, K=1)
    cfg = CuriosityConfig(samples=samples)
    return verify_interventions(env, m, config=cfg, states=states, rng=nk.RandomSource(3))[0].delta


def test_unlocked_push_door_effect_large():
    env = make_lockbox()
    d = _delta(env, [(1, 0, 0), (1, 1, 1)])
    assert abs(d[1, 2]) >= 1.0


def test_locked_push_door_effect_vanishes():
    env = make_lockbox()
    d = _delta(env, [(0, 0, 0), (0, 1, 1)])
    assert abs(d[1, 2]) <= 0.1


def test_independent_pair_effect_vanishes():
    env = make_lockbox()
    d = _delta(env, [(0, 0, 0), (1, 1, 0)])
    assert abs(d[0, 1]) <= 0.1


def test_verification_recovers_active_subgraph():
    env = make_chemical("full_chain", 4, 3, 1, sharpness=1.0)
    rng = nk.RandomSource(4)
    states = env.natural_states(6, rng)
    states[:, 0] = 0                             # chain context
    d = _delta(env, states)
    truth = env.subgraph("chain").entries
    off = ~np.eye(4, dtype=bool)
    assert np.array_equal((np.abs(d) > 0.3)[off], truth.astype(bool)[off])


def test_too_few_samples_flagged_unestimated():
    env = make_lockbox()
    m = WorldModel.for_env(env, K=1)
    est = verify_interventions(env, m, config=CuriosityConfig(samples=10, min_samples=50),
                               states=[(1, 0, 0)], rng=nk.RandomSource(0))[0]
    assert np.isnan(est.delta).all()


def test_pool_effects_count_weighted():
    delta = np.array([np.full((2, 2), 1.0), np.full((2, 2), 4.0)])
    paired = np.array([[100.0, 100.0], [300.0, 300.0]])
    est = pool_effects(delta, paired, np.array([0, 0]), K=1)[0]
    assert est.delta[0, 1] == pytest.approx((100 * 1 + 300 * 4) / 400)
    assert np.isnan(est.delta[0, 0])


def test_state_patterns_threshold_and_mask():
    delta = np.array([[[0.0, 0.5], [0.1, 0.0]]])
    pat = state_patterns(delta, np.array([[60.0, 10.0]]), tau=0.3, min_samples=50)
    assert pat[0, 0, 1] == 1.0 and np.isnan(pat[0, 1, 0]) and np.isnan(pat[0, 0, 0])


def test_effect_store_grows():
    store = EffectStore((2, 2), capacity=1)
    for s in [(0, 0), (0, 1), (1, 0)]:
        store.add_observational(s, [s])
    assert len(store) == 3


# -- training ---------------------------------------------------------------------------------

def test_zero_step_train_is_noop():
    env = make_lockbox()
    m = WorldModel.for_env(env, K=2, seed=0)
    before = {k: v.data.copy() for k, v in m.params.items()}
    report = train(env, m, TrainConfig(steps=0))
    assert len(report) == 0
    assert all(np.array_equal(before[k], m.params[k].data) for k in before)


def test_train_lockbox_end_to_end():
    _, _, report = trained("lockbox", 2, 0)
    last = report.last()
    assert last["meta_acc"] >= 0.95
    assert all(int(v) <= 1 for v in last["shd_per_code"].split(";"))


def test_train_chain_context_subgraph():
    env, model, _ = trained("full_chain", 2, 0)
    from mcglab.harness import eval_identifiability
    assert eval_identifiability(model, env, 1000, 0)["shd_context0"] <= 2


def test_train_is_deterministic():
    env = make_lockbox()
    runs = []
    for _ in range(2):
        m = WorldModel.for_env(env, K=2, seed=1)
        train(env, m, TrainConfig(steps=60, lr=1e-3, seed=1, report_every=30))
        runs.append(m.codebook.data.copy())
    assert np.array_equal(*runs)


def test_report_csv_columns(tmp_path):
    _, _, report = trained("lockbox", 2, 0)
    report.to_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == REPORT_COLUMNS and len(rows) == len(report) + 1


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch=0)
    with pytest.raises(ValueError):
        train(make_lockbox(), WorldModel((2, 2, 2)), TrainConfig(steps=1, reset="sideways"))
