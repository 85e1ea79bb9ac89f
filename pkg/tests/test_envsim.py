import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcglab import numkit as nk
from mcglab.envsim import (GoalTask, corrupt, goal_reward, make_chemical, make_env, make_lockbox,
                           read_descriptor, read_trajectory, write_descriptor, write_trajectory)
from mcglab.metagraph import is_acyclic, shd

LOCKED, UNLOCKED = 0, 1


def test_chemical_fork_p10_structure():
    env = make_chemical("full_fork", 10, 5, 0)
    assert len(env.meta_ids) == 2
    assert env.subgraph("full").n_edges() == 45
    assert env.subgraph("fork").n_edges() == 9


def test_chemical_chain_rule_on_red_root():
    env = make_chemical("full_chain", 3, 2, 0)
    assert env.meta_rule((0, 1, 0)) == "chain"
    assert env.meta_rule((1, 1, 0)) == "full"


def test_chemical_trajectories_reproducible():
    def roll():
        env = make_chemical("full_chain", 5, 3, 4)
        rng = nk.RandomSource(9, "traj")
        s, out = env.reset(rng), []
        for _ in range(30):
            rec = env.step(s, int(rng.integers(env.n_actions)), rng)
            out.append(rec)
            s = rec.next_state
        return out
    assert roll() == roll()


@pytest.mark.parametrize("kw", [dict(p=2), dict(colors=1), dict(variant="star")])
def test_chemical_invalid_sizes(kw):
    args = dict(variant="full_chain", p=5, colors=3)
    args.update(kw)
    with pytest.raises(ValueError):
        make_chemical(args["variant"], args["p"], args["colors"], 0)


def test_subgraphs_acyclic_and_distinct():
    for v in ("full_fork", "full_chain"):
        env = make_chemical(v, 5, 3, 0)
        graphs = [env.subgraph(u) for u in env.meta_ids]
        assert all(is_acyclic(g.entries) for g in graphs)
        assert shd(graphs[0], graphs[1]).shd > 0


def test_lockbox_unlocked_push_opens():
    env = make_lockbox()
    rng = nk.RandomSource(0)
    for door in (0, 1):
        for push in (0, 1):
            nxt = env.step((UNLOCKED, push, door), env.action_id(1, 1), rng).next_state
            assert nxt[2] == 1


def test_lockbox_locked_push_leaves_door():
    env = make_lockbox()
    rng = nk.RandomSource(0)
    for door in (0, 1):
        rec = env.step((LOCKED, 0, door), env.action_id(1, 1), rng)
        assert rec.next_state[2] == door and rec.true_meta == "locked"


def test_lockbox_lock_intervention_leaves_push_and_door():
    env = make_lockbox()
    states = env.all_states()
    for v in (0, 1):
        do = env.transition_probs(states, np.full(len(states), env.action_id(0, v)))
        noop = env.transition_probs(states, np.full(len(states), env.noop))
        np.testing.assert_array_equal(do[:, 1:], noop[:, 1:])


def test_chain_cascade_resamples_downstream_only():
    env = make_chemical("full_chain", 5, 3, 0, sharpness=1.0, propagation="cascade")
    tables = make_chemical("full_chain", 5, 3, 0, sharpness=1.0)   # same tables, exact probs
    rng = nk.RandomSource(1)
    s = (0, 2, 1, 0, 2)
    for c in range(3):
        nxt = env.step(s, env.action_id(1, c), rng).next_state
        # oracle: walk the chain with the deterministic tables
        expect = list(s)
        expect[1] = c
        for j in range(2, 5):
            expect[j] = int(tables.transition_probs([tuple(expect)], [env.noop])[0, j].argmax())
        assert nxt == tuple(expect)
        assert nxt[0] == s[0]


def test_lagged_step_matches_tables():
    env = make_chemical("full_chain", 5, 3, 0, sharpness=1.0)
    rng = nk.RandomSource(2)
    s = (0, 2, 1, 0, 2)
    nxt = env.step(s, env.action_id(1, 0), rng).next_state
    assert nxt[1] == 0 and nxt[0] == 0
    probs = env.transition_probs([s], [env.action_id(1, 0)])[0]
    assert nxt == tuple(int(v) for v in probs.argmax(axis=1))


def test_self_value_intervention_is_fixed_point_with_deterministic_tables():
    env = make_chemical("full_fork", 4, 3, 2, sharpness=1.0, propagation="cascade")
    rng = nk.RandomSource(3)
    s = np.array([0, 0, 0, 0])
    for _ in range(5):
        s = env.step_batch(s[None], [env.noop], rng)[0]
    for i in range(env.p):
        a = env.action_id(i, int(s[i]))
        assert np.array_equal(env.step_batch(s[None], [a], rng), env.step_batch(s[None], [a], rng))


def test_intervention_forces_value():
    env = make_chemical("full_chain", 5, 3, 0)
    rng = nk.RandomSource(4)
    states = env.random_states(500, rng)
    for i in range(env.p):
        for v in range(3):
            nxt = env.step_batch(states, np.full(500, env.action_id(i, v)), rng)
            assert np.all(nxt[:, i] == v)


def test_out_of_range_action():
    env = make_lockbox()
    with pytest.raises(ValueError):
        env.step((0, 0, 0), 99, nk.RandomSource(0))


def test_corrupt_examples():
    env = make_chemical("full_chain", 5, 3, 0)
    s = (1, 2, 0, 1, 2)
    assert corrupt(env, s, 0, nk.RandomSource(0)) == s
    a = corrupt(env, s, 4, nk.RandomSource(5, "c"))
    assert a[0] == s[0]
    assert a == corrupt(env, s, 4, nk.RandomSource(5, "c"))
    with pytest.raises(ValueError):
        corrupt(env, s, 6, nk.RandomSource(0))


def test_corrupt_all_nonroot_is_uniform():
    env = make_chemical("full_chain", 4, 3, 0)
    rng = nk.RandomSource(6)
    vals = np.array([corrupt(env, (0, 0, 0, 0), 3, rng) for _ in range(3000)])
    assert np.all(vals[:, 0] == 0)
    freq = np.bincount(vals[:, 1:].ravel(), minlength=3) / vals[:, 1:].size
    assert np.all(np.abs(freq - 1 / 3) < 0.03)


def test_goal_reward_examples():
    t = GoalTask(tuple(range(10)))
    assert goal_reward(tuple(range(10)), t) == 0
    s = list(range(10))
    s[1], s[4], s[7] = 9, 9, 0
    assert goal_reward(s, t) == -3
    with pytest.raises(ValueError):
        GoalTask((0,), horizon=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=3, max_size=8), st.data())
def test_goal_reward_permutation_equivariant(state, data):
    target = data.draw(st.lists(st.integers(0, 4), min_size=len(state), max_size=len(state)))
    perm = data.draw(st.permutations(range(len(state))))
    r = goal_reward(state, GoalTask(tuple(target)))
    rp = goal_reward([state[k] for k in perm], GoalTask(tuple(target[k] for k in perm)))
    assert r == rp


def test_meta_rule_consistency_in_records():
    env = make_chemical("full_fork", 5, 3, 1)
    rng = nk.RandomSource(7)
    for _ in range(200):
        s = env.reset(rng)
        rec = env.step(s, int(rng.integers(env.n_actions)), rng)
        assert rec.true_meta == env.meta_rule(s)


def test_descriptor_and_trajectory_round_trip(tmp_path):
    env = make_chemical("full_fork", 4, 3, 3)
    write_descriptor(env, tmp_path / "env.txt")
    again = make_env(read_descriptor(tmp_path / "env.txt"))
    assert again.descriptor() == env.descriptor()
    rng = nk.RandomSource(0)
    s, recs = env.reset(rng), []
    for _ in range(10):
        recs.append(env.step(s, int(rng.integers(env.n_actions)), rng))
        s = recs[-1].next_state
    write_trajectory(recs, env, tmp_path / "traj.txt")
    assert read_trajectory(tmp_path / "traj.txt", env) == recs
    assert "do:" in (tmp_path / "traj.txt").read_text()
