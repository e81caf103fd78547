import numpy as np
import pytest
from scipy import stats

from hispo import nnet
from hispo.envs import Episode, make_env
from hispo.gcrl import (HierActor, HierPolicy, TrainConfig, default_shapes, default_waystep,
                        flat_batch_rows, her_relabel, hier_act, high_batch_rows, high_loss,
                        init_policy, load_policy, low_batch_rows, low_loss, make_high_batch,
                        make_low_batch, needs_refresh, sample_her_offsets, save_policy, table_for,
                        train_bc, train_hbc)
from hispo.metrics import success_rate


def line_episode(T=6):
    """An episode moving along x by one unit per step."""
    xs = np.arange(T + 1, dtype=float)
    states = np.stack([xs, np.zeros(T + 1), np.ones(T + 1), np.zeros(T + 1)], 1)
    return Episode(states[:-1], np.zeros((T, 2)), [0] * (T - 1) + [1], states[1:], [T, 0.0])


def test_her_offsets_follow_truncated_exponential():
    rng = np.random.default_rng(0)
    d = sample_her_offsets(np.full(100_000, 100), 50.0, rng)
    assert d.min() >= 1 and d.max() <= 100
    w = np.exp(-np.arange(1, 101) / 50.0)
    expected = 1e5 * w / w.sum()
    observed = np.bincount(d, minlength=101)[1:]
    _, p = stats.chisquare(observed, expected)
    assert p > 1e-3


def test_her_small_temperature_picks_next_state():
    d = sample_her_offsets(np.full(1000, 30), 1e-3, np.random.default_rng(1))
    assert np.all(d == 1)


def test_her_relabel_last_step_and_fraction():
    ep = line_episode()
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(her_relabel(ep, 5, 10.0, rng), [6.0, 0.0])
    np.testing.assert_array_equal(her_relabel(ep, 2, 10.0, rng, fraction=0.0), ep.goal)
    with pytest.raises(IndexError):
        her_relabel(ep, 6, 10.0, rng)


def test_batches_target_future_positions(u_data):
    table = table_for(u_data)
    rows = np.arange(20)
    hb = high_batch_rows(table, rows, 3)
    lb = low_batch_rows(table, rows, 3)
    ep = u_data[0]
    T = len(ep)
    for t in range(min(20, T)):
        future = ep.positions("N")[min(t + 3, T)]
        np.testing.assert_array_equal(hb.targets[t], future)
        np.testing.assert_array_equal(lb.inputs[t], np.hstack([ep.obs[t], future]))
        np.testing.assert_array_equal(lb.targets[t], ep.actions[t])
        np.testing.assert_array_equal(hb.inputs[t], np.hstack([ep.obs[t], ep.goal]))


def test_waystep_one_low_batch_is_next_position_conditioned_bc(u_data):
    table = table_for(u_data)
    rows = np.arange(table.n_rows)
    lb = low_batch_rows(table, rows, 1)
    np.testing.assert_array_equal(lb.inputs[:, 4:], np.vstack([ep.next_obs[:, :2] for ep in u_data]))
    fb = flat_batch_rows(table, rows)
    np.testing.assert_array_equal(lb.targets, fb.targets)
    np.testing.assert_array_equal(lb.inputs[:, :4], fb.inputs[:, :4])


def test_her_goals_come_from_the_same_episode_future(u_data):
    table = table_for(u_data)
    rng = np.random.default_rng(2)
    rows = rng.integers(0, table.n_rows, 500)
    b = high_batch_rows(table, rows, 2, rng, her_temperature=5.0, her_fraction=1.0)
    for r, g in zip(rows, b.inputs[:, 4:]):
        ep = table.ep_index[r]
        t = table.t[r]
        fut = u_data[ep].positions("N")[t + 1:]
        assert np.any(np.all(fut == g, axis=1))


def test_random_batches_have_requested_size(u_data, rng):
    assert len(make_high_batch(u_data, 3, 17, rng, 10.0)) == 17
    assert len(make_low_batch(u_data, 3, 9, rng)) == 9


def test_default_waystep_scales_with_episode_length():
    assert default_waystep("U") == 20
    assert default_waystep("M") == default_waystep("L") == 10
    assert TrainConfig(waystep=4).k_for("U") == 4


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(her_fraction=1.5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_subgoal_refresh_rule():
    assert needs_refresh(0, 5, [0, 0], [3, 3])
    assert not needs_refresh(3, 5, [0, 0], [3, 3])
    assert needs_refresh(3, 5, [0, 0], [0.3, 0.3])


def test_hier_act_keeps_subgoal_between_refreshes():
    pol = init_policy(default_shapes(), 5, 0)
    obs = np.array([1.5, 1.5, 0.0, 0.0])
    goal = np.array([3.5, 3.5])
    a, sg = hier_act(pol, obs, goal, 0)
    a2, sg2 = hier_act(pol, obs, goal, 1, subgoal=sg + 10)
    np.testing.assert_array_equal(sg2, sg + 10)
    assert a.shape == (2,) and np.all(np.abs(a) <= 1)


def test_policy_round_trip(tmp_path):
    pol = init_policy(default_shapes(), 7, 3)
    save_policy(pol, tmp_path / "p.json")
    back = load_policy(tmp_path / "p.json")
    np.testing.assert_array_equal(back.theta_h, pol.theta_h)
    np.testing.assert_array_equal(back.theta_l, pol.theta_l)
    assert back.k == 7 and back.shape_l == pol.shape_l
    flat = init_policy(default_shapes(), 1, 3, flat=True)
    save_policy(flat, tmp_path / "f.json")
    assert load_policy(tmp_path / "f.json").flat


def test_training_lowers_both_level_losses(u_data):
    cfg = TrainConfig(epochs=5)
    untrained = init_policy(default_shapes(), cfg.k_for("U"), 0)
    pol = train_hbc(u_data, default_shapes(), cfg)
    assert high_loss(pol, u_data) < 0.5 * high_loss(untrained, u_data)
    assert low_loss(pol, u_data) < 0.5 * low_loss(untrained, u_data)
    bc = train_bc(u_data, default_shapes()[1], cfg)
    assert bc.flat and bc.n_params() == nnet.param_count(default_shapes()[1])


def test_hbc_is_deterministic_per_seed(u_data):
    cfg = TrainConfig(epochs=2, seed=5)
    a, b = train_hbc(u_data, default_shapes(), cfg), train_hbc(u_data, default_shapes(), cfg)
    np.testing.assert_array_equal(a.theta_h, b.theta_h)
    np.testing.assert_array_equal(a.theta_l, b.theta_l)


def test_batched_actor_matches_single_step_acting():
    pol = init_policy(default_shapes(), 4, 1)
    env = make_env("U")
    starts, goals = env.sample_start_goal(np.random.default_rng(0), 3)
    actor = HierActor(pol)
    actor.begin(env, starts, goals)
    obs = np.hstack([starts, np.zeros((3, 2))])
    batched = actor.act(obs, goals, 0)
    for i in range(3):
        a, _ = hier_act(pol, obs[i], goals[i], 0)
        np.testing.assert_allclose(batched[i], a, atol=1e-12)
    assert 0.0 <= success_rate(HierActor(pol), env, 10, 0) <= 1.0


def test_hier_policy_rejects_bad_waystep():
    shapes = default_shapes()
    with pytest.raises(ValueError):
        HierPolicy(shapes[0], None, shapes[1], np.zeros(1), 0)
