import numpy as np
import pytest

from hispo import nnet
from hispo.baselines import (PnnNet, PolicyStore, RegState, StrategyConfig, StrategyKind,
                             _pnn_loss_and_grad, estimate_fisher, load_store, pnn_add_column,
                             pnn_forward, pnn_param_count, reg_penalty, run_strategy, save_store,
                             train_pnn_column)
from hispo.gcrl import Batch, TrainConfig, TransitionTable, default_shapes, low_batch_rows, train_hbc
from hispo.nnet import NetShape
from hispo.streams import EvalConfig, StreamSpec, TaskSpec

from conftest import fd_grad

SHAPE = NetShape(3, (5, 4), 2, True, 0.0)


# --------------------------------------------------------------------------- regularizers

def test_penalty_zero_at_anchor(rng):
    theta = rng.normal(size=10)
    for kind, st in (("L2", RegState(3.0, theta.copy())), ("EWC", RegState(3.0, theta.copy(), np.ones(10)))):
        loss, g = reg_penalty(kind, theta, st)
        assert loss == 0.0 and not g.any()


def test_l2_penalty_example():
    theta_old = np.zeros(5)
    loss, g = reg_penalty("L2", np.array([3.0, 4.0, 0, 0, 0]), RegState(1.0, theta_old))
    assert loss == 25.0
    np.testing.assert_array_equal(g, [6.0, 8.0, 0, 0, 0])


def test_ewc_gradient_matches_finite_differences(rng):
    states = [RegState(0.7, rng.normal(size=8), rng.random(8)),
              RegState(2.0, rng.normal(size=8), rng.random(8))]
    theta = rng.normal(size=8)
    _, g = reg_penalty("EWC", theta, states)
    fd = fd_grad(lambda t: reg_penalty("EWC", t, states)[0], theta)
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6)) < 1e-6


def test_uniform_fisher_ewc_equals_l2_with_doubled_lambda(rng):
    theta, old = rng.normal(size=50), rng.normal(size=50)
    lam = 0.37
    _, g_ewc = reg_penalty("EWC", theta, RegState(lam, old, np.ones(50)))
    _, g_l2 = reg_penalty("L2", theta, RegState(lam / 2, old))
    np.testing.assert_allclose(g_ewc, g_l2, atol=1e-9, rtol=0)


def test_penalty_errors(rng):
    with pytest.raises(ValueError):
        reg_penalty("EWC", np.zeros(3), RegState(1.0, np.zeros(3)))
    with pytest.raises(ValueError):
        reg_penalty("L2", np.zeros(3), RegState(1.0, np.zeros(4)))
    with pytest.raises(ValueError):
        reg_penalty("FT1", np.zeros(3), RegState(1.0, np.zeros(3)))
    with pytest.raises(ValueError):
        RegState(1.0, np.zeros(2), np.array([1.0, -1.0]))


# --------------------------------------------------------------------------- fisher

@pytest.fixture(scope="module")
def trained(u_data):
    return train_hbc(u_data, default_shapes((16,), (16,)), TrainConfig(epochs=3))


def test_fisher_is_nonnegative_and_sized(trained, u_data):
    f = estimate_fisher(trained, u_data, 64, 0)
    assert f.shape == (trained.theta_h.size + trained.theta_l.size,)
    assert np.all(f >= 0) and f.any()


def test_low_fisher_vanishes_when_actions_are_fit_exactly(trained, u_data):
    table = TransitionTable(u_data)
    rows = np.arange(table.n_rows)
    # the low inputs do not depend on the stored actions, so swap in the policy's own outputs
    table.actions = nnet.forward(trained.shape_l, trained.theta_l, low_batch_rows(table, rows, trained.k).inputs)
    f = estimate_fisher(trained, table, 200, 0)
    assert np.max(f[trained.theta_h.size:]) < 1e-20
    assert f[:trained.theta_h.size].any()


def test_fisher_estimate_converges(trained, u_data):
    full = estimate_fisher(trained, u_data, 10**9, 0)
    err = [np.linalg.norm(estimate_fisher(trained, u_data, n, 1) - full) for n in (25, 100, 400)]
    assert err[2] < err[0]


# --------------------------------------------------------------------------- PNN

def test_single_column_is_plain_mlp(rng):
    net = pnn_add_column(PnnNet(SHAPE), 0)
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(pnn_forward(net, x), nnet.forward(SHAPE, net.columns[0].theta, x))


def test_pnn_parameter_count_grows_superlinearly():
    counts = []
    net = PnnNet(SHAPE)
    for k in range(1, 5):
        pnn_add_column(net, k)
        assert net.n_params() == pnn_param_count(SHAPE, k)
        counts.append(net.n_params())
    diffs = np.diff(counts)
    assert np.all(np.diff(diffs) > 0)
    lateral = 5 * 4 + 4 * 2
    assert counts[1] - counts[0] == nnet.param_count(SHAPE) + lateral


def test_pnn_gradients_match_finite_differences(rng):
    net = PnnNet(SHAPE)
    for k in range(3):
        pnn_add_column(net, k)
    for layer in net.columns[-1].laterals:
        for j in range(len(layer)):
            layer[j] = rng.normal(size=layer[j].shape)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    col = net.columns[-1]
    _, g, d_lat = _pnn_loss_and_grad(net, x, y, None, train=False)

    def loss_theta(t):
        old, col.theta = col.theta, t
        out = 0.5 * np.sum((pnn_forward(net, x) - y) ** 2) / 5
        col.theta = old
        return out

    np.testing.assert_allclose(g, fd_grad(loss_theta, col.theta.copy()), rtol=1e-5, atol=1e-8)
    u = col.laterals[1][0]

    def loss_lat(flat):
        col.laterals[1][0] = flat.reshape(u.shape)
        out = 0.5 * np.sum((pnn_forward(net, x) - y) ** 2) / 5
        col.laterals[1][0] = u
        return out

    np.testing.assert_allclose(d_lat[1][0].ravel(), fd_grad(loss_lat, u.ravel().copy()), rtol=1e-5,
                               atol=1e-8)


def test_training_a_column_leaves_earlier_columns_untouched(rng):
    net = pnn_add_column(PnnNet(SHAPE), 0)
    frozen = net.columns[0].theta.copy()
    pnn_add_column(net, 1)
    x, y = rng.normal(size=(32, 3)), rng.normal(size=(32, 2))
    before = 0.5 * np.sum((pnn_forward(net, x) - y) ** 2) / 32
    train_pnn_column(net, lambda rows: Batch(x[rows], y[rows]), 32, TrainConfig(epochs=30, batch_size=8),
                     np.random.default_rng(0))
    np.testing.assert_array_equal(net.columns[0].theta, frozen)
    assert 0.5 * np.sum((pnn_forward(net, x) - y) ** 2) / 32 < before
    assert any(u.any() for layer in net.columns[1].laterals for u in layer)


# --------------------------------------------------------------------------- strategies

@pytest.fixture(scope="module")
def two_task_stream():
    return StreamSpec("n-ia", [TaskSpec("U", "N", 20, 11), TaskSpec("U", "IA", 20, 12)])


FAST = TrainConfig(epochs=2)
SHAPES = default_shapes((16,), (16,))
EV = EvalConfig(10, 0)


@pytest.mark.parametrize("kind", list(StrategyKind))
def test_every_strategy_runs_and_reports(kind, two_task_stream):
    store, rep = run_strategy(kind, two_task_stream, FAST, StrategyConfig(lam=1.0, fisher_samples=16),
                              SHAPES, EV)
    assert rep.strategy == kind.value
    assert not np.isnan(np.tril(rep.matrix.sigma)).any()
    single = sum(nnet.param_count(s) for s in SHAPES)
    if kind in (StrategyKind.SCN, StrategyKind.FTN):
        assert rep.metrics.mem == 2.0 and rep.metrics.bwt == 0.0
    elif kind is StrategyKind.PNN:
        assert rep.metrics.mem > 2.0 and rep.metrics.bwt == 0.0
    else:
        assert rep.metrics.mem == 1.0 == store.n_params() / single


def test_freeze_keeps_task_one_policy(two_task_stream):
    store, rep = run_strategy("FZ", two_task_stream, FAST, None, SHAPES, EV)
    p0, p1 = store.policy_for(0), store.policy_for(1)
    np.testing.assert_array_equal(p0.theta_h, p1.theta_h)
    np.testing.assert_array_equal(p0.theta_l, p1.theta_l)
    assert rep.metrics.bwt == 0.0


def test_unknown_strategy(two_task_stream):
    with pytest.raises(ValueError):
        run_strategy("XYZ", two_task_stream, FAST)
    with pytest.raises(ValueError):
        PolicyStore("both")


@pytest.mark.parametrize("kind", ["FTN", "PNN"])
def test_store_round_trip(kind, two_task_stream, tmp_path):
    store, _ = run_strategy(kind, two_task_stream, FAST, None, SHAPES, EV)
    save_store(store, tmp_path / "s.json")
    back = load_store(tmp_path / "s.json")
    obs = np.tile([1.5, 1.5, 0.0, 0.0], (3, 1))
    goal = np.tile([3.5, 1.5], (3, 1))
    for t in (0, 1):
        a, b = store.policy_for(t), back.policy_for(t)
        np.testing.assert_array_equal(a.subgoal(obs, goal), b.subgoal(obs, goal))
        np.testing.assert_array_equal(a.low_action(obs, goal), b.low_action(obs, goal))
