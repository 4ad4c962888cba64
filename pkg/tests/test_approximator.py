import numpy as np
import pytest

from core.approximator import (
    AdamOptimizer,
    MlpQFunction,
    TabularQFunction,
    TrainBatch,
    q_learning_targets,
    sync_target,
    train_step,
)
from core.errors import ArchitectureMismatchError, DimensionError, TrainingDivergenceError

FD_EPS = 1e-6


def _small_net(seed: int = 0, dtype=np.float32) -> MlpQFunction:
    return MlpQFunction([5, 8, 4, 3], rng=np.random.default_rng(seed), dtype=dtype)


def _straight_line_forward(net: MlpQFunction, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w0, b0, w1, b1, w2, b2 = [p.astype(np.float64) for p in net.parameters()]
    h1 = np.maximum(x @ w0 + b0, 0.0)
    h2 = np.maximum(h1 @ w1 + b1, 0.0)
    return h2 @ w2 + b2, h2


def test_tabular_q_values_return_table_row():
    table = np.array([[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0]])
    f = TabularQFunction(table)
    np.testing.assert_array_equal(f.q_values(0), [1, 2, 3, 4])
    np.testing.assert_array_equal(f.q_values([[0], [1]]), table)
    np.testing.assert_array_equal(f.embedding(1), [0.0, 1.0])


def test_zero_output_layer_gives_zero_values():
    net = _small_net()
    params = net.parameters()
    params[-2][...] = 0.0
    params[-1][...] = 0.0
    q = net.q_values(np.ones(5, dtype=np.float32))
    np.testing.assert_array_equal(q, np.zeros(3))


def test_fixed_seed_is_deterministic():
    obs = np.linspace(-1, 1, 5, dtype=np.float32)
    a = _small_net(seed=42)
    b = _small_net(seed=42)
    np.testing.assert_array_equal(a.q_values(obs), b.q_values(obs))
    np.testing.assert_array_equal(a.embedding(obs), b.embedding(obs))


def test_default_embedding_dimension():
    net = MlpQFunction.build(obs_dim=195, n_actions=4, hidden=[256], embedding_dim=64, seed=0)
    assert net.embedding(np.zeros(195, dtype=np.float32)).shape == (64,)
    assert net.q_values(np.zeros((3, 195), dtype=np.float32)).shape == (3, 4)


def test_embedding_matches_independent_forward_pass():
    net = _small_net(seed=7)
    x = np.random.default_rng(0).normal(size=(10, 5)).astype(np.float32)
    q_ref, h_ref = _straight_line_forward(net, x.astype(np.float64))
    np.testing.assert_allclose(net.embedding(x), h_ref, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(net.q_values(x), q_ref, rtol=1e-5, atol=1e-6)
    x0 = x[0]
    np.testing.assert_array_equal(net.embedding(x0), net.embedding(x0))


def test_shape_mismatch_rejected():
    net = _small_net()
    with pytest.raises(DimensionError):
        net.q_values(np.zeros(4, dtype=np.float32))
    with pytest.raises(DimensionError):
        net.embedding(np.zeros((2, 6), dtype=np.float32))


def test_terminal_target_is_reward_alone():
    target = _small_net(seed=1)
    batch = TrainBatch(
        obs=np.zeros((2, 5)),
        actions=[0, 1],
        rewards=[0.5, 0.5],
        next_obs=np.ones((2, 5)),
        terminals=[True, False],
    )
    y = q_learning_targets(target, batch, gamma=0.9)
    assert y[0] == 0.5
    expected = 0.5 + 0.9 * float(np.max(target.q_values(np.ones(5, dtype=np.float32))))
    assert y[1] == pytest.approx(expected, rel=1e-6)


def test_loss_zero_when_predictions_equal_targets():
    online = _small_net(seed=2)
    for p in online.parameters()[-2:]:
        p[...] = 0.0
    target = online.copy()
    batch = TrainBatch(
        obs=np.random.default_rng(0).normal(size=(4, 5)),
        actions=[0, 1, 2, 0],
        rewards=[0.0, 0.0, 0.0, 0.0],
        next_obs=np.random.default_rng(1).normal(size=(4, 5)),
        terminals=[False, False, True, False],
    )
    loss, grads = online.loss_and_gradients(batch.obs, batch.actions, q_learning_targets(target, batch, 0.99))
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads)

    before = [p.copy() for p in online.parameters()]
    optimizer = AdamOptimizer(online.parameters(), learning_rate=1e-2)
    assert train_step(online, target, batch, 0.99, optimizer) == 0.0
    for a, b in zip(before, online.parameters()):
        np.testing.assert_array_equal(a, b)


def test_adam_zero_gradient_leaves_parameters_unchanged():
    net = _small_net(seed=3)
    before = [p.copy() for p in net.parameters()]
    optimizer = AdamOptimizer(net.parameters())
    for _ in range(5):
        optimizer.step(net.parameters(), [np.zeros_like(p) for p in net.parameters()])
    for a, b in zip(before, net.parameters()):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("batch_seed", range(10))
def test_gradients_match_central_differences(batch_seed):
    rng = np.random.default_rng(100 + batch_seed)
    shadow = _small_net(seed=batch_seed).copy(dtype=np.float64)
    obs = rng.normal(size=(6, 5))
    actions = rng.integers(0, 3, size=6)
    targets = rng.normal(size=6)

    _, grads = shadow.loss_and_gradients(obs, actions, targets)
    worst = 0.0
    for param, grad in zip(shadow.parameters(), grads):
        for idx in np.ndindex(param.shape):
            original = param[idx]
            param[idx] = original + FD_EPS
            plus, _ = shadow.loss_and_gradients(obs, actions, targets)
            param[idx] = original - FD_EPS
            minus, _ = shadow.loss_and_gradients(obs, actions, targets)
            param[idx] = original
            numeric = (plus - minus) / (2 * FD_EPS)
            denom = max(abs(numeric), abs(grad[idx]), 1e-6)
            worst = max(worst, abs(numeric - grad[idx]) / denom)
    assert worst < 1e-3


def test_sync_target_copies_parameters():
    online = _small_net(seed=4)
    target = _small_net(seed=5)
    x = np.random.default_rng(0).normal(size=(100, 5)).astype(np.float32)
    assert not np.allclose(online.q_values(x), target.q_values(x))
    sync_target(online, target)
    np.testing.assert_array_equal(online.q_values(x), target.q_values(x))
    for a, b in zip(online.parameters(), target.parameters()):
        assert a.tobytes() == b.tobytes()

    online.parameters()[0][0, 0] += 1.0
    assert not np.array_equal(online.q_values(x), target.q_values(x))


def test_sync_target_architecture_mismatch():
    with pytest.raises(ArchitectureMismatchError):
        sync_target(_small_net(), MlpQFunction([5, 8, 4, 2]))


def test_non_finite_loss_raises():
    net = _small_net()
    batch = TrainBatch(obs=np.zeros((1, 5)), actions=[0], rewards=[np.inf], next_obs=np.zeros((1, 5)),
                       terminals=[True])
    with pytest.raises(TrainingDivergenceError):
        train_step(net, net.copy(), batch, 0.9, AdamOptimizer(net.parameters()))


def test_train_batch_validation():
    with pytest.raises(ValueError):
        TrainBatch(obs=np.zeros((0, 5)), actions=[], rewards=[], next_obs=np.zeros((0, 5)), terminals=[])
    with pytest.raises(ValueError):
        TrainBatch(obs=np.zeros((2, 5)), actions=[0], rewards=[0.0], next_obs=np.zeros((1, 5)), terminals=[False])


def _chain_q_star(n_states: int, gamma: float) -> np.ndarray:
    q = np.zeros((n_states, 2))
    for _ in range(500):
        v = q.max(axis=1)
        new = np.zeros_like(q)
        for s in range(n_states):
            new[s, 0] = gamma * v[max(s - 1, 0)]
            new[s, 1] = 1.0 if s == n_states - 1 else gamma * v[s + 1]
        q = new
    return q


def test_training_on_chain_mdp_reaches_q_star():
    # 5 状态链：动作 0 左移，动作 1 右移；最右端右移得到 1 并终止
    n, gamma = 5, 0.9
    eye = np.eye(n)
    obs, actions, rewards, next_obs, terminals = [], [], [], [], []
    for s in range(n):
        for a in (0, 1):
            nxt = max(s - 1, 0) if a == 0 else min(s + 1, n - 1)
            obs.append(eye[s])
            actions.append(a)
            rewards.append(1.0 if (a == 1 and s == n - 1) else 0.0)
            next_obs.append(eye[nxt])
            terminals.append(a == 1 and s == n - 1)
    batch = TrainBatch(obs=np.array(obs), actions=actions, rewards=rewards, next_obs=np.array(next_obs),
                       terminals=terminals)

    online = MlpQFunction([n, 32, 16, 2], rng=np.random.default_rng(0))
    target = online.copy()
    optimizer = AdamOptimizer(online.parameters(), learning_rate=3e-3)
    for lr, steps in ((3e-3, 3000), (3e-4, 2000), (3e-5, 1000)):
        optimizer.learning_rate = lr
        for i in range(steps):
            train_step(online, target, batch, gamma, optimizer)
            if (i + 1) % 25 == 0:
                sync_target(online, target)

    q_star = _chain_q_star(n, gamma)
    np.testing.assert_allclose(online.q_values(eye.astype(np.float32)), q_star, atol=1e-2)
