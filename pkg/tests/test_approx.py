"""Test the numpy network stack and the deep learners."""
import msgpack
import numpy as np
import pytest
from pydantic import ValidationError  # pylint: disable=no-name-in-module

from mgrl import envs
from mgrl.approx import (
    DeepConfig,
    DeepNets,
    Mlp,
    ReplayBuffer,
    adam_init,
    adam_step,
    collect_episodes,
    deep_delta_dqn_step,
    deep_her_step,
    deep_train,
    deep_uvfa_step,
    evaluate_policy,
    greedy_summary,
    delta_dqn_direction,
    init_mlp,
    init_nets,
    input_width,
    load_checkpoint,
    mlp_forward,
    mlp_forward_batch,
    mlp_param_gradient,
    mlp_param_gradient_batch,
    param_count,
    q_inputs,
    sample_batch,
    save_checkpoint,
    soft_target_update,
)
from mgrl.core import ConfigurationError, EmptyBufferError
from mgrl.core.rng import Rng
from mgrl.envs import TorusEnv, torus_reward
from mgrl.oracle import numeric_gradient

from . import (
    RANDOM_BASELINE,
    SPARSE_DIM,
    SPARSE_EPS,
    SPARSE_FRACTION,
    SPARSE_TRANSITIONS,
    TORUS_TARGET,
    assert_close,
    find_item,
)


def _relative_error(first, second):
    return np.linalg.norm(first - second) / np.linalg.norm(second)


def _filled_buffer(env, episodes, rng, capacity=10_000):
    buffer = ReplayBuffer(capacity, env.horizon, env.dim)
    buffer.add(*collect_episodes(None, env, episodes, 1.0, rng))
    return buffer


def test_zero_weights_give_zero_output():
    """Test that a network with zero parameters outputs zeros."""
    net = Mlp(sizes=[4, 8, 3], params=np.zeros(param_count([4, 8, 3])))
    assert_close(mlp_forward(net, [1.0, -2.0, 0.5, 3.0]), 0.0, 0.0)


def test_identity_passthrough():
    """Test a one-layer identity network."""
    params = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    net = Mlp(sizes=[3, 3], params=params)
    assert_close(mlp_forward(net, [0.2, -0.4, 1.5]), [0.2, -0.4, 1.5], 0.0)


def test_mlp_validation(small_net):
    """Test the shape checks of networks and their inputs."""
    with pytest.raises(ValidationError):
        Mlp(sizes=[3, 2], params=np.zeros(5))
    with pytest.raises(ValidationError):
        Mlp(sizes=[3], params=np.zeros(0))
    with pytest.raises(ValidationError):
        Mlp(sizes=[1, 1], params=[np.nan, 0.0])
    with pytest.raises(ConfigurationError):
        mlp_forward_batch(small_net, np.zeros((2, 4)))
    with pytest.raises(ConfigurationError):
        mlp_param_gradient_batch(small_net, np.zeros((2, 3)), np.zeros((2, 3)))


def test_forward_stays_finite():
    """Test the shipped architecture on random inputs."""
    net = init_mlp([8, 64, 64, 4], Rng(1))
    outputs = mlp_forward_batch(net, Rng(2).normals((1000, 8)))
    assert outputs.shape == (1000, 4)
    assert np.all(np.isfinite(outputs))


@pytest.mark.parametrize("sizes", [[3, 5, 2], [8, 64, 64, 4]])
def test_gradient_matches_finite_differences(sizes):
    """Test back-propagation against central differences."""
    rng = Rng(3)
    net = init_mlp(sizes, rng)
    inputs = rng.normals(sizes[0])
    seed = rng.normals(sizes[-1])

    def objective(params):
        return float(seed @ mlp_forward(Mlp(sizes=sizes, params=params), inputs))

    numeric = numeric_gradient(objective, net.params)
    assert _relative_error(mlp_param_gradient(net, inputs, seed), numeric) <= 1e-4


def test_gradient_is_linear_in_seed(small_net):
    """Test linearity in the output seed and the zero seed."""
    rng = Rng(4)
    inputs = rng.normals((6, 3))
    first, second = rng.normals((6, 2)), rng.normals((6, 2))
    combined = mlp_param_gradient_batch(small_net, inputs, 2.0 * first - second)
    separate = 2.0 * mlp_param_gradient_batch(small_net, inputs, first)
    separate -= mlp_param_gradient_batch(small_net, inputs, second)
    assert_close(combined, separate, 1e-12)
    zero = mlp_param_gradient_batch(small_net, inputs, np.zeros((6, 2)))
    assert_close(zero, 0.0, 0.0)


def test_batch_gradient_sums_rows(small_net):
    """Test that the batch gradient is the sum of per-row gradients."""
    rng = Rng(5)
    inputs, seeds = rng.normals((4, 3)), rng.normals((4, 2))
    rows = sum(mlp_param_gradient(small_net, inputs[i], seeds[i]) for i in range(4))
    assert_close(mlp_param_gradient_batch(small_net, inputs, seeds), rows, 1e-12)


def test_adam_zero_direction():
    """Test that a zero direction leaves the parameters in place."""
    params = np.array([1.0, -2.0, 3.0])
    moved, state = adam_step(params, np.zeros(3), adam_init(params), 1e-3)
    assert_close(moved, params, 0.0)
    assert state.steps == 1


def test_adam_constant_direction():
    """Test that a constant direction moves each step by about lr."""
    params = np.zeros(2)
    state = adam_init(params)
    direction = np.array([0.5, -3.0])
    for _ in range(10):
        previous = params
        params, state = adam_step(params, direction, state, 1e-2)
        assert_close(params - previous, 1e-2 * np.sign(direction), 1e-8)
    with pytest.raises(ConfigurationError):
        adam_step(params, np.zeros(3), state, 1e-2)


def test_soft_target_update(small_net):
    """Test the endpoints and the composition of soft updates."""
    target = Mlp(sizes=small_net.sizes, params=np.zeros_like(small_net.params))
    online = Mlp(sizes=small_net.sizes, params=np.full_like(small_net.params, 8.0))
    assert_close(soft_target_update(target, online, 0.0).params, 0.0, 0.0)
    assert_close(soft_target_update(target, online, 1.0).params, 8.0, 0.0)
    halfway = soft_target_update(target, online, 0.5)
    assert_close(halfway.params, 4.0, 0.0)
    assert_close(soft_target_update(halfway, online, 0.5).params, 6.0, 0.0)
    with pytest.raises(ConfigurationError):
        soft_target_update(target, online, 1.5)


def test_replay_buffer_ring(torus):
    """Test the capacity rounding, the overwrite order and empty sampling."""
    env = torus.copy(update={"horizon": 5})
    buffer = ReplayBuffer(12, env.horizon, env.dim)
    assert buffer.capacity == 10 and len(buffer) == 0
    with pytest.raises(EmptyBufferError):
        sample_batch(buffer, 4, Rng(0))
    states, actions, goals, _ = collect_episodes(None, env, 3, 1.0, Rng(6))
    buffer.add(states, actions, goals)
    assert len(buffer) == 10
    assert_close(buffer.goals[0], goals[2], 0.0)
    assert_close(buffer.goals[1], goals[1], 0.0)
    batch = sample_batch(buffer, 32, Rng(7))
    assert np.all(batch.step < env.horizon) and np.all(batch.traj < 2)
    with pytest.raises(ConfigurationError):
        ReplayBuffer(3, env.horizon, env.dim)
    with pytest.raises(ConfigurationError):
        buffer.add(states[:, :3], actions, goals)


def test_collected_episodes_follow_dynamics(torus):
    """Test that noiseless rollouts move by one step along one axis."""
    env = torus.copy(update={"noise_sigma": 0.0, "horizon": 10})
    states, actions, _, frozen = collect_episodes(None, env, 4, 1.0, Rng(8))
    assert states.shape == (4, 11, 2) and actions.shape == (4, 10)
    assert frozen.shape == (4, 11) and not frozen.any()
    delta = np.abs(states[:, 1:] - states[:, :-1])
    moved = np.minimum(delta, 1.0 - delta)
    assert_close(moved.sum(axis=-1), env.step_size, 1e-12)


def _constant_nets(env, value):
    sizes = [4 * env.dim, 6, env.n_actions]
    params = np.zeros(param_count(sizes))
    params[-env.n_actions :] = value
    net = Mlp(sizes=sizes, params=params)
    return DeepNets(q=net, target=net.copy(deep=True), adam=adam_init(net.params))


def test_delta_dqn_still_with_zero_terms(torus):
    """Test that zero Dirac and decay weights leave the parameters unchanged."""
    env = torus.copy(update={"reward_scale": 0.0, "discount": 0.0})
    nets = _constant_nets(env, 0.0)
    buffer = _filled_buffer(env, 2, Rng(9))
    cfg = DeepConfig(batch_size=16)
    moved, info = deep_delta_dqn_step(nets, buffer, env, cfg, Rng(10))
    assert_close(moved.q.params, nets.q.params, 0.0)
    assert info == {"dirac_count": 16, "reward_count": 0}


def test_delta_dqn_direction_is_surrogate_gradient(torus):
    """Test the direction against differences of the stop-gradient surrogate."""
    rng = Rng(11)
    nets = init_nets(torus, [6], rng)
    buffer = _filled_buffer(torus, 2, rng)
    batch = sample_batch(buffer, 5, rng)
    goals = rng.randoms((5, torus.dim))
    rows = np.arange(5)
    bootstrap = mlp_forward_batch(
        nets.target, q_inputs(batch.next_states, goals)
    ).max(axis=1)
    at_goal = q_inputs(batch.states, goals)
    at_state = q_inputs(batch.states, batch.states)
    frozen = torus.discount * bootstrap - mlp_forward_batch(nets.q, at_goal)[
        rows, batch.actions
    ]

    def surrogate(params):
        net = Mlp(sizes=nets.q.sizes, params=params)
        dirac = mlp_forward_batch(net, at_state)[rows, batch.actions]
        decay = mlp_forward_batch(net, at_goal)[rows, batch.actions]
        return float(np.mean(torus.reward_scale * dirac + frozen * decay))

    direction = delta_dqn_direction(nets.q, nets.target, torus, batch, goals)
    numeric = numeric_gradient(surrogate, nets.q.params)
    assert _relative_error(direction, numeric) <= 1e-4


def test_delta_dqn_never_reads_rewards(torus, monkeypatch):
    """Test that the δ-DQN step does not evaluate the sparse reward."""

    def forbidden(*_args, **_kwargs):
        raise AssertionError("reward evaluated")

    monkeypatch.setattr(envs, "torus_reward", forbidden)
    nets = init_nets(torus, [8], Rng(12))
    buffer = _filled_buffer(torus, 2, Rng(13))
    for _ in range(3):
        nets, info = deep_delta_dqn_step(nets, buffer, torus, DeepConfig(), Rng(14))
        assert info["reward_count"] == 0


def test_her_without_relabelling_is_uvfa(torus):
    """Test that HER with no future goals reproduces UVFA bit for bit."""
    nets = init_nets(torus, [8], Rng(15))
    buffer = _filled_buffer(torus, 3, Rng(16))
    cfg = DeepConfig(batch_size=32)
    her, her_info = deep_her_step(nets, buffer, torus, cfg, Rng(17), future_prob=0.0)
    uvfa, uvfa_info = deep_uvfa_step(nets, buffer, torus, cfg, Rng(17))
    assert np.array_equal(her.q.params, uvfa.q.params)
    assert her_info == uvfa_info


def test_reward_vanishes_in_high_dimension():
    """Test that uniform goals almost never pay on Torus(4) unlike the Dirac term."""
    env = TorusEnv(dim=SPARSE_DIM, reward_eps=SPARSE_EPS)
    buffer = _filled_buffer(env, 50, Rng(18))
    batch = sample_batch(buffer, SPARSE_TRANSITIONS, Rng(19))
    goals = Rng(20).randoms((SPARSE_TRANSITIONS, env.dim))
    assert np.mean(torus_reward(batch.states, goals, env)) < SPARSE_FRACTION
    cfg = DeepConfig(batch_size=64)
    _, info = deep_delta_dqn_step(
        init_nets(env, [8], Rng(21)), buffer, env, cfg, Rng(22)
    )
    assert info["dirac_count"] / cfg.batch_size == 1.0


def test_checkpoint_round_trip(tmp_path, small_net):
    """Test that a saved network loads back exactly."""
    path = tmp_path / "net.msgpack"
    save_checkpoint(small_net, path)
    loaded = load_checkpoint(path)
    assert loaded.sizes == small_net.sizes
    assert np.array_equal(loaded.params, small_net.params)


def test_checkpoint_rejects_foreign_files(tmp_path, small_net):
    """Test the magic and the version checks."""
    path = tmp_path / "other.msgpack"
    path.write_bytes(msgpack.dumps({"magic": "OTHER", "version": 1}))
    with pytest.raises(ConfigurationError):
        load_checkpoint(path)
    save_checkpoint(small_net, path)
    payload = msgpack.loads(path.read_bytes())
    payload["version"] = 99
    path.write_bytes(msgpack.dumps(payload))
    with pytest.raises(ConfigurationError, match="version"):
        load_checkpoint(path)


def test_deep_train_rows(torus):
    """Test the metric rows of a short deep run."""
    env = torus.copy(update={"horizon": 20})
    cfg = DeepConfig(
        epochs=2,
        episodes_per_epoch=2,
        updates_per_epoch=3,
        batch_size=8,
        hidden=[8],
        eval_episodes=2,
        eval_interval=1,
    )
    rows, nets = deep_train("deep_delta_dqn", env, cfg, Rng(23))
    assert [row.metric for row in rows] == ["mean_final_distance", "dirac_fraction"] * 2
    assert find_item(rows, "metric", "dirac_fraction").value == 1.0
    assert rows[-1].step == 6 and rows[-1].episode == 4
    assert nets.q.sizes == [8, 8, 4]
    again, _ = deep_train("deep_delta_dqn", env, cfg, Rng(23))
    assert [row.value for row in again] == [row.value for row in rows]
    with pytest.raises(ConfigurationError):
        deep_train("deep_sarsa", env, cfg, Rng(23))


def test_deep_train_with_freeze(torus):
    """Test the frozen flag column and the frozen share metric."""
    env = torus.copy(update={"horizon": 10, "freeze": True})
    cfg = DeepConfig(
        epochs=1,
        episodes_per_epoch=2,
        updates_per_epoch=2,
        batch_size=8,
        hidden=[8],
        eval_episodes=3,
    )
    rows, nets = deep_train("deep_delta_dqn", env, cfg, Rng(25))
    assert input_width(env) == 9 and nets.q.sizes == [9, 8, 5]
    share = find_item(rows, "metric", "greedy_frozen_share").value
    assert 0.0 <= share <= 1.0
    distance, frozen = greedy_summary(nets.q, env, 3, Rng(26))
    assert 3 * frozen == pytest.approx(round(3 * frozen))
    assert evaluate_policy(nets.q, env, 3, Rng(26)) == distance
    states, actions, _, flags = collect_episodes(None, env, 6, 1.0, Rng(27))
    jumped = np.cumsum(actions == env.freeze_action, axis=1) > 0
    assert np.array_equal(flags[:, 1:], jumped)
    held = flags[:, 1:-1] & flags[:, 2:]
    assert_close(states[:, 2:][held], states[:, 1:-1][held], 0.0)


@pytest.mark.parametrize("schedule", ["epoch", "step"])
def test_target_update_schedule(torus, schedule):
    """Test that the target mixes once per epoch or once per update."""
    env = torus.copy(update={"horizon": 20})
    cfg = DeepConfig(
        epochs=1,
        episodes_per_epoch=2,
        updates_per_epoch=3,
        batch_size=8,
        hidden=[8],
        eval_episodes=2,
        target_mix=0.5,
        target_update=schedule,
    )
    start = init_nets(env, cfg.hidden, Rng(24).spawn(0)).q.params
    _, nets = deep_train("deep_uvfa", env, cfg, Rng(24))
    if schedule == "epoch":
        assert_close(nets.target.params, 0.5 * start + 0.5 * nets.q.params, 1e-12)
    else:
        assert not np.allclose(nets.target.params, 0.5 * start + 0.5 * nets.q.params)
    assert DeepConfig().target_update == "epoch"
    with pytest.raises(ValidationError):
        DeepConfig(target_update="never")


def test_deep_config_rejects_unknown_keys():
    """Test that typos in the deep section are refused."""
    with pytest.raises(ValidationError):
        DeepConfig(batchsize=4)
    with pytest.raises(ValidationError):
        DeepConfig(future_prob=1.5)


@pytest.mark.slow
@pytest.mark.timeout(900)
@pytest.mark.parametrize("algo", ["deep_delta_dqn", "deep_her"])
def test_torus_learning(torus, algo):
    """Test that the deep learners reach goals on Torus(2)."""
    cfg = DeepConfig(epochs=150, updates_per_epoch=200, eval_interval=150)
    rows, _ = deep_train(algo, torus, cfg, Rng(0))
    distance = find_item(rows, "metric", "mean_final_distance").value
    assert distance < TORUS_TARGET < RANDOM_BASELINE
