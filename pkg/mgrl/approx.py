"""Provide the numpy function-approximation stack and the deep learners.

Networks map ``(observation of s, embedding of g)`` to one output per
discrete torus action. All updates are written as ascent directions and
applied with Adam.
"""
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import msgpack
import numpy as np
from pydantic import (  # pylint: disable=no-name-in-module
    BaseModel,
    Extra,
    validator,
)

from mgrl import envs
from mgrl.core import ConfigurationError, EmptyBufferError, MetricRow, NumericalError
from mgrl.core.rng import Rng
from mgrl.envs import TorusEnv, torus_distance, torus_observe, torus_transition

logging.basicConfig(stream=sys.stdout)
logger = logging.getLogger("approx")
logger.setLevel(logging.INFO)

CHECKPOINT_MAGIC = "MGRLNET"
CHECKPOINT_VERSION = 1
DEEP_ALGOS = ("deep_uvfa", "deep_her", "deep_delta_dqn")


def param_count(sizes) -> int:
    """Return the number of parameters of an MLP with the given widths."""
    return int(
        sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(sizes, sizes[1:]))
    )


def _views(sizes, flat):
    views = []
    offset = 0
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights = flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = flat[offset : offset + fan_out]
        offset += fan_out
        views.append((weights, bias))
    return views


class Mlp(BaseModel):
    """Represent a rectifier MLP with an identity output layer.

    Parameters live in one flat vector, laid out layer by layer as the
    row-major ``(fan_in, fan_out)`` weights followed by the bias.
    """

    sizes: List[int]
    params: np.ndarray

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True

    @validator("sizes")
    def _check_sizes(cls, value):  # pylint: disable=no-self-argument
        if len(value) < 2 or any(width < 1 for width in value):
            raise ValueError("an MLP needs at least two positive widths")
        return value

    @validator("params", pre=True)
    def _check_params(cls, value, values):  # pylint: disable=no-self-argument
        params = np.array(value, dtype=np.float64).ravel()
        sizes = values.get("sizes")
        if sizes is not None and params.size != param_count(sizes):
            raise ValueError(
                f"expected {param_count(sizes)} parameters, got {params.size}"
            )
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        return params

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Return ``(weights, bias)`` views into the flat parameters."""
        return _views(self.sizes, self.params)

    @property
    def n_outputs(self) -> int:
        """Return the number of output heads."""
        return self.sizes[-1]


def init_mlp(sizes, rng: Rng) -> Mlp:
    """Return an MLP with He-normal weights and zero biases."""
    params = np.zeros(param_count(sizes))
    for weights, _ in _views(sizes, params):
        fan_in = weights.shape[0]
        weights[...] = np.sqrt(2.0 / fan_in) * rng.normals(weights.shape)
    return Mlp(sizes=list(sizes), params=params)


def _forward(net: Mlp, inputs) -> List[np.ndarray]:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != net.sizes[0]:
        raise ConfigurationError(
            f"input of shape {inputs.shape} does not match width {net.sizes[0]}"
        )
    activations = [inputs]
    layers = net.layers()
    for depth, (weights, bias) in enumerate(layers):
        hidden = activations[-1] @ weights + bias
        if depth < len(layers) - 1:
            hidden = np.maximum(hidden, 0.0)
        activations.append(hidden)
    return activations


def mlp_forward(net: Mlp, inputs) -> np.ndarray:
    """Return the output vector for one input vector."""
    return _forward(net, np.asarray(inputs, dtype=np.float64)[None, :])[-1][0]


def mlp_forward_batch(net: Mlp, inputs) -> np.ndarray:
    """Return the outputs for a batch of input rows."""
    return _forward(net, inputs)[-1]


def mlp_param_gradient_batch(net: Mlp, inputs, seeds) -> np.ndarray:
    """Return the gradient of ``sum_b <seeds[b], forward(inputs[b])>``."""
    activations = _forward(net, inputs)
    delta = np.asarray(seeds, dtype=np.float64)
    if delta.shape != activations[-1].shape:
        raise ConfigurationError(
            f"seed of shape {delta.shape} does not match the output "
            f"{activations[-1].shape}"
        )
    grad = np.zeros_like(net.params)
    grad_views = _views(net.sizes, grad)
    layers = net.layers()
    for depth in reversed(range(len(layers))):
        grad_weights, grad_bias = grad_views[depth]
        grad_weights[...] = activations[depth].T @ delta
        grad_bias[...] = delta.sum(axis=0)
        if depth > 0:
            delta = (delta @ layers[depth][0].T) * (activations[depth] > 0.0)
    return grad


def mlp_param_gradient(net: Mlp, inputs, seed) -> np.ndarray:
    """Return the gradient of ``<seed, forward(inputs)>`` in the parameters."""
    return mlp_param_gradient_batch(
        net,
        np.asarray(inputs, dtype=np.float64)[None, :],
        np.asarray(seed, dtype=np.float64)[None, :],
    )


class AdamState(BaseModel):
    """Represent the moment estimates of Adam."""

    first: np.ndarray
    second: np.ndarray
    steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True


def adam_init(params) -> AdamState:
    """Return zero moments shaped like ``params``."""
    return AdamState(first=np.zeros_like(params), second=np.zeros_like(params))


def adam_step(params, direction, state: AdamState, lr: float):
    """Move ``params`` along the ascent ``direction``; return params and state."""
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != np.shape(params):
        raise ConfigurationError("direction and parameters differ in shape")
    steps = state.steps + 1
    first = state.beta1 * state.first + (1.0 - state.beta1) * direction
    second = state.beta2 * state.second + (1.0 - state.beta2) * direction**2
    first_hat = first / (1.0 - state.beta1**steps)
    second_hat = second / (1.0 - state.beta2**steps)
    params = params + lr * first_hat / (np.sqrt(second_hat) + state.eps)
    return params, state.copy(update={"first": first, "second": second, "steps": steps})


def soft_target_update(q_tar: Mlp, q_theta: Mlp, mix: float) -> Mlp:
    """Return ``(1 - mix) * q_tar + mix * q_theta`` parameter-wise."""
    if not 0.0 <= mix <= 1.0:
        raise ConfigurationError("mix must lie in [0, 1]")
    if q_tar.sizes != q_theta.sizes:
        raise ConfigurationError("target and online networks differ in shape")
    params = (1.0 - mix) * q_tar.params + mix * q_theta.params
    return Mlp(sizes=q_tar.sizes, params=params)


class ReplayBuffer:
    """Store whole torus trajectories in a ring.

    ``capacity`` counts transitions and is rounded down to whole
    trajectories of length ``horizon``.
    """

    def __init__(self, capacity: int, horizon: int, dim: int):
        """Set up instance."""
        if capacity < horizon:
            raise ConfigurationError("capacity must hold at least one trajectory")
        self.horizon = horizon
        self.dim = dim
        slots = capacity // horizon
        self.states = np.zeros((slots, horizon + 1, dim))
        self.actions = np.zeros((slots, horizon), dtype=np.int64)
        self.goals = np.zeros((slots, dim))
        self.frozen = np.zeros((slots, horizon + 1), dtype=bool)
        self.cursor = 0
        self.stored = 0

    @property
    def capacity(self) -> int:
        """Return the capacity in transitions."""
        return self.states.shape[0] * self.horizon

    def __len__(self):
        """Return the number of stored transitions."""
        return self.stored * self.horizon

    def add(self, states, actions, goals, frozen=None):
        """Append a batch of trajectories, overwriting the oldest ones."""
        states, actions = np.asarray(states), np.asarray(actions)
        goals = np.asarray(goals)
        if states.shape[1:] != self.states.shape[1:]:
            raise ConfigurationError(
                f"trajectories of shape {states.shape[1:]} expected"
            )
        if frozen is None:
            frozen = np.zeros(states.shape[:2], dtype=bool)
        slots = self.states.shape[0]
        for index in range(states.shape[0]):
            self.states[self.cursor] = states[index]
            self.actions[self.cursor] = actions[index]
            self.goals[self.cursor] = goals[index]
            self.frozen[self.cursor] = frozen[index]
            self.cursor = (self.cursor + 1) % slots
            self.stored = min(self.stored + 1, slots)


class TransitionBatch(NamedTuple):
    """Represent transitions sampled from the replay buffer."""

    traj: np.ndarray
    step: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    goals: np.ndarray
    frozen: Optional[np.ndarray] = None
    next_frozen: Optional[np.ndarray] = None


def sample_batch(buffer: ReplayBuffer, batch: int, rng: Rng) -> TransitionBatch:
    """Draw transitions uniformly over the stored steps."""
    if buffer.stored == 0:
        raise EmptyBufferError("cannot sample from an empty replay buffer")
    traj = rng.integers(buffer.stored, batch)
    step = rng.integers(buffer.horizon, batch)
    return TransitionBatch(
        traj=traj,
        step=step,
        states=buffer.states[traj, step],
        actions=buffer.actions[traj, step],
        next_states=buffer.states[traj, step + 1],
        goals=buffer.goals[traj].copy(),
        frozen=buffer.frozen[traj, step],
        next_frozen=buffer.frozen[traj, step + 1],
    )


def q_inputs(states, goals, frozen=None) -> np.ndarray:
    """Return network inputs: the state observation then the goal embedding.

    A ``frozen`` flag array appends one last column.
    """
    parts = [torus_observe(states), torus_observe(goals)]
    if frozen is not None:
        parts.append(np.asarray(frozen, dtype=np.float64)[..., None])
    return np.concatenate(parts, axis=-1)


def input_width(env: TorusEnv) -> int:
    """Return the network input width for ``env``."""
    return 4 * env.dim + int(env.freeze)


def _flags(env: TorusEnv, frozen):
    return frozen if env.freeze else None


class DeepConfig(BaseModel):
    """Represent the parameters of a deep training run."""

    epochs: int = 200
    episodes_per_epoch: int = 4
    updates_per_epoch: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    epsilon: float = 0.2
    target_mix: float = 0.05
    # "epoch" mixes once after the updates of an epoch, "step" after each update
    target_update: str = "epoch"
    hidden: List[int] = [64, 64]
    buffer_capacity: int = 1_000_000
    future_prob: float = 0.8
    reward_scale: float = 10.0
    eval_episodes: int = 20
    eval_interval: int = 10

    class Config:
        """Set the config for pydantic."""

        extra = Extra.forbid

    @validator("epochs", "updates_per_epoch")
    def _non_negative(cls, value):  # pylint: disable=no-self-argument
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @validator("episodes_per_epoch", "batch_size", "eval_episodes", "eval_interval")
    def _positive(cls, value):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError("must be positive")
        return value

    @validator("lr")
    def _lr_positive(cls, value):  # pylint: disable=no-self-argument
        if value <= 0:
            raise ValueError("lr must be positive")
        return value

    @validator("target_update")
    def _known_schedule(cls, value):  # pylint: disable=no-self-argument
        if value not in ("epoch", "step"):
            raise ValueError("target_update must be 'epoch' or 'step'")
        return value

    @validator("epsilon", "target_mix", "future_prob")
    def _probability(cls, value):  # pylint: disable=no-self-argument
        if not 0.0 <= value <= 1.0:
            raise ValueError("must lie in [0, 1]")
        return value


class DeepNets(BaseModel):
    """Represent the online network, its target and the optimizer state."""

    q: Mlp
    target: Mlp
    adam: AdamState

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True


def init_nets(env: TorusEnv, hidden, rng: Rng) -> DeepNets:
    """Return freshly initialized networks for ``env``."""
    net = init_mlp([input_width(env), *hidden, env.n_actions], rng)
    return DeepNets(q=net, target=net.copy(deep=True), adam=adam_init(net.params))


def _head_seeds(actions, values, n_actions):
    seeds = np.zeros((len(actions), n_actions))
    seeds[np.arange(len(actions)), actions] = values
    return seeds


def delta_dqn_direction(
    net: Mlp, target: Mlp, env: TorusEnv, batch: TransitionBatch, goals
) -> np.ndarray:
    """Return the batch-averaged δ-DQN ascent direction for independent ``goals``.

    ``c grad q(s, a, phi(s)) + grad q(s, a, g) delta`` with the frozen coefficient
    ``delta = gamma max q_tar(s', ., g) - q(s, a, g)``
    with ``c = env.reward_scale``; no reward is ever evaluated.
    """
    count = len(batch.actions)
    frozen, next_frozen = _flags(env, batch.frozen), _flags(env, batch.next_frozen)
    at_goal = q_inputs(batch.states, goals, frozen)
    bootstrap = mlp_forward_batch(
        target, q_inputs(batch.next_states, goals, next_frozen)
    )
    bootstrap = bootstrap.max(axis=1)
    current = mlp_forward_batch(net, at_goal)[np.arange(count), batch.actions]
    coefficient = env.discount * bootstrap - current
    dirac = mlp_param_gradient_batch(
        net,
        q_inputs(batch.states, batch.states, frozen),
        _head_seeds(batch.actions, env.reward_scale, env.n_actions),
    )
    decay = mlp_param_gradient_batch(
        net, at_goal, _head_seeds(batch.actions, coefficient, env.n_actions)
    )
    return (dirac + decay) / count


def td_direction(
    net: Mlp, target: Mlp, env: TorusEnv, batch: TransitionBatch, goals, rewards
) -> np.ndarray:
    """Return the batch-averaged squared-TD ascent direction."""
    count = len(batch.actions)
    frozen, next_frozen = _flags(env, batch.frozen), _flags(env, batch.next_frozen)
    inputs = q_inputs(batch.states, goals, frozen)
    bootstrap = mlp_forward_batch(
        target, q_inputs(batch.next_states, goals, next_frozen)
    )
    bootstrap = bootstrap.max(axis=1)
    current = mlp_forward_batch(net, inputs)[np.arange(count), batch.actions]
    error = rewards + env.discount * bootstrap - current
    return (
        mlp_param_gradient_batch(
            net, inputs, _head_seeds(batch.actions, error, env.n_actions)
        )
        / count
    )


def _apply_direction(nets: DeepNets, direction, lr) -> DeepNets:
    params, adam = adam_step(nets.q.params, direction, nets.adam, lr)
    if not np.all(np.isfinite(params)):
        raise NumericalError("q network parameters")
    net = Mlp(sizes=nets.q.sizes, params=params)
    return DeepNets(q=net, target=nets.target, adam=adam)


def deep_delta_dqn_step(
    nets: DeepNets, buffer: ReplayBuffer, env: TorusEnv, cfg: DeepConfig, rng: Rng
):
    """Apply one δ-DQN gradient step; return the networks and step counters."""
    batch = sample_batch(buffer, cfg.batch_size, rng)
    goals = rng.randoms((cfg.batch_size, env.dim))
    direction = delta_dqn_direction(nets.q, nets.target, env, batch, goals)
    info = {"dirac_count": cfg.batch_size, "reward_count": 0}
    return _apply_direction(nets, direction, cfg.lr), info


def relabel_goals(buffer: ReplayBuffer, batch: TransitionBatch, future_prob, rng: Rng):
    """Return the batch goals, each replaced w.p. ``future_prob`` by a future state.

    The future index is uniform over ``t .. T`` for a transition at step ``t``.
    """
    goals = batch.goals.copy()
    if future_prob > 0.0:
        count = len(batch.step)
        relabel = rng.randoms(count) < future_prob
        offsets = rng.integers(buffer.horizon - batch.step + 1, count)
        future = buffer.states[batch.traj, batch.step + offsets]
        goals[relabel] = future[relabel]
    return goals


def deep_her_step(
    nets: DeepNets,
    buffer: ReplayBuffer,
    env: TorusEnv,
    cfg: DeepConfig,
    rng: Rng,
    future_prob: Optional[float] = None,
):
    """Apply one HER gradient step on the scaled sparse reward."""
    future_prob = cfg.future_prob if future_prob is None else future_prob
    batch = sample_batch(buffer, cfg.batch_size, rng)
    goals = relabel_goals(buffer, batch, future_prob, rng)
    rewards = envs.torus_reward(batch.states, goals, env)
    direction = td_direction(
        nets.q, nets.target, env, batch, goals, cfg.reward_scale * rewards
    )
    info = {"dirac_count": 0, "reward_count": int(np.count_nonzero(rewards))}
    return _apply_direction(nets, direction, cfg.lr), info


def deep_uvfa_step(
    nets: DeepNets, buffer: ReplayBuffer, env: TorusEnv, cfg: DeepConfig, rng: Rng
):
    """Apply one UVFA gradient step, i.e. HER without relabelling."""
    return deep_her_step(nets, buffer, env, cfg, rng, future_prob=0.0)


STEPS: Dict[str, Callable] = {
    "deep_uvfa": deep_uvfa_step,
    "deep_her": deep_her_step,
    "deep_delta_dqn": deep_delta_dqn_step,
}


def collect_episodes(
    net: Optional[Mlp], env: TorusEnv, n_episodes: int, epsilon: float, rng: Rng
):
    """Roll out ε-greedy episodes; ``net=None`` acts uniformly at random.

    Returns states ``(E, T + 1, n)``, actions ``(E, T)``, goals ``(E, n)`` and
    the frozen flags ``(E, T + 1)``.
    """
    goals = rng.randoms((n_episodes, env.dim))
    states = np.empty((n_episodes, env.horizon + 1, env.dim))
    actions = np.empty((n_episodes, env.horizon), dtype=np.int64)
    frozen = np.zeros((n_episodes, env.horizon + 1), dtype=bool)
    states[:, 0] = rng.randoms((n_episodes, env.dim))
    for step in range(env.horizon):
        current = states[:, step]
        chosen = rng.integers(env.n_actions, n_episodes)
        if net is not None and epsilon < 1.0:
            inputs = q_inputs(current, goals, _flags(env, frozen[:, step]))
            greedy = np.argmax(mlp_forward_batch(net, inputs), axis=1)
            explore = rng.randoms(n_episodes) < epsilon
            chosen = np.where(explore, chosen, greedy)
        actions[:, step] = chosen
        states[:, step + 1], frozen[:, step + 1] = torus_transition(
            current, frozen[:, step], chosen, env, rng
        )
    return states, actions, goals, frozen


def greedy_summary(net: Mlp, env: TorusEnv, episodes: int, rng: Rng):
    """Return the mean final distance and the frozen share of greedy episodes."""
    states, _, goals, frozen = collect_episodes(net, env, episodes, 0.0, rng)
    distance = float(np.mean(torus_distance(states[:, -1], goals)))
    return distance, float(np.mean(frozen[:, -1]))


def evaluate_policy(net: Mlp, env: TorusEnv, episodes: int, rng: Rng) -> float:
    """Return the mean final torus distance of greedy episodes."""
    return greedy_summary(net, env, episodes, rng)[0]


def save_checkpoint(net: Mlp, path):
    """Write a network to a msgpack checkpoint."""
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "sizes": list(net.sizes),
        "params": net.params.astype("<f8").tobytes(),
    }
    Path(path).write_bytes(msgpack.dumps(payload))


def load_checkpoint(path) -> Mlp:
    """Read a network from a msgpack checkpoint."""
    try:
        payload = msgpack.loads(Path(path).read_bytes())
    except (ValueError, msgpack.ExtraData) as err:
        raise ConfigurationError(f"{path} is not a checkpoint") from err
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path} is not a checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"unsupported checkpoint version {payload.get('version')}"
        )
    params = np.frombuffer(payload["params"], dtype="<f8").astype(np.float64)
    return Mlp(sizes=payload["sizes"], params=params)


def deep_train(algo: str, env: TorusEnv, cfg: DeepConfig, rng: Rng):
    """Run a deep learner on the torus; return ``(metric rows, networks)``."""
    if algo not in STEPS:
        raise ConfigurationError(f"unknown deep algorithm '{algo}'")
    step_fn = STEPS[algo]
    nets = init_nets(env, cfg.hidden, rng.spawn(0))
    eval_rng = rng.spawn(1)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.horizon, env.dim)
    rows = []
    updates = 0
    counts = {"dirac_count": 0, "reward_count": 0}
    for epoch in range(cfg.epochs):
        episodes = collect_episodes(
            nets.q, env, cfg.episodes_per_epoch, cfg.epsilon, rng
        )
        buffer.add(*episodes)
        for _ in range(cfg.updates_per_epoch):
            nets, info = step_fn(nets, buffer, env, cfg, rng)
            if cfg.target_update == "step":
                nets.target = soft_target_update(nets.target, nets.q, cfg.target_mix)
            for key in counts:
                counts[key] += info[key]
            updates += 1
        if cfg.target_update == "epoch":
            nets.target = soft_target_update(nets.target, nets.q, cfg.target_mix)
        if (epoch + 1) % cfg.eval_interval == 0 or epoch + 1 == cfg.epochs:
            episode = (epoch + 1) * cfg.episodes_per_epoch
            distance, frozen = greedy_summary(
                nets.q, env, cfg.eval_episodes, eval_rng
            )
            samples = max(updates * cfg.batch_size, 1)
            key = "dirac_count" if algo == "deep_delta_dqn" else "reward_count"
            metrics = [
                ("mean_final_distance", distance),
                (key.replace("_count", "_fraction"), counts[key] / samples),
            ]
            if env.freeze:
                metrics.append(("greedy_frozen_share", frozen))
            rows.extend(
                MetricRow(
                    step=updates,
                    episode=episode,
                    metric=name,
                    value=value,
                    seed=rng.seed,
                )
                for name, value in metrics
            )
            logger.info(
                "%s epoch %d: mean final distance %.4f", algo, epoch + 1, distance
            )
    return rows, nets
