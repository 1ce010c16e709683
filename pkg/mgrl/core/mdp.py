"""Provide policies, kernels and trajectory sampling for finite MDPs."""
import logging
import sys

import numpy as np

from mgrl.core import (
    ConfigurationError,
    FiniteMultiGoalMdp,
    TabularPolicy,
    Trajectory,
    as_table,
    check_policy_dims,
)
from mgrl.core.rng import Rng

logging.basicConfig(stream=sys.stdout)
logger = logging.getLogger("mdp")
logger.setLevel(logging.INFO)


def sample_trajectory(
    mdp: FiniteMultiGoalMdp, policy: TabularPolicy, horizon: int, rng: Rng
) -> Trajectory:
    """Sample one trajectory.

    Draw order: the goal from the goal distribution, the initial state, then
    for every step the action followed by the next state. A call consumes
    exactly ``2 + 2 * horizon`` draws from ``rng``.
    """
    if horizon < 1:
        raise ConfigurationError("horizon must be at least 1")
    check_policy_dims(mdp, policy)
    goal = rng.categorical(mdp.goal_dist)
    states = np.empty(horizon + 1, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    states[0] = rng.categorical(mdp.init_dist[goal])
    for step in range(horizon):
        actions[step] = rng.categorical(policy.probs[states[step], goal])
        states[step + 1] = rng.categorical(
            mdp.transition[states[step], actions[step]]
        )
    return Trajectory(goal=goal, states=states, actions=actions)


def policy_transition_kernel(
    mdp: FiniteMultiGoalMdp, policy: TabularPolicy
) -> np.ndarray:
    """Return the per-goal state kernel ``P[g, s, s']`` under the policy."""
    check_policy_dims(mdp, policy)
    return np.einsum("sga,sat->gst", policy.probs, mdp.transition)


def k_step_kernel(mdp: FiniteMultiGoalMdp, policy: TabularPolicy, k: int):
    """Return ``(P^pi)^k`` per goal by repeated multiplication."""
    if k < 0:
        raise ConfigurationError("k must be non-negative")
    kernel = policy_transition_kernel(mdp, policy)
    result = np.broadcast_to(np.eye(mdp.n_states), kernel.shape).copy()
    for _ in range(k):
        result = result @ kernel
    return result


def greedy_actions(q) -> np.ndarray:
    """Return ``argmax_a q[s, a, g]`` as an (S, G) table, lowest index on ties."""
    return np.argmax(as_table(q, "q"), axis=1)


def epsilon_greedy(q, epsilon: float) -> TabularPolicy:
    """Return the epsilon-greedy policy of a Q table."""
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigurationError("epsilon must lie in [0, 1]")
    table = as_table(q, "q")
    n_states, n_actions, n_goals = table.shape
    probs = np.full((n_states, n_goals, n_actions), epsilon / n_actions)
    best = greedy_actions(table)
    rows, cols = np.meshgrid(np.arange(n_states), np.arange(n_goals), indexing="ij")
    probs[rows, cols, best] += 1.0 - epsilon
    return TabularPolicy(probs=probs)


def greedy_policy(q) -> TabularPolicy:
    """Return the deterministic greedy policy of a Q table."""
    return epsilon_greedy(q, 0.0)


def uniform_policy(n_states: int, n_goals: int, n_actions: int) -> TabularPolicy:
    """Return the uniform policy."""
    return TabularPolicy(
        probs=np.full((n_states, n_goals, n_actions), 1.0 / n_actions)
    )


def softmax_probs(logits) -> np.ndarray:
    """Return the row-wise softmax over the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def softmax_policy(logits) -> TabularPolicy:
    """Return the softmax policy of a logit table ``theta[s, g, a]``."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ConfigurationError("logits must be finite")
    return TabularPolicy(probs=softmax_probs(logits), logits=logits.copy())
