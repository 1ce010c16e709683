"""Provide the environments used by the learners."""
import logging
import sys
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, validator  # pylint: disable=no-name-in-module

from mgrl.core import ConfigurationError, FiniteMultiGoalMdp
from mgrl.core.rng import Rng

logging.basicConfig(stream=sys.stdout)
logger = logging.getLogger("envs")
logger.setLevel(logging.INFO)


def _uniform_goal_tables(n_states):
    goal_dist = np.full(n_states, 1.0 / n_states)
    init_dist = np.full((n_states, n_states), 1.0 / n_states)
    return goal_dist, init_dist


def make_random_mdp(
    n_states: int, n_actions: int, branching: int, rng: Rng, discount: float = 0.9
) -> FiniteMultiGoalMdp:
    """Return a random MDP with ``branching`` successors per state-action."""
    if not 1 <= branching <= n_states:
        raise ConfigurationError("branching must lie in [1, n_states]")
    transition = np.zeros((n_states, n_actions, n_states))
    for state in range(n_states):
        for action in range(n_actions):
            # partial Fisher-Yates shuffle picks the support
            candidates = list(range(n_states))
            for pos in range(branching):
                swap = pos + rng.integer(n_states - pos)
                candidates[pos], candidates[swap] = candidates[swap], candidates[pos]
            # flat Dirichlet weights from normalized exponentials
            weights = -np.log1p(-rng.randoms(branching))
            weights = np.maximum(weights, 1e-300)
            transition[state, action, candidates[:branching]] = weights / weights.sum()
    transition /= transition.sum(axis=-1, keepdims=True)
    goal_dist, init_dist = _uniform_goal_tables(n_states)
    return FiniteMultiGoalMdp(
        n_states=n_states,
        n_actions=n_actions,
        n_goals=n_states,
        transition=transition,
        goal_map=np.arange(n_states),
        goal_dist=goal_dist,
        init_dist=init_dist,
        discount=discount,
    )


def reachability_matrix(mdp: FiniteMultiGoalMdp) -> np.ndarray:
    """Return the reflexive transitive closure of the support graph."""
    reach = (mdp.transition.max(axis=1) > 0) | np.eye(mdp.n_states, dtype=bool)
    for mid in range(mdp.n_states):
        reach = reach | (reach[:, mid, None] & reach[None, mid, :])
    return reach


def make_deterministic_reachable_mdp(
    n_states: int, n_actions: int, rng: Rng, discount: float = 0.9
) -> FiniteMultiGoalMdp:
    """Return a deterministic, strongly connected MDP.

    Action 0 moves along the cycle ``s -> s + 1``; the other actions jump to
    random states.
    """
    if n_actions < 2:
        raise ConfigurationError("at least two actions are required")
    transition = np.zeros((n_states, n_actions, n_states))
    for state in range(n_states):
        transition[state, 0, (state + 1) % n_states] = 1.0
        for action in range(1, n_actions):
            transition[state, action, rng.integer(n_states)] = 1.0
    goal_dist, init_dist = _uniform_goal_tables(n_states)
    mdp = FiniteMultiGoalMdp(
        n_states=n_states,
        n_actions=n_actions,
        n_goals=n_states,
        transition=transition,
        goal_map=np.arange(n_states),
        goal_dist=goal_dist,
        init_dist=init_dist,
        discount=discount,
    )
    assert reachability_matrix(mdp).all(), "cycle action must connect all states"
    return mdp


def make_ring_mdp(
    n_states: int, slip: float = 0.0, discount: float = 0.9
) -> FiniteMultiGoalMdp:
    """Return a ring of states with actions -1 and +1.

    The intended move happens with probability ``1 - slip``; otherwise the
    agent stays or moves the other way, each with probability ``slip / 2``.
    """
    if not 0.0 <= slip <= 1.0:
        raise ConfigurationError("slip must lie in [0, 1]")
    transition = np.zeros((n_states, 2, n_states))
    for state in range(n_states):
        for action, move in enumerate((-1, 1)):
            transition[state, action, (state + move) % n_states] += 1.0 - slip
            transition[state, action, state] += slip / 2.0
            transition[state, action, (state - move) % n_states] += slip / 2.0
    goal_dist, init_dist = _uniform_goal_tables(n_states)
    return FiniteMultiGoalMdp(
        n_states=n_states,
        n_actions=2,
        n_goals=n_states,
        transition=transition,
        goal_map=np.arange(n_states),
        goal_dist=goal_dist,
        init_dist=init_dist,
        discount=discount,
    )


def augment_with_freeze(base: FiniteMultiGoalMdp) -> FiniteMultiGoalMdp:
    """Return the MDP augmented with a freeze action.

    Augmented state ``(s, x)`` has index ``x * S + s``; ``x = 1`` marks a
    frozen state and the freeze action has index ``A``.
    """
    if base.freeze_action is not None:
        raise ConfigurationError("the MDP already carries a freeze action")
    n_s, n_a = base.n_states, base.n_actions
    transition = np.zeros((2 * n_s, n_a + 1, 2 * n_s))
    transition[:n_s, :n_a, :n_s] = base.transition
    transition[:n_s, n_a, n_s:] = 1.0 / n_s
    frozen = np.arange(n_s, 2 * n_s)
    transition[frozen, :, frozen] = 1.0
    init_dist = np.zeros((base.n_goals, 2 * n_s))
    init_dist[:, :n_s] = base.init_dist
    return FiniteMultiGoalMdp(
        n_states=2 * n_s,
        n_actions=n_a + 1,
        n_goals=base.n_goals,
        transition=transition,
        goal_map=np.concatenate([base.goal_map, base.goal_map]),
        goal_dist=base.goal_dist.copy(),
        init_dist=init_dist,
        discount=base.discount,
        freeze_action=n_a,
    )


def unfrozen_states(mdp: FiniteMultiGoalMdp) -> np.ndarray:
    """Return the indices of the unfrozen states of a freeze augmentation."""
    if mdp.freeze_action is None:
        return np.arange(mdp.n_states)
    return np.arange(mdp.n_states // 2)


class DyadicTree(BaseModel):
    """Represent the truncated dyadic tree by its child function, without a kernel."""

    depth: int
    discount: float = 0.4

    class Config:
        """Set the config for pydantic."""

        allow_mutation = False

    @validator("depth")
    def _check_depth(cls, value):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError("depth must be at least 1")
        return value

    @property
    def n_actions(self) -> int:
        """Return the number of actions."""
        return 2

    @property
    def n_states(self) -> int:
        """Return the number of nodes."""
        return 2 ** (self.depth + 1) - 1

    def successors(self, state: int, action: int) -> List[Tuple[int, float]]:
        """Return ``[(child, 1.0)]``; leaves at ``depth`` loop on themselves."""
        if state < 2**self.depth - 1:
            return [(2 * state + 1 + action, 1.0)]
        return [(state, 1.0)]

    @staticmethod
    def goal_of(state: int) -> int:
        """Return the goal reached in ``state``."""
        return state


def dyadic_tree_mdp(depth: int, discount: float = 0.4) -> FiniteMultiGoalMdp:
    """Return the dyadic tree truncated at ``depth``.

    States use heap order: the children of ``i`` are ``2i + 1`` (append 0)
    and ``2i + 2`` (append 1). Leaves at ``depth`` loop on themselves.
    """
    if depth < 1:
        raise ConfigurationError("depth must be at least 1")
    tree = DyadicTree(depth=depth, discount=discount)
    n_states = tree.n_states
    transition = np.zeros((n_states, 2, n_states))
    for state in range(n_states):
        for action in range(2):
            for target, prob in tree.successors(state, action):
                transition[state, action, target] = prob
    init_dist = np.zeros((n_states, n_states))
    init_dist[:, 0] = 1.0
    return FiniteMultiGoalMdp(
        n_states=n_states,
        n_actions=2,
        n_goals=n_states,
        transition=transition,
        goal_map=np.arange(n_states),
        goal_dist=np.full(n_states, 1.0 / n_states),
        init_dist=init_dist,
        discount=discount,
    )


def dyadic_label(index: int) -> str:
    """Return the binary string of a dyadic tree state."""
    label = ""
    while index > 0:
        label = str((index - 1) % 2) + label
        index = (index - 1) // 2
    return label


def dyadic_depth(mdp: FiniteMultiGoalMdp) -> int:
    """Return the truncation depth of a dyadic tree MDP."""
    return int(round(np.log2(mdp.n_states + 1))) - 1


class TorusEnv(BaseModel):
    """Represent the Torus(n) environment parameters.

    With ``freeze`` an extra action jumps to a uniform point and freezes the
    agent there for the rest of the episode.
    """

    dim: int = 2
    step_size: float = 0.1
    noise_sigma: Optional[float] = None
    reward_eps: float = 0.05
    horizon: int = 200
    discount: float = 0.995
    reward_scale: float = 1e-2
    isotropic_noise: bool = True
    freeze: bool = False

    @validator("dim", "horizon")
    def _positive(cls, value):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError("must be positive")
        return value

    @validator("step_size")
    def _step_range(cls, value):  # pylint: disable=no-self-argument
        if not 0.0 < value < 0.5:
            raise ValueError("step_size must lie in (0, 0.5)")
        return value

    @validator("noise_sigma", always=True)
    def _default_sigma(cls, value, values):  # pylint: disable=no-self-argument
        if value is None:
            return 0.1 / values.get("dim", 1)
        if value < 0:
            raise ValueError("noise_sigma must be non-negative")
        return value

    @validator("reward_eps")
    def _eps_range(cls, value):  # pylint: disable=no-self-argument
        if not 0.0 < value < 0.5:
            raise ValueError("reward_eps must lie in (0, 0.5)")
        return value

    @validator("discount")
    def _discount_range(cls, value):  # pylint: disable=no-self-argument
        if not 0.0 <= value < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        return value

    @property
    def n_actions(self) -> int:
        """Return the number of discrete actions, the freeze action last."""
        return 2 * self.dim + int(self.freeze)

    @property
    def freeze_action(self) -> Optional[int]:
        """Return the index of the freeze action, if any."""
        return 2 * self.dim if self.freeze else None


class TorusState(BaseModel):
    """Represent a point of the torus and whether it is frozen there."""

    coords: np.ndarray
    frozen: bool = False

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True

    @validator("coords", pre=True)
    def _in_unit_cube(cls, value):  # pylint: disable=no-self-argument
        coords = np.atleast_1d(np.asarray(value, dtype=np.float64))
        if np.any(coords < 0.0) or np.any(coords >= 1.0):
            raise ValueError("coordinates must lie in [0, 1)")
        return coords


def _coords(point):
    return np.asarray(getattr(point, "coords", point), dtype=np.float64)


def wrap(coords) -> np.ndarray:
    """Return coordinates wrapped into [0, 1)."""
    wrapped = np.mod(coords, 1.0)
    # tiny negative inputs round up to exactly 1.0
    return np.where(wrapped >= 1.0, 0.0, wrapped)


def torus_action(index: int, env: TorusEnv) -> Tuple[int, float]:
    """Return ``(axis, displacement)`` of a discrete move index."""
    if not 0 <= index < env.n_actions:
        raise ConfigurationError(f"action {index} out of range")
    if index == env.freeze_action:
        raise ConfigurationError("the freeze action has no displacement")
    sign = 1.0 if index % 2 == 0 else -1.0
    return index // 2, sign * env.step_size


def torus_displacements(actions, env: TorusEnv) -> np.ndarray:
    """Return the noiseless displacement vectors of action indices.

    The freeze action displaces by zero.
    """
    actions = np.asarray(actions, dtype=np.int64)
    moving = actions < 2 * env.dim
    moves = np.zeros(actions.shape + (env.dim,))
    signs = np.where(actions % 2 == 0, 1.0, -1.0) * env.step_size * moving
    axes = np.where(moving, actions // 2, 0)
    np.put_along_axis(moves, axes[..., None], signs[..., None], axis=-1)
    return moves


def torus_noise(shape, axes, env: TorusEnv, rng: Rng) -> np.ndarray:
    """Return transition noise for a batch of moves along ``axes``."""
    if env.noise_sigma == 0.0:
        return np.zeros(shape)
    if env.isotropic_noise:
        return env.noise_sigma * rng.normals(shape)
    noise = np.zeros(shape)
    axes = np.minimum(np.asarray(axes, dtype=np.int64), env.dim - 1)
    values = env.noise_sigma * rng.normals(axes.shape)
    np.put_along_axis(noise, axes[..., None], values[..., None], axis=-1)
    return noise


def torus_step(state, action, env: TorusEnv, rng: Rng) -> TorusState:
    """Return the next torus state.

    ``action`` is an ``(axis, displacement)`` pair or an action index. A
    frozen state never moves; the freeze action jumps to a uniform point and
    freezes there.
    """
    if getattr(state, "frozen", False):
        return TorusState(coords=_coords(state).copy(), frozen=True)
    if np.ndim(action) == 0:
        if int(action) == env.freeze_action:
            return TorusState(coords=rng.randoms(env.dim), frozen=True)
        action = torus_action(int(action), env)
    axis, displacement = action
    if not 0 <= axis < env.dim:
        raise ConfigurationError(f"axis {axis} out of range")
    coords = _coords(state).copy()
    coords[axis] += displacement
    coords += torus_noise((env.dim,), np.asarray(axis), env, rng)
    return TorusState(coords=wrap(coords))


def torus_transition(states, frozen, actions, env: TorusEnv, rng: Rng):
    """Return ``(next states, next frozen flags)`` for a batch of moves.

    The noise is drawn for every row, then the freeze jumps when ``env.freeze``.
    """
    states = np.asarray(states, dtype=np.float64)
    frozen = np.asarray(frozen, dtype=bool)
    actions = np.asarray(actions, dtype=np.int64)
    moved = states + torus_displacements(actions, env)
    moved = wrap(moved + torus_noise(states.shape, actions // 2, env, rng))
    if not env.freeze:
        return moved, frozen.copy()
    jumps = rng.randoms(states.shape)
    jumping = (actions == env.freeze_action) & ~frozen
    moved = np.where(jumping[..., None], jumps, moved)
    moved = np.where(frozen[..., None], states, moved)
    return moved, frozen | jumping


def torus_inverse_step(state, action, env: TorusEnv) -> TorusState:
    """Return the state a noiseless ``action`` would have started from."""
    axis, displacement = action
    coords = _coords(state).copy()
    coords[axis] -= displacement
    return TorusState(coords=wrap(coords))


def torus_distance(state, goal):
    """Return the rescaled L1 distance on the torus."""
    delta = np.mod(_coords(state) - _coords(goal), 1.0)
    distance = np.minimum(delta, 1.0 - delta).mean(axis=-1)
    return float(distance) if np.ndim(distance) == 0 else distance


def torus_observe(state) -> np.ndarray:
    """Return the ``(cos 2 pi s, sin 2 pi s)`` embedding."""
    angles = 2.0 * np.pi * _coords(state)
    return np.concatenate([np.cos(angles), np.sin(angles)], axis=-1)


def torus_reward(state, goal, env: TorusEnv):
    """Return the sparse reward ``1{distance <= eps}``."""
    return np.asarray(torus_distance(state, goal) <= env.reward_eps, dtype=np.float64)


def torus_sample_state(env: TorusEnv, rng: Rng) -> TorusState:
    """Return a uniform point of the torus."""
    return TorusState(coords=rng.randoms(env.dim))


def torus_sample_goal(env: TorusEnv, rng: Rng) -> np.ndarray:
    """Return a goal drawn from the uniform goal distribution."""
    return rng.randoms(env.dim)
