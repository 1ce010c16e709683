"""Provide the stochastic tabular learners and their training loop."""
import logging
import math
import sys
from typing import List, Optional, Tuple

import numpy as np
from pydantic import (  # pylint: disable=no-name-in-module
    BaseModel,
    Extra,
    validator,
)

from mgrl.core import (
    ConfigurationError,
    FiniteMultiGoalMdp,
    MetricRow,
    NumericalError,
    TabularPolicy,
    Trajectory,
    TrajectoryTooShortError,
    TransitionSample,
)
from mgrl.core.mdp import (
    epsilon_greedy,
    greedy_policy,
    sample_trajectory,
    softmax_policy,
    softmax_probs,
    uniform_policy,
)
from mgrl.core.rng import Rng
from mgrl.envs import unfrozen_states
from mgrl.oracle import (
    HerConfig,
    exact_expected_return,
    greedy_action_share,
    q_star_finite,
    solve_m_pi,
    solve_q_star,
)

logging.basicConfig(stream=sys.stdout)
logger = logging.getLogger("tabular")
logger.setLevel(logging.INFO)

ALGOS = ("uvfa", "her", "delta_dqn", "delta_td", "delta_ac")
MAX_REDRAWS = 1000


class LearningRate(BaseModel):
    """Represent the schedule ``initial / (1 + decay * t)``."""

    initial: float = 0.1
    decay: float = 0.0

    @validator("initial")
    def _positive(cls, value):  # pylint: disable=no-self-argument
        if value <= 0:
            raise ValueError("learning rate must be positive")
        return value

    @validator("decay")
    def _non_negative(cls, value):  # pylint: disable=no-self-argument
        if value < 0:
            raise ValueError("decay must be non-negative")
        return value

    def value(self, step: int) -> float:
        """Return the learning rate at ``step``."""
        return self.initial / (1.0 + self.decay * step)


class LearnerState(BaseModel):
    """Represent the mutable state of a tabular learner.

    ``table`` is ``q[s, a, g]`` for the Q-learners and ``m[s, g, g']`` for
    δ-TD and the δ-Actor-Critic critic. A missing ``target`` means the
    learner bootstraps on its own table.
    """

    mdp: FiniteMultiGoalMdp
    table: np.ndarray
    target: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None
    steps: int = 0

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True

    @property
    def bootstrap(self) -> np.ndarray:
        """Return the table used for bootstrapping."""
        return self.table if self.target is None else self.target


def init_learner(algo: str, mdp: FiniteMultiGoalMdp, use_target=False) -> LearnerState:
    """Return a zero-initialized learner state."""
    if algo not in ALGOS:
        raise ConfigurationError(f"unknown tabular algorithm '{algo}'")
    if algo in ("delta_td", "delta_ac"):
        table = np.zeros((mdp.n_states, mdp.n_goals, mdp.n_goals))
    else:
        table = np.zeros((mdp.n_states, mdp.n_actions, mdp.n_goals))
    logits = None
    if algo == "delta_ac":
        logits = np.zeros((mdp.n_states, mdp.n_goals, mdp.n_actions))
    return LearnerState(
        mdp=mdp,
        table=table,
        target=table.copy() if use_target else None,
        logits=logits,
    )


def _guard(value, where):
    if not math.isfinite(value):
        raise NumericalError(where)


# Single-sample updates


def _apply(state: LearnerState, increments, lr, where):
    # increments land in order; every value was computed before the first one
    for index, value in increments:
        state.table[index] += lr * value
        _guard(state.table[index], where)
    state.steps += 1
    return state


def uvfa_direction(state: LearnerState, sample: TransitionSample):
    """Return the UVFA increment as a list of ``(index, value)`` pairs."""
    mdp = state.mdp
    s, a, s_next, g = sample
    reward = 1.0 if mdp.goal_map[s] == g else 0.0
    boot = state.bootstrap[s_next, :, g].max()
    return [((s, a, g), reward + mdp.discount * boot - state.table[s, a, g])]


def uvfa_step(state: LearnerState, sample: TransitionSample, lr: float):
    """Apply ``Q(s,a,g) += lr (1{phi(s)=g} + gamma max Q(s',.,g) - Q(s,a,g))``."""
    return _apply(state, uvfa_direction(state, sample), lr, "uvfa table")


def her_step(state: LearnerState, resampled: TransitionSample, lr: float):
    """Apply the UVFA rule to a relabelled transition, bootstrapping at ``s'``."""
    return uvfa_step(state, resampled, lr)


def her_draw(cfg: HerConfig, horizon: int, rng: Rng) -> Tuple[int, int, int]:
    """Draw ``(U, K, L)`` for a trajectory with ``horizon`` transitions.

    ``K`` is redrawn until ``K < horizon``. ``L`` is only drawn when ``U = 1``
    and is redrawn until ``K + L <= horizon``.
    """
    relabel = int(rng.bernoulli(cfg.alpha))
    for _ in range(MAX_REDRAWS):
        index = rng.geometric(cfg.pk_gamma)
        if index < horizon:
            break
    else:
        raise TrajectoryTooShortError(f"no K below the horizon {horizon}")
    offset = 0
    if relabel:
        for _ in range(MAX_REDRAWS):
            offset = rng.geometric(cfg.pl_gamma)
            if index + offset <= horizon:
                break
        else:
            raise TrajectoryTooShortError(f"no K + L within the horizon {horizon}")
    return relabel, index, offset


def her_resample(
    traj: Trajectory, cfg: HerConfig, rng: Rng, goal_map: np.ndarray
) -> TransitionSample:
    """Return a transition of ``traj`` with its goal possibly relabelled."""
    relabel, index, offset = her_draw(cfg, traj.length, rng)
    goal = traj.goal
    if relabel:
        goal = int(goal_map[traj.states[index + offset]])
    return TransitionSample(
        s=int(traj.states[index]),
        a=int(traj.actions[index]),
        s_next=int(traj.states[index + 1]),
        g=goal,
    )


def delta_dqn_direction(state: LearnerState, sample: TransitionSample):
    """Return the Dirac increment followed by the decay increment."""
    mdp = state.mdp
    s, a, s_next, g = sample
    boot = state.bootstrap[s_next, :, g].max()
    return [
        ((s, a, int(mdp.goal_map[s])), 1.0),
        ((s, a, g), mdp.discount * boot - state.table[s, a, g]),
    ]


def delta_dqn_step(state: LearnerState, sample: TransitionSample, lr: float):
    """Apply the two-entry δ-DQN update for an independently drawn goal.

    The Dirac increment lands first; the decay term uses the value read
    before it.
    """
    return _apply(state, delta_dqn_direction(state, sample), lr, "delta_dqn table")


def delta_td_direction(state: LearnerState, segment, g: int, g_prime: int, n=1):
    """Return the δ-TD(n) increments for the states ``s_k .. s_{k+n}``."""
    mdp = state.mdp
    segment = np.asarray(segment)
    if n < 1 or len(segment) != n + 1:
        raise ConfigurationError(f"a δ-TD({n}) segment holds {n + 1} states")
    start = int(segment[0])
    gamma = mdp.discount
    increments = [
        ((start, g, int(mdp.goal_map[segment[step]])), gamma**step)
        for step in range(n)
    ]
    boot = state.bootstrap[segment[n], g, g_prime]
    increments.append(
        ((start, g, g_prime), gamma**n * boot - state.table[start, g, g_prime])
    )
    return increments


def delta_td_n_step(state: LearnerState, segment, g: int, g_prime: int, lr, n=1):
    """Apply the δ-TD(n) update for the states ``s_k .. s_{k+n}``."""
    return _apply(
        state, delta_td_direction(state, segment, g, g_prime, n), lr, "delta_td table"
    )


def actor_direction(state: LearnerState, t: int, transition: TransitionSample):
    """Return ``gamma^t d log pi(a|s,g) (gamma m(s',g,g) - m(s,g,g))`` on row (s, g)."""
    mdp = state.mdp
    s, a, s_next, g = transition
    advantage = mdp.discount * state.table[s_next, g, g] - state.table[s, g, g]
    score = -softmax_probs(state.logits[s, g])
    score[a] += 1.0
    return mdp.discount**t * score * advantage


def delta_ac_step(
    state: LearnerState,
    t: int,
    transition: TransitionSample,
    lr_m: float,
    lr_pi: float,
    g_prime: int,
):
    """Apply one step of δ-Actor-Critic: the δ-TD critic, then the actor."""
    s, _, s_next, g = transition
    direction = actor_direction(state, t, transition)
    delta_td_n_step(state, (s, s_next), g, g_prime, lr_m, 1)
    state.logits[s, g] += lr_pi * direction
    if not np.all(np.isfinite(state.logits[s, g])):
        raise NumericalError("delta_ac logits")
    return state


# Batched estimators used by the Monte-Carlo checks


def sample_transition_batch(mdp: FiniteMultiGoalMdp, count: int, rng: Rng, rho_sa=None):
    """Draw ``(s, a) ~ rho_sa``, ``s' ~ P`` and an independent ``g ~ rho_G``."""
    if rho_sa is None:
        rho_sa = np.full(
            (mdp.n_states, mdp.n_actions), 1.0 / mdp.n_states / mdp.n_actions
        )
    pair = rng.categoricals(np.broadcast_to(np.ravel(rho_sa), (count, np.size(rho_sa))))
    states, actions = np.divmod(pair, mdp.n_actions)
    next_states = rng.categoricals(mdp.transition[states, actions])
    goals = rng.categoricals(np.broadcast_to(mdp.goal_dist, (count, mdp.n_goals)))
    return states, actions, next_states, goals


def _moments(sums, squares, count, shape):
    mean = sums / count
    std = np.sqrt(np.maximum(squares / count - mean**2, 0.0))
    return mean.reshape(shape), std.reshape(shape)


def _increment_table(state: LearnerState, direction_fn, keys, shape):
    """Return one dense row per key holding ``direction_fn(state, *key)``."""
    rows = np.zeros((len(keys), int(np.prod(shape))))
    for row, key in zip(rows, keys):
        for index, value in direction_fn(state, *key):
            row[np.ravel_multi_index(index, shape)] += value
    return rows


def delta_dqn_update_moments(
    mdp: FiniteMultiGoalMdp, q, q_tar, count: int, rng: Rng, rho_sa=None, chunk=20000
):
    """Return the per-coordinate mean and std of sampled δ-DQN increments.

    Each distinct ``(s, a, s', g)`` is passed once through
    ``delta_dqn_direction``; the draws then weight those increments.
    """
    shape = (mdp.n_states, mdp.n_actions, mdp.n_goals)
    keys_shape = (mdp.n_states, mdp.n_actions, mdp.n_states, mdp.n_goals)
    learner = LearnerState(
        mdp=mdp,
        table=np.array(q, dtype=np.float64),
        target=np.array(q_tar, dtype=np.float64),
    )
    increments = _increment_table(
        learner,
        lambda state, *key: delta_dqn_direction(state, TransitionSample(*key)),
        list(np.ndindex(*keys_shape)),
        shape,
    )
    counts = np.zeros(len(increments))
    done = 0
    while done < count:
        batch = min(chunk, count - done)
        drawn = sample_transition_batch(mdp, batch, rng, rho_sa)
        codes = np.ravel_multi_index(drawn, keys_shape)
        counts += np.bincount(codes, minlength=len(increments))
        done += batch
    sums = counts @ increments
    squares = counts @ increments**2
    return _moments(sums, squares, count, shape)


def delta_td_update_moments(
    mdp: FiniteMultiGoalMdp,
    policy: TabularPolicy,
    m,
    m_tar,
    n: int,
    count: int,
    rng: Rng,
    rho_sg=None,
    chunk=20000,
):
    """Return the per-coordinate mean and std of sampled δ-TD(n) increments.

    Draws ``(s, g)`` from ``rho_sg``, rolls ``n`` steps of the policy and an
    independent ``g'``; every distinct draw goes once through
    ``delta_td_direction``.
    """
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    shape = (mdp.n_states, mdp.n_goals, mdp.n_goals)
    keys_shape = (mdp.n_states, mdp.n_goals) + (mdp.n_states,) * n + (mdp.n_goals,)
    learner = LearnerState(
        mdp=mdp,
        table=np.array(m, dtype=np.float64),
        target=np.array(m_tar, dtype=np.float64),
    )

    def direction(state, start, goal, *rest):
        return delta_td_direction(state, (start, *rest[:-1]), goal, rest[-1], n)

    increments = _increment_table(
        learner, direction, list(np.ndindex(*keys_shape)), shape
    )
    if rho_sg is None:
        rho_sg = np.full((mdp.n_states, mdp.n_goals), 1.0 / mdp.n_states / mdp.n_goals)
    counts = np.zeros(len(increments))
    done = 0
    while done < count:
        batch = min(chunk, count - done)
        pair = rng.categoricals(
            np.broadcast_to(np.ravel(rho_sg), (batch, np.size(rho_sg)))
        )
        start, goal = np.divmod(pair, mdp.n_goals)
        path, current = [], start
        for _ in range(n):
            actions = rng.categoricals(policy.probs[current, goal])
            current = rng.categoricals(mdp.transition[current, actions])
            path.append(current)
        g_prime = rng.categoricals(np.broadcast_to(mdp.goal_dist, (batch, mdp.n_goals)))
        codes = np.ravel_multi_index((start, goal, *path, g_prime), keys_shape)
        counts += np.bincount(codes, minlength=len(increments))
        done += batch
    return _moments(counts @ increments, counts @ increments**2, count, shape)


def actor_update_moments(
    mdp: FiniteMultiGoalMdp,
    logits,
    m,
    count: int,
    rng: Rng,
    horizon: Optional[int] = None,
    chunk=10000,
):
    """Return mean and std of the summed actor updates of whole trajectories.

    The critic ``m`` is held fixed; trajectories are cut once ``gamma^t``
    falls below 1e-10.
    """
    logits = np.asarray(logits, dtype=np.float64)
    m = np.asarray(getattr(m, "m", m))
    probs = softmax_probs(logits)
    gamma = mdp.discount
    if horizon is None:
        horizon = 1 if gamma == 0 else int(math.ceil(math.log(1e-10) / math.log(gamma)))
    shape = logits.shape
    size = int(np.prod(shape))
    sums, squares = np.zeros(size), np.zeros(size)
    goals_idx = np.arange(mdp.n_goals)
    value = m[:, goals_idx, goals_idx]  # [s, g]
    done = 0
    while done < count:
        batch = min(chunk, count - done)
        goal = rng.categoricals(np.broadcast_to(mdp.goal_dist, (batch, mdp.n_goals)))
        state = rng.categoricals(mdp.init_dist[goal])
        totals = np.zeros((batch, size))
        for step in range(horizon):
            row = probs[state, goal]
            action = rng.categoricals(row)
            next_state = rng.categoricals(mdp.transition[state, action])
            advantage = gamma * value[next_state, goal] - value[state, goal]
            score = -row
            score[np.arange(batch), action] += 1.0
            base = np.ravel_multi_index((state, goal, np.zeros_like(state)), shape)
            cols = base[:, None] + np.arange(mdp.n_actions)[None, :]
            np.add.at(
                totals,
                (np.repeat(np.arange(batch), mdp.n_actions), cols.ravel()),
                (gamma**step * score * advantage[:, None]).ravel(),
            )
            state = next_state
        sums += totals.sum(axis=0)
        squares += (totals**2).sum(axis=0)
        done += batch
    return _moments(sums, squares, count, shape)


# Training loop


class HerSettings(BaseModel):
    """Represent the HER resampling section of a configuration."""

    alpha: float = 0.8
    pk_gamma: float = 0.9
    pl_gamma: float = 0.9

    class Config:
        """Set the config for pydantic."""

        extra = Extra.forbid


class TrainConfig(BaseModel):
    """Represent the parameters of a tabular training run."""

    episodes: int = 100
    horizon: int = 50
    updates_per_episode: int = 50
    lr: float = 0.1
    lr_decay: float = 0.0
    lr_actor: float = 0.05
    exploration: str = "uniform"
    epsilon: float = 0.2
    target_period: Optional[int] = None
    eval_interval: int = 10
    td_n: int = 1

    class Config:
        """Set the config for pydantic."""

        extra = Extra.forbid

    @validator("episodes", "updates_per_episode")
    def _non_negative(cls, value):  # pylint: disable=no-self-argument
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @validator("horizon", "eval_interval", "td_n")
    def _positive(cls, value):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError("must be positive")
        return value

    @validator("target_period")
    def _period_positive(cls, value):  # pylint: disable=no-self-argument
        if value is not None and value < 1:
            raise ValueError("target_period must be positive")
        return value

    @validator("exploration")
    def _known_exploration(cls, value):  # pylint: disable=no-self-argument
        if value not in ("uniform", "epsilon_greedy", "softmax"):
            raise ValueError(f"unknown exploration '{value}'")
        return value

    @validator("epsilon")
    def _epsilon_range(cls, value):  # pylint: disable=no-self-argument
        if not 0.0 <= value <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        return value


def _behaviour_policy(algo, state: LearnerState, cfg: TrainConfig) -> TabularPolicy:
    mdp = state.mdp
    if algo in ("uvfa", "her", "delta_dqn") and cfg.exploration == "epsilon_greedy":
        return epsilon_greedy(state.table, cfg.epsilon)
    return uniform_policy(mdp.n_states, mdp.n_goals, mdp.n_actions)


def _reference(algo, mdp):
    if algo in ("uvfa", "her"):
        return q_star_finite(mdp).q
    if algo == "delta_dqn":
        return solve_q_star(mdp).q
    if algo == "delta_td":
        return solve_m_pi(
            mdp, uniform_policy(mdp.n_states, mdp.n_goals, mdp.n_actions)
        ).m
    return None


def evaluate_learner(algo, state: LearnerState, reference) -> List[Tuple[str, float]]:
    """Return the exact metrics of a learner state."""
    mdp = state.mdp
    if algo == "delta_ac":
        policy = softmax_policy(state.logits)
        critic = solve_m_pi(mdp, policy).m
        return [
            ("sup_distance", float(np.max(np.abs(state.table - critic)))),
            ("expected_return", exact_expected_return(mdp, policy)),
        ]
    metrics = [("sup_distance", float(np.max(np.abs(state.table - reference))))]
    if algo == "delta_td":
        policy = uniform_policy(mdp.n_states, mdp.n_goals, mdp.n_actions)
    else:
        policy = greedy_policy(state.table)
    metrics.append(("expected_return", exact_expected_return(mdp, policy)))
    if mdp.freeze_action is not None and algo != "delta_td":
        share = greedy_action_share(
            state.table, unfrozen_states(mdp), np.arange(mdp.n_goals), mdp.freeze_action
        )
        metrics.append(("greedy_freeze_share", share))
    return metrics


def _actor_critic_episode(state, cfg, schedule, rng):
    mdp = state.mdp
    goal = rng.categorical(mdp.goal_dist)
    current = rng.categorical(mdp.init_dist[goal])
    for step in range(cfg.horizon):
        action = rng.categorical(softmax_probs(state.logits[current, goal]))
        next_state = rng.categorical(mdp.transition[current, action])
        g_prime = rng.categorical(mdp.goal_dist)
        decay = schedule.value(state.steps) / schedule.initial
        delta_ac_step(
            state,
            step,
            TransitionSample(current, action, next_state, goal),
            schedule.value(state.steps),
            cfg.lr_actor * decay,
            g_prime,
        )
        current = next_state


def train(
    algo: str,
    mdp: FiniteMultiGoalMdp,
    cfg: TrainConfig,
    rng: Rng,
    her: Optional[HerSettings] = None,
):
    """Run a tabular learner and return ``(metric rows, final state)``.

    UVFA, HER and δ-DQN draw their transitions from the same HER sampler;
    UVFA and δ-DQN use it with ``alpha = 0`` and δ-DQN then replaces the goal
    by an independent draw from the goal distribution.
    """
    her = her or HerSettings()
    state = init_learner(algo, mdp, use_target=cfg.target_period is not None)
    if algo in ("delta_td", "delta_ac") and cfg.horizon < cfg.td_n:
        raise ConfigurationError("horizon must cover the δ-TD(n) segment")
    sampler = HerConfig(
        alpha=her.alpha if algo == "her" else 0.0,
        pk_gamma=her.pk_gamma,
        pl_gamma=her.pl_gamma,
    )
    schedule = LearningRate(initial=cfg.lr, decay=cfg.lr_decay)
    reference = _reference(algo, mdp)
    rows = []
    for episode in range(cfg.episodes):
        if algo == "delta_ac":
            _actor_critic_episode(state, cfg, schedule, rng)
        else:
            behaviour = _behaviour_policy(algo, state, cfg)
            traj = sample_trajectory(mdp, behaviour, cfg.horizon, rng)
            for _ in range(cfg.updates_per_episode):
                lr = schedule.value(state.steps)
                if algo == "delta_td":
                    start = rng.integer(cfg.horizon - cfg.td_n + 1)
                    segment = traj.states[start : start + cfg.td_n + 1]
                    g_prime = rng.categorical(mdp.goal_dist)
                    delta_td_n_step(state, segment, traj.goal, g_prime, lr, cfg.td_n)
                else:
                    sample = her_resample(traj, sampler, rng, mdp.goal_map)
                    if algo == "delta_dqn":
                        sample = sample._replace(g=rng.categorical(mdp.goal_dist))
                        delta_dqn_step(state, sample, lr)
                    else:
                        her_step(state, sample, lr)
                if cfg.target_period and state.steps % cfg.target_period == 0:
                    state.target = state.table.copy()
        if not np.all(np.isfinite(state.table)):
            raise NumericalError(f"{algo} table after episode {episode + 1}")
        if (episode + 1) % cfg.eval_interval == 0 or episode + 1 == cfg.episodes:
            for name, value in evaluate_learner(algo, state, reference):
                rows.append(
                    MetricRow(
                        step=state.steps,
                        episode=episode + 1,
                        metric=name,
                        value=value,
                        seed=rng.seed,
                    )
                )
            logger.debug("%s episode %d: %s", algo, episode + 1, rows[-1].value)
    logger.info("%s finished %d episodes, %d updates", algo, cfg.episodes, state.steps)
    return rows, state
