"""Provide exact solvers and exact expected updates on finite MDPs.

Tables of the δ-methods are densities with respect to the goal
distribution: ``q(s, a, g) = Q(s, a, {g}) / rho_G(g)``. With a uniform goal
distribution this is ``G * Q``.
"""
import logging
import math
import sys
from typing import Callable, List, Optional, Union

import numpy as np
from pydantic import BaseModel, validator  # pylint: disable=no-name-in-module

from mgrl.core import (
    ConfigurationError,
    ConvergenceError,
    FiniteMultiGoalMdp,
    GoalDensityTable,
    TabularPolicy,
    TabularQ,
    TruncationError,
    as_table,
    check_policy_dims,
)
from mgrl.core.mdp import policy_transition_kernel, softmax_policy, softmax_probs
from mgrl.envs import DyadicTree

logging.basicConfig(stream=sys.stdout)
logger = logging.getLogger("oracle")
logger.setLevel(logging.INFO)

TAIL_BOUND = 1e-10


# Optimal values


def _greedy_backup(mdp: FiniteMultiGoalMdp, table: np.ndarray) -> np.ndarray:
    """Return ``sum_s' P(s'|s, a) max_a' table(s', a', g)``."""
    return np.einsum("sat,tg->sag", mdp.transition, table.max(axis=1))


def _value_iteration(mdp, reward, tol, max_iter, what):
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    table = np.zeros((mdp.n_states, mdp.n_actions, mdp.n_goals))
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        updated = reward[:, None, :] + mdp.discount * _greedy_backup(mdp, table)
        if np.any(updated < table - 1e-12 * (1.0 + np.abs(table))):
            raise ConvergenceError(
                f"{what}: value iteration lost monotonicity", residual, iteration
            )
        residual = float(np.max(np.abs(updated - table)))
        table = updated
        if residual < tol:
            logger.debug("%s converged after %d sweeps", what, iteration)
            return table
    logger.error("%s did not converge, residual %.3e", what, residual)
    raise ConvergenceError(f"{what} did not converge", residual, max_iter)


def density_bellman_backup(mdp: FiniteMultiGoalMdp, q) -> np.ndarray:
    """Apply the optimal Bellman operator to a density table."""
    table = as_table(q, "q")
    reward = mdp.dirac_density()
    return reward[:, None, :] + mdp.discount * _greedy_backup(mdp, table)


def solve_q_star(mdp: FiniteMultiGoalMdp, tol=1e-12, max_iter=100000) -> TabularQ:
    """Return the density of the smallest fixed point Q* by value iteration."""
    return TabularQ(
        q=_value_iteration(mdp, mdp.dirac_density(), tol, max_iter, "solve_q_star")
    )


def q_star_finite(mdp: FiniteMultiGoalMdp, tol=1e-12, max_iter=100000) -> TabularQ:
    """Return Q* for the finite reward ``1{phi(s) = g}``."""
    return TabularQ(
        q=_value_iteration(mdp, mdp.goal_onehot(), tol, max_iter, "q_star_finite")
    )


def density_to_q(mdp: FiniteMultiGoalMdp, q) -> TabularQ:
    """Convert a density table to raw values."""
    return TabularQ(q=as_table(q, "q") * mdp.goal_dist[None, None, :])


def q_to_density(mdp: FiniteMultiGoalMdp, q) -> TabularQ:
    """Convert raw values to a density table."""
    return TabularQ(q=as_table(q, "q") / mdp.goal_dist[None, None, :])


def greedy_action_share(q, states, goals, action) -> float:
    """Return the fraction of ``(s, g)`` pairs whose greedy action is ``action``."""
    table = as_table(q, "q")
    best = np.argmax(table[np.ix_(states, np.arange(table.shape[1]), goals)], axis=1)
    return float(np.mean(best == action))


# Successor goal measures


def _solve_per_goal(matrix_fn, rhs, n_goals):
    solutions = []
    for goal in range(n_goals):
        try:
            solutions.append(np.linalg.solve(matrix_fn(goal), rhs(goal)))
        except np.linalg.LinAlgError as err:
            raise ConfigurationError(f"singular system for goal {goal}") from err
    return np.stack(solutions)


def solve_m_pi(mdp: FiniteMultiGoalMdp, policy: TabularPolicy) -> GoalDensityTable:
    """Return the density of the successor goal measure of a policy."""
    kernel = policy_transition_kernel(mdp, policy)
    eye = np.eye(mdp.n_states)
    density = mdp.dirac_density()
    # per-goal solutions are [g, s, g']
    per_goal = _solve_per_goal(
        lambda g: eye - mdp.discount * kernel[g], lambda g: density, mdp.n_goals
    )
    return GoalDensityTable(m=per_goal.transpose(1, 0, 2))


def apply_t_pi(mdp: FiniteMultiGoalMdp, policy: TabularPolicy, m) -> np.ndarray:
    """Apply the density Bellman operator of a policy once."""
    table = as_table(m, "m")
    kernel = policy_transition_kernel(mdp, policy)
    propagated = np.einsum("gst,tgx->sgx", kernel, table)
    return mdp.dirac_density()[:, None, :] + mdp.discount * propagated


def solve_nu_pi(
    mdp: FiniteMultiGoalMdp, policy: TabularPolicy, pk_gamma: float
) -> np.ndarray:
    """Return ``nu[g, s0, s] = (1 - p) sum_k p^k (P^pi)^k``."""
    if not 0.0 < pk_gamma < 1.0:
        raise ConfigurationError("pk_gamma must lie in (0, 1)")
    kernel = policy_transition_kernel(mdp, policy)
    eye = np.eye(mdp.n_states)
    return (1.0 - pk_gamma) * _solve_per_goal(
        lambda g: eye - pk_gamma * kernel[g], lambda g: eye, mdp.n_goals
    )


def discounted_visitation(mdp: FiniteMultiGoalMdp, policy: TabularPolicy):
    """Return ``d[g, s] = sum_s0 rho_0(s0|g) sum_t gamma^t (P^pi)^t(s0, s)``."""
    kernel = policy_transition_kernel(mdp, policy)
    eye = np.eye(mdp.n_states)
    resolvent = _solve_per_goal(
        lambda g: eye - mdp.discount * kernel[g], lambda g: eye, mdp.n_goals
    )
    return np.einsum("gs,gst->gt", mdp.init_dist, resolvent)


def exact_expected_return(mdp: FiniteMultiGoalMdp, policy: TabularPolicy) -> float:
    """Return J, the expected return with Dirac rewards, in density scale."""
    m = solve_m_pi(mdp, policy).m
    diagonal = m[:, np.arange(mdp.n_goals), np.arange(mdp.n_goals)]  # [s, g]
    return float(np.einsum("g,gs,sg->", mdp.goal_dist, mdp.init_dist, diagonal))


# HER sampling distribution


class HerConfig(BaseModel):
    """Represent the resampling parameters of hindsight experience replay."""

    alpha: float = 0.8
    pk_gamma: float = 0.9
    pl_gamma: float = 0.9
    truncation: int = 4000
    exploration: Optional[TabularPolicy] = None

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True

    @validator("alpha")
    def _alpha_range(cls, value):  # pylint: disable=no-self-argument
        if not 0.0 <= value <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        return value

    @validator("pk_gamma")
    def _pk_range(cls, value):  # pylint: disable=no-self-argument
        if not 0.0 < value < 1.0:
            raise ValueError("pk_gamma must lie in (0, 1)")
        return value

    @validator("pl_gamma")
    def _pl_range(cls, value):  # pylint: disable=no-self-argument
        if not 0.0 <= value < 1.0:
            raise ValueError("pl_gamma must lie in [0, 1)")
        return value

    @validator("truncation")
    def _truncation_positive(cls, value):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError("truncation must be positive")
        return value


class HerDistribution(BaseModel):
    """Represent the exact sampling distribution of HER.

    ``mu[s, a, s', g]`` is the joint law of a resampled transition,
    ``mu_tilde[s, a, g]`` its factor on deterministic MDPs and ``nu[s, g]``
    the visitation of the sampled state given the original goal.
    """

    mu: np.ndarray
    mu_tilde: Optional[np.ndarray] = None
    nu: np.ndarray

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True

    @validator("mu")
    def _is_distribution(cls, value):  # pylint: disable=no-self-argument
        if np.any(value < -1e-15) or abs(value.sum() - 1.0) > 1e-8:
            raise ValueError("mu must be a probability table")
        return value


def geometric_pmf(continuation: float, count: int) -> np.ndarray:
    """Return ``(1 - p) p^k`` for ``k = 0..count``."""
    return (1.0 - continuation) * continuation ** np.arange(count + 1)


def _check_truncation(cfg: HerConfig):
    worst = max(cfg.pk_gamma, cfg.pl_gamma)
    tail = worst ** (cfg.truncation + 1)
    if tail >= TAIL_BOUND:
        required = math.ceil(math.log(TAIL_BOUND) / math.log(worst))
        raise TruncationError(
            f"geometric tail {tail:.3e} exceeds {TAIL_BOUND}", required
        )


def future_goal_distribution(mdp: FiniteMultiGoalMdp, cfg: HerConfig):
    """Return ``mu_future[s, s', g~, g]``, the law of the relabelled goal.

    ``s`` is the sampled state, ``s'`` its successor and ``g~`` the original
    goal; ``l = 0`` relabels with ``phi(s)``, ``l >= 1`` with the goal reached
    ``l - 1`` steps after ``s'``.
    """
    _check_truncation(cfg)
    kernel = policy_transition_kernel(mdp, cfg.exploration)
    weights = geometric_pmf(cfg.pl_gamma, cfg.truncation)
    total = weights.sum()
    later = np.zeros_like(kernel)
    power = np.broadcast_to(np.eye(mdp.n_states), kernel.shape).copy()
    for weight in weights[1:]:
        later += weight * power
        power = power @ kernel
    onehot = mdp.goal_onehot()
    now = weights[0] * onehot[:, None, None, :]  # [s, -, -, g]
    after = np.einsum("hts,sg->thg", later, onehot)[None]  # [-, s', g~, g]
    return (now + after) / total


def her_distribution(mdp: FiniteMultiGoalMdp, cfg: HerConfig) -> HerDistribution:
    """Return the exact sampling distribution of HER on a finite MDP."""
    if cfg.exploration is None:
        raise ConfigurationError("HER needs an exploration policy")
    check_policy_dims(mdp, cfg.exploration)
    nu_full = solve_nu_pi(mdp, cfg.exploration, cfg.pk_gamma)
    nu = np.einsum("gu,gus->sg", mdp.init_dist, nu_full)
    # weight[s, a, g] = rho_G(g) nu(s|g) pi(a|s, g)
    weight = np.einsum("g,sg,sga->sag", mdp.goal_dist, nu, cfg.exploration.probs)
    original = np.einsum("sag,sat->satg", weight, mdp.transition)
    future = future_goal_distribution(mdp, cfg)
    relabelled = np.einsum("sah,sat,sthg->satg", weight, mdp.transition, future)
    mu = (1.0 - cfg.alpha) * original + cfg.alpha * relabelled
    mu_tilde = mu.sum(axis=2) if mdp.is_deterministic else None
    logger.debug("HER distribution assembled, total mass %.12f", mu.sum())
    return HerDistribution(mu=mu, mu_tilde=mu_tilde, nu=nu)


def her_conditional_kernel(mdp: FiniteMultiGoalMdp, dist: HerDistribution):
    """Return ``mu(s' | s, a, g)`` as a [s, a, s', g] table."""
    marginal = dist.mu.sum(axis=2, keepdims=True)
    if np.any(marginal <= 0):
        raise ConfigurationError("HER never samples some (s, a, g) triples")
    return dist.mu / marginal


def her_fixed_point(
    mdp: FiniteMultiGoalMdp, dist: HerDistribution, tol=1e-12, max_iter=100000
) -> TabularQ:
    """Return the expected fixed point of HER in raw value scale."""
    kernel = her_conditional_kernel(mdp, dist)
    reward = mdp.goal_onehot()[:, None, :]
    table = np.zeros((mdp.n_states, mdp.n_actions, mdp.n_goals))
    damping = 1.0
    previous = math.inf
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        target = reward + mdp.discount * np.einsum(
            "satg,tg->sag", kernel, table.max(axis=1)
        )
        residual = float(np.max(np.abs(target - table)))
        if residual < tol:
            logger.debug("HER fixed point reached after %d sweeps", iteration)
            return TabularQ(q=target)
        if residual > previous and damping == 1.0:
            logger.info("HER iteration oscillates, damping by 0.5")
            damping = 0.5
        previous = residual
        table = (1.0 - damping) * table + damping * target
    logger.error("HER fixed point did not converge, residual %.3e", residual)
    raise ConvergenceError("her_fixed_point did not converge", residual, max_iter)


# Expected updates


def _uniform_weights(shape):
    return np.full(shape, 1.0 / np.prod(shape))


def expected_update_delta_dqn(mdp: FiniteMultiGoalMdp, q_theta, q_tar, rho_sa=None):
    """Return the exact expected δ-DQN update."""
    q_theta, q_tar = as_table(q_theta, "q"), as_table(q_tar, "q")
    if rho_sa is None:
        rho_sa = _uniform_weights((mdp.n_states, mdp.n_actions))
    target = mdp.discount * _greedy_backup(mdp, q_tar) - q_theta
    inner = mdp.goal_onehot()[:, None, :] + mdp.goal_dist[None, None, :] * target
    return np.asarray(rho_sa)[:, :, None] * inner


def density_bellman_residual(mdp: FiniteMultiGoalMdp, q_theta, q_tar, rho_sa=None):
    """Return half the squared distance between ``Q_theta`` and ``T Q_tar``.

    The norm weights ``(s, a)`` by ``rho_sa`` and goals by ``rho_G`` and is
    taken between densities.
    """
    if rho_sa is None:
        rho_sa = _uniform_weights((mdp.n_states, mdp.n_actions))
    gap = as_table(q_theta, "q") - density_bellman_backup(mdp, q_tar)
    weights = np.asarray(rho_sa)[:, :, None] * mdp.goal_dist[None, None, :]
    return 0.5 * float(np.sum(weights * gap**2))


def expected_update_uvfa(
    mdp: FiniteMultiGoalMdp, q_theta, q_tar, rho_sa=None, eps_reward_indicator=None
):
    """Return the exact expected UVFA update with reward ``R(s, g)``."""
    q_theta, q_tar = as_table(q_theta, "q"), as_table(q_tar, "q")
    if rho_sa is None:
        rho_sa = _uniform_weights((mdp.n_states, mdp.n_actions))
    if eps_reward_indicator is None:
        eps_reward_indicator = mdp.goal_onehot()
    error = (
        np.asarray(eps_reward_indicator)[:, None, :]
        + mdp.discount * _greedy_backup(mdp, q_tar)
        - q_theta
    )
    return np.asarray(rho_sa)[:, :, None] * mdp.goal_dist[None, None, :] * error


def expected_update_her(mdp: FiniteMultiGoalMdp, dist: HerDistribution, q_theta, q_tar):
    """Return the exact expected HER update under its sampling distribution."""
    q_theta, q_tar = as_table(q_theta, "q"), as_table(q_tar, "q")
    boot = q_tar.max(axis=1)  # [s', g]
    error = (
        mdp.goal_onehot()[:, None, None, :]
        + mdp.discount * boot[None, None, :, :]
        - q_theta[:, :, None, :]
    )
    return np.sum(dist.mu * error, axis=2)


def her_bellman_residual(mdp: FiniteMultiGoalMdp, mu_tilde, q_theta, q_tar) -> float:
    """Return half the squared Bellman error in the ``mu_tilde`` weighted norm."""
    target = mdp.goal_onehot()[:, None, :] + mdp.discount * _greedy_backup(
        mdp, as_table(q_tar, "q")
    )
    gap = as_table(q_theta, "q") - target
    return 0.5 * float(np.sum(np.asarray(mu_tilde) * gap**2))


def expected_update_delta_td(
    mdp: FiniteMultiGoalMdp, policy: TabularPolicy, m_theta, m_tar, rho_sg=None, n=1
):
    """Return the exact expected δ-TD(n) update.

    Coordinate ``(s, g, x)`` is
    ``rho_SG(s, g) [sum_{l<n} gamma^l P(phi(s_l) = x)
    + rho_G(x) (gamma^n E m_tar(s_n, g, x) - m_theta(s, g, x))]``.
    """
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    m_theta, m_tar = as_table(m_theta, "m"), as_table(m_tar, "m")
    if rho_sg is None:
        rho_sg = _uniform_weights((mdp.n_states, mdp.n_goals))
    kernel = policy_transition_kernel(mdp, policy)
    gamma = mdp.discount
    onehot = mdp.goal_onehot()
    power = np.broadcast_to(np.eye(mdp.n_states), kernel.shape).copy()
    dirac = np.zeros((mdp.n_states, mdp.n_goals, mdp.n_goals))
    for step in range(n):
        dirac += gamma**step * np.einsum("gst,tx->sgx", power, onehot)
        power = power @ kernel
    boot = np.einsum("gst,tgx->sgx", power, m_tar)
    inner = dirac + mdp.goal_dist[None, None, :] * (gamma**n * boot - m_theta)
    return np.asarray(rho_sg)[:, :, None] * inner


# Policy gradient


def _advantages(mdp: FiniteMultiGoalMdp, m, baseline=None):
    table = as_table(m, "m")
    goals = np.arange(mdp.n_goals)
    value = table[:, goals, goals]  # [s, g]
    advantage = (
        mdp.discount * np.einsum("sat,tg->sag", mdp.transition, value)
        - value[:, None, :]
    )
    if baseline is not None:
        advantage = advantage - np.asarray(baseline)[:, None, :]
    return advantage


def expected_update_delta_ac(mdp: FiniteMultiGoalMdp, logits, m, baseline=None):
    """Return the exact expected actor update of δ-Actor-Critic.

    ``baseline[s, g]`` is subtracted from the critic advantage; it leaves the
    result unchanged.
    """
    logits = np.asarray(logits, dtype=np.float64)
    policy = softmax_policy(logits)
    visitation = discounted_visitation(mdp, policy)  # [g, s]
    advantage = _advantages(mdp, m, baseline).transpose(0, 2, 1)  # [s, g, a]
    probs = policy.probs
    centred = advantage - np.sum(probs * advantage, axis=-1, keepdims=True)
    weight = mdp.goal_dist[None, :] * visitation.T  # [s, g]
    return weight[:, :, None] * probs * centred


def numeric_gradient(func: Callable[[np.ndarray], float], point, step=1e-5):
    """Return central finite differences of a scalar function of an array."""
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        shifted = point.copy()
        shifted[index] += step
        upper = func(shifted)
        shifted[index] -= 2.0 * step
        lower = func(shifted)
        grad[index] = (upper - lower) / (2.0 * step)
    return grad


def finite_difference_grad_J(  # pylint: disable=invalid-name
    mdp: FiniteMultiGoalMdp, logits, step=1e-5
):
    """Return central differences of the exact expected return in the logits."""
    check_shape = (mdp.n_states, mdp.n_goals, mdp.n_actions)
    if np.shape(logits) != check_shape:
        raise ConfigurationError(f"logits must have shape {check_shape}")
    return numeric_gradient(
        lambda theta: exact_expected_return(
            mdp, TabularPolicy(probs=softmax_probs(theta))
        ),
        logits,
        step,
    )


def cosine_similarity(first, second) -> float:
    """Return the cosine of the angle between two flattened arrays."""
    first, second = np.ravel(first), np.ravel(second)
    denom = np.linalg.norm(first) * np.linalg.norm(second)
    if denom == 0:
        return 1.0 if np.allclose(first, second) else 0.0
    return float(first @ second / denom)


def proportionality_residual(first, second) -> float:
    """Return the relative residual of the best fit ``second ~ c * first``."""
    first, second = np.ravel(first), np.ravel(second)
    scale = float(first @ second / (first @ first)) if first @ first > 0 else 0.0
    norm = np.linalg.norm(second)
    return float(np.linalg.norm(second - scale * first) / norm) if norm else 0.0


# Mass of Q_t on the dyadic tree


def _tree_moves(tree: Union[FiniteMultiGoalMdp, DyadicTree]):
    if isinstance(tree, DyadicTree):
        return tree.successors, tree.goal_of

    def successors(node, action):
        row = tree.transition[node, action]
        return [(int(succ), float(row[succ])) for succ in np.flatnonzero(row)]

    return successors, lambda node: int(tree.goal_map[node])


def finite_horizon_mass(
    tree: Union[FiniteMultiGoalMdp, DyadicTree],
    horizon: int,
    gamma: Optional[float] = None,
    state=0,
) -> np.ndarray:
    """Return the total goal mass of ``Q_t(state, a, .) = (T^t 0)(state, a, .)``.

    Measures are propagated as sparse ``{goal: mass}`` maps; the supremum over
    actions is the pointwise maximum. Returns one mass per action. A
    ``DyadicTree`` is walked through its child function and only the nodes
    within ``horizon`` steps of ``state`` are visited.
    """
    if horizon < 1:
        raise ConfigurationError("horizon must be at least 1")
    gamma = tree.discount if gamma is None else gamma
    successors, goal_of = _tree_moves(tree)
    memo = {}

    def value_measure(node, steps):
        # sup_a Q_steps(node, a, .)
        key = (node, steps)
        if key not in memo:
            merged = {}
            for action in range(tree.n_actions):
                for goal, mass in q_measure(node, action, steps).items():
                    if mass > merged.get(goal, 0.0):
                        merged[goal] = mass
            memo[key] = merged
        return memo[key]

    def q_measure(node, action, steps):
        measure = {goal_of(node): 1.0}
        if steps <= 1:
            return measure
        for succ, prob in successors(node, action):
            for goal, mass in value_measure(succ, steps - 1).items():
                measure[goal] = measure.get(goal, 0.0) + gamma * prob * mass
        return measure

    return np.array(
        [
            sum(q_measure(state, action, horizon).values())
            for action in range(tree.n_actions)
        ]
    )


class DyadicMassReport(BaseModel):
    """Represent the finite-horizon masses on the dyadic tree."""

    depth: int
    gamma: float
    masses: List[float]
    monotone: bool
    diverges: bool
    limit: Optional[float]
    tail_bounds: List[float]


def dyadic_mass_limit(gamma: float) -> Optional[float]:
    """Return ``1 + gamma / (1 - 2 gamma)``, or None when the mass is infinite."""
    return None if gamma >= 0.5 else 1.0 + gamma / (1.0 - 2.0 * gamma)


def dyadic_mass_report(depth: int, gamma: float) -> DyadicMassReport:
    """Return masses at the root for horizons ``1..depth`` with their tail bounds."""
    tree = DyadicTree(depth=depth, discount=gamma)
    masses = [
        float(finite_horizon_mass(tree, t, gamma)[0]) for t in range(1, depth + 1)
    ]
    monotone = all(later >= earlier for earlier, later in zip(masses, masses[1:]))
    diverges = gamma >= 0.5
    if diverges:
        tails = [math.inf] * depth
    else:
        tails = [
            0.5 * (2.0 * gamma) ** t / (1.0 - 2.0 * gamma) for t in range(1, depth + 1)
        ]
    logger.info(
        "dyadic tree depth %d, gamma %.3f: mass %.6f at t=%d",
        depth,
        gamma,
        masses[-1],
        depth,
    )
    return DyadicMassReport(
        depth=depth,
        gamma=gamma,
        masses=masses,
        monotone=monotone,
        diverges=diverges,
        limit=dyadic_mass_limit(gamma),
        tail_bounds=tails,
    )
