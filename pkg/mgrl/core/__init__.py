"""Provide the core multi-goal MDP data model."""
import logging
import sys
from typing import NamedTuple, Optional

import numpy as np
from pydantic import (  # pylint: disable=no-name-in-module
    BaseModel,
    root_validator,
    validator,
)

logging.basicConfig(stream=sys.stdout)
logger = logging.getLogger("core")
logger.setLevel(logging.INFO)

PROB_TOL = 1e-12


class ConfigurationError(ValueError):
    """Represent an invalid parameter or a dimension mismatch."""

    def __init__(self, message):
        """Set up instance."""
        super().__init__(message)
        self.message = message


class ConvergenceError(RuntimeError):
    """Represent an iterative solver that did not converge."""

    def __init__(self, message, residual, iterations):
        """Set up instance."""
        super().__init__(
            f"{message} (residual={residual:.3e}, iterations={iterations})"
        )
        self.residual = residual
        self.iterations = iterations


class TruncationError(ValueError):
    """Represent a truncated series whose tail mass is too large."""

    def __init__(self, message, required):
        """Set up instance."""
        super().__init__(f"{message}, truncation of at least {required} required")
        self.required = required


class TrajectoryTooShortError(ValueError):
    """Represent a trajectory that cannot serve the requested resampling."""


class NumericalError(FloatingPointError):
    """Represent a non-finite value in a learner table or network."""

    def __init__(self, where):
        """Set up instance."""
        super().__init__(f"non-finite values detected in {where}")
        self.where = where


class EmptyBufferError(RuntimeError):
    """Represent sampling from an empty replay buffer."""


class MdpFormatError(ValueError):
    """Represent a malformed MDP file."""

    def __init__(self, message, line=None):
        """Set up instance."""
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
        self.message = message


def _as_float_array(value):
    return np.asarray(value, dtype=np.float64)


def _check_stochastic(array, name, axis=-1):
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(array < 0):
        raise ValueError(f"{name} has negative entries")
    sums = array.sum(axis=axis)
    worst = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
    if worst > PROB_TOL:
        raise ValueError(f"{name} rows must sum to 1 (max deviation {worst:.3e})")


class FiniteMultiGoalMdp(BaseModel):
    """Represent a finite multi-goal MDP.

    Arrays are indexed ``transition[s, a, s']``, ``goal_map[s]``,
    ``goal_dist[g]`` and ``init_dist[g, s0]``.
    """

    n_states: int
    n_actions: int
    n_goals: int
    transition: np.ndarray
    goal_map: np.ndarray
    goal_dist: np.ndarray
    init_dist: np.ndarray
    discount: float
    # index of the freeze action when this MDP is a freeze augmentation
    freeze_action: Optional[int] = None

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True

    _floats = validator(
        "transition", "goal_dist", "init_dist", pre=True, allow_reuse=True
    )(_as_float_array)

    @validator("goal_map", pre=True)
    def _goal_map_as_ints(cls, value):  # pylint: disable=no-self-argument
        array = np.asarray(value)
        if array.dtype.kind == "f":
            if not np.all(array == np.round(array)):
                raise ValueError("goal_map must hold integer goal indices")
        return array.astype(np.int64)

    @validator("n_states", "n_actions", "n_goals")
    def _positive(cls, value):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError("counts must be positive")
        return value

    @validator("discount")
    def _discount_range(cls, value):  # pylint: disable=no-self-argument
        if not 0.0 <= value < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        return value

    @root_validator(skip_on_failure=True)
    def _check_shapes(cls, values):  # pylint: disable=no-self-argument
        n_s, n_a, n_g = values["n_states"], values["n_actions"], values["n_goals"]
        expected = {
            "transition": (n_s, n_a, n_s),
            "goal_map": (n_s,),
            "goal_dist": (n_g,),
            "init_dist": (n_g, n_s),
        }
        for name, shape in expected.items():
            if values[name].shape != shape:
                raise ValueError(
                    f"{name} has shape {values[name].shape}, expected {shape}"
                )
        goal_map = values["goal_map"]
        if np.any(goal_map < 0) or np.any(goal_map >= n_g):
            raise ValueError("goal_map entries must lie in [0, n_goals)")
        _check_stochastic(values["transition"], "transition")
        _check_stochastic(values["goal_dist"], "goal_dist")
        _check_stochastic(values["init_dist"], "init_dist")
        freeze = values.get("freeze_action")
        if freeze is not None and not 0 <= freeze < n_a:
            raise ValueError("freeze_action must be a valid action index")
        return values

    @property
    def is_surjective(self) -> bool:
        """Return True if every goal is attained by some state."""
        return len(np.unique(self.goal_map)) == self.n_goals

    @property
    def is_deterministic(self) -> bool:
        """Return True if every transition row is a point mass."""
        return bool(np.all((self.transition == 0.0) | (self.transition == 1.0)))

    def goal_onehot(self) -> np.ndarray:
        """Return the indicator table ``1{phi(s) = g}`` of shape (S, G)."""
        onehot = np.zeros((self.n_states, self.n_goals))
        onehot[np.arange(self.n_states), self.goal_map] = 1.0
        return onehot

    def dirac_density(self) -> np.ndarray:
        """Return the density of the Dirac reward w.r.t. the goal distribution."""
        onehot = self.goal_onehot()
        with np.errstate(divide="ignore", invalid="ignore"):
            density = np.where(onehot > 0, onehot / self.goal_dist[None, :], 0.0)
        return density

    def shape_summary(self) -> str:
        """Return a one-line description of the MDP dimensions."""
        return (
            f"states={self.n_states} actions={self.n_actions} goals={self.n_goals} "
            f"discount={self.discount!r} deterministic={self.is_deterministic} "
            f"surjective={self.is_surjective}"
        )


class TabularPolicy(BaseModel):
    """Represent a goal-conditioned policy ``probs[s, g, a]``."""

    probs: np.ndarray
    logits: Optional[np.ndarray] = None

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True

    _floats = validator("probs", "logits", pre=True, allow_reuse=True)(
        lambda value: None if value is None else _as_float_array(value)
    )

    @root_validator(skip_on_failure=True)
    def _check_probs(cls, values):  # pylint: disable=no-self-argument
        probs, logits = values["probs"], values.get("logits")
        if probs.ndim != 3:
            raise ValueError("probs must be indexed [state, goal, action]")
        _check_stochastic(probs, "probs")
        if logits is not None:
            if logits.shape != probs.shape:
                raise ValueError("logits and probs shapes differ")
            if not np.all(np.isfinite(logits)):
                raise ValueError("logits must be finite")
            shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
            expected = shifted / shifted.sum(axis=-1, keepdims=True)
            if np.max(np.abs(probs - expected)) > 1e-12:
                raise ValueError("probs are not the softmax of the logits")
        return values

    @property
    def n_states(self) -> int:
        """Return the number of states."""
        return self.probs.shape[0]

    @property
    def n_goals(self) -> int:
        """Return the number of goals."""
        return self.probs.shape[1]

    @property
    def n_actions(self) -> int:
        """Return the number of actions."""
        return self.probs.shape[2]


class Trajectory(BaseModel):
    """Represent a sampled trajectory for a single goal."""

    goal: int
    states: np.ndarray
    actions: np.ndarray

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True

    @validator("states", "actions", pre=True)
    def _as_ints(cls, value):  # pylint: disable=no-self-argument
        return np.asarray(value, dtype=np.int64)

    @root_validator(skip_on_failure=True)
    def _check_lengths(cls, values):  # pylint: disable=no-self-argument
        if len(values["actions"]) != len(values["states"]) - 1:
            raise ValueError("a trajectory holds one more state than actions")
        if np.any(values["states"] < 0) or np.any(values["actions"] < 0):
            raise ValueError("indices must be non-negative")
        return values

    @property
    def length(self) -> int:
        """Return the number of transitions."""
        return len(self.actions)


class TransitionSample(NamedTuple):
    """Represent an observed transition ``(s, a, s', g)``."""

    s: int
    a: int
    s_next: int
    g: int


class TabularQ(BaseModel):
    """Represent a table ``q[s, a, g]``.

    The δ-methods store the density of ``Q(s, a, dg)`` with respect to the
    goal distribution, UVFA and HER store the raw values.
    """

    q: np.ndarray

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True

    _floats = validator("q", pre=True, allow_reuse=True)(_as_float_array)

    @validator("q")
    def _finite(cls, value):  # pylint: disable=no-self-argument
        if value.ndim != 3:
            raise ValueError("q must be indexed [state, action, goal]")
        if not np.all(np.isfinite(value)):
            raise ValueError("q has non-finite entries")
        return value


class GoalDensityTable(BaseModel):
    """Represent the density table ``m[s, g, g']`` of a successor goal measure."""

    m: np.ndarray

    class Config:
        """Set the config for pydantic."""

        arbitrary_types_allowed = True

    _floats = validator("m", pre=True, allow_reuse=True)(_as_float_array)

    @validator("m")
    def _finite(cls, value):  # pylint: disable=no-self-argument
        if value.ndim != 3 or value.shape[1] != value.shape[2]:
            raise ValueError("m must be indexed [state, goal, goal]")
        if not np.all(np.isfinite(value)):
            raise ValueError("m has non-finite entries")
        return value


def as_table(value, attr):
    """Return the raw array behind a table model or the array itself."""
    return np.asarray(getattr(value, attr, value), dtype=np.float64)


def check_policy_dims(mdp: FiniteMultiGoalMdp, policy: TabularPolicy):
    """Raise a configuration error if the policy does not fit the MDP."""
    expected = (mdp.n_states, mdp.n_goals, mdp.n_actions)
    if policy.probs.shape != expected:
        raise ConfigurationError(
            f"policy has shape {policy.probs.shape}, the MDP expects {expected}"
        )


class MetricRow(BaseModel):
    """Represent one logged metric value of a run."""

    step: int
    episode: int
    metric: str
    value: float
    seed: int
