"""Provide the experiment configuration models and their loader."""
from os import environ as env
from pathlib import Path
from typing import Optional, Union

import yaml
from dotenv import find_dotenv, load_dotenv
from pydantic import (  # pylint: disable=no-name-in-module
    BaseModel,
    Extra,
    root_validator,
    validator,
)

from mgrl.approx import DEEP_ALGOS, DeepConfig
from mgrl.core import ConfigurationError, FiniteMultiGoalMdp
from mgrl.core.rng import Rng
from mgrl.envs import (
    TorusEnv,
    augment_with_freeze,
    dyadic_tree_mdp,
    make_deterministic_reachable_mdp,
    make_random_mdp,
    make_ring_mdp,
)
from mgrl.mdpfile import load_mdp
from mgrl.tabular import ALGOS, HerSettings, TrainConfig

ENV_FILE = find_dotenv(usecwd=True)
if ENV_FILE:
    load_dotenv(ENV_FILE)

ENV_KINDS = ("random", "deterministic", "ring", "dyadic", "file", "torus")
FINITE_DISCOUNT = 0.9


class EnvSpec(BaseModel):
    """Represent the environment section of an experiment config.

    Finite kinds read ``n_states``, ``n_actions``, ``branching``, ``slip``,
    ``depth`` or ``path`` as they apply; ``freeze`` augments the result with a
    freeze action. The torus reads the remaining fields; there ``freeze`` adds
    the jump-and-freeze action.
    """

    kind: str
    discount: Optional[float] = None
    n_states: int = 5
    n_actions: int = 2
    branching: int = 2
    slip: float = 0.0
    depth: int = 4
    path: Optional[str] = None
    freeze: bool = False
    dim: int = 2
    step_size: float = 0.1
    noise_sigma: Optional[float] = None
    reward_eps: float = 0.05
    horizon: int = 200
    reward_scale: float = 1e-2
    isotropic_noise: bool = True

    class Config:
        """Set the config for pydantic."""

        extra = Extra.forbid

    @validator("kind")
    def _known_kind(cls, value):  # pylint: disable=no-self-argument
        if value not in ENV_KINDS:
            raise ValueError(f"unknown env kind '{value}', expected one of {ENV_KINDS}")
        return value

    @validator("discount")
    def _discount_range(cls, value):  # pylint: disable=no-self-argument
        if value is not None and not 0.0 <= value < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        return value

    @root_validator(skip_on_failure=True)
    def _check_path(cls, values):  # pylint: disable=no-self-argument
        if values["kind"] == "file" and not values.get("path"):
            raise ValueError("env kind 'file' needs a path")
        return values

    @property
    def is_torus(self) -> bool:
        """Return True for the continuous torus."""
        return self.kind == "torus"


class OutputSpec(BaseModel):
    """Represent where and what a run writes."""

    directory: str = "results"
    checkpoint: bool = False

    class Config:
        """Set the config for pydantic."""

        extra = Extra.forbid


class ExperimentConfig(BaseModel):
    """Represent one experiment."""

    seed: int = 0
    algo: str
    env: EnvSpec
    train: TrainConfig = TrainConfig()
    her: HerSettings = HerSettings()
    deep: DeepConfig = DeepConfig()
    output: OutputSpec = OutputSpec()

    class Config:
        """Set the config for pydantic."""

        extra = Extra.forbid

    @validator("algo")
    def _known_algo(cls, value):  # pylint: disable=no-self-argument
        if value not in ALGOS + DEEP_ALGOS:
            raise ValueError(f"unknown algo '{value}'")
        return value

    @root_validator(skip_on_failure=True)
    def _algo_fits_env(cls, values):  # pylint: disable=no-self-argument
        deep = values["algo"] in DEEP_ALGOS
        if deep and not values["env"].is_torus:
            raise ValueError(f"{values['algo']} runs on the torus only")
        if not deep and values["env"].is_torus:
            raise ValueError(f"{values['algo']} needs a finite env")
        return values


def load_config(path) -> ExperimentConfig:
    """Load and validate a YAML experiment config."""
    with open(path, encoding="utf-8") as fil:
        content = yaml.safe_load(fil)
    if not isinstance(content, dict):
        raise ConfigurationError(f"{path} does not hold a mapping")
    return ExperimentConfig.parse_obj(content)


def resolve_seed(config: ExperimentConfig) -> int:
    """Return the run seed, overridden by ``MGRL_SEED`` when it is set."""
    value = env.get("MGRL_SEED")
    if value is None or value == "":
        return config.seed
    try:
        return int(value)
    except ValueError as err:
        raise ConfigurationError(
            f"MGRL_SEED must be an integer, got '{value}'"
        ) from err


def build_env(spec: EnvSpec, rng: Rng) -> Union[FiniteMultiGoalMdp, TorusEnv]:
    """Return the environment described by ``spec``."""
    if spec.is_torus:
        return TorusEnv(
            dim=spec.dim,
            step_size=spec.step_size,
            noise_sigma=spec.noise_sigma,
            reward_eps=spec.reward_eps,
            horizon=spec.horizon,
            discount=0.995 if spec.discount is None else spec.discount,
            reward_scale=spec.reward_scale,
            isotropic_noise=spec.isotropic_noise,
            freeze=spec.freeze,
        )
    discount = FINITE_DISCOUNT if spec.discount is None else spec.discount
    if spec.kind == "random":
        mdp = make_random_mdp(
            spec.n_states, spec.n_actions, spec.branching, rng, discount
        )
    elif spec.kind == "deterministic":
        mdp = make_deterministic_reachable_mdp(
            spec.n_states, spec.n_actions, rng, discount
        )
    elif spec.kind == "ring":
        mdp = make_ring_mdp(spec.n_states, spec.slip, discount)
    elif spec.kind == "dyadic":
        mdp = dyadic_tree_mdp(spec.depth, discount)
    else:
        mdp = load_mdp(Path(spec.path))
        if spec.discount is not None:
            mdp = mdp.copy(update={"discount": spec.discount})
    return augment_with_freeze(mdp) if spec.freeze else mdp
