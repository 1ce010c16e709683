"""Provide common pytest fixtures."""
import pytest

from mgrl.approx import init_mlp
from mgrl.core.mdp import softmax_policy
from mgrl.core.rng import Rng
from mgrl.envs import (
    TorusEnv,
    augment_with_freeze,
    make_deterministic_reachable_mdp,
    make_random_mdp,
    make_ring_mdp,
)

from . import DISCOUNT, MINIMAL_CONFIG, SEED


@pytest.fixture(name="rng")
def rng_fixture():
    """Return a fresh random stream."""
    return Rng(SEED)


@pytest.fixture(name="random_mdp")
def random_mdp_fixture():
    """Return a stochastic 5-state MDP."""
    return make_random_mdp(5, 2, 3, Rng(SEED, (1,)), discount=DISCOUNT)


@pytest.fixture(name="deterministic_mdp")
def deterministic_mdp_fixture():
    """Return a deterministic strongly connected 4-state MDP."""
    return make_deterministic_reachable_mdp(4, 3, Rng(SEED, (2,)), discount=DISCOUNT)


@pytest.fixture(name="freeze_mdp")
def freeze_mdp_fixture():
    """Return a random 5-state MDP augmented with a freeze action."""
    return augment_with_freeze(make_random_mdp(5, 2, 3, Rng(SEED, (3,)), DISCOUNT))


@pytest.fixture(name="ring_mdp")
def ring_mdp_fixture():
    """Return a deterministic 5-state ring."""
    return make_ring_mdp(5, slip=0.0, discount=DISCOUNT)


@pytest.fixture(name="softmax_pi")
def softmax_pi_fixture(random_mdp):
    """Return a random full-support policy for the random MDP."""
    logits = Rng(SEED, (4,)).normals(
        (random_mdp.n_states, random_mdp.n_goals, random_mdp.n_actions)
    )
    return softmax_policy(logits)


@pytest.fixture(name="torus")
def torus_fixture():
    """Return the Torus(2) environment with its defaults."""
    return TorusEnv(dim=2)


@pytest.fixture(name="small_net")
def small_net_fixture():
    """Return a 2-layer network used by the gradient checks."""
    return init_mlp([3, 5, 2], Rng(SEED, (5,)))


@pytest.fixture(name="config_file")
def config_file_fixture(tmp_path):
    """Write a minimal tabular experiment config."""
    path = tmp_path / "config.yaml"
    path.write_text(MINIMAL_CONFIG, encoding="utf-8")
    return path


@pytest.fixture(name="no_seed_override", autouse=True)
def no_seed_override_fixture(monkeypatch):
    """Make sure MGRL_SEED from the outer environment does not leak in."""
    monkeypatch.delenv("MGRL_SEED", raising=False)
