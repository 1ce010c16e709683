"""Provide the verification suites checked against the exact oracles."""
import logging
import math
import sys
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, validator  # pylint: disable=no-name-in-module

from mgrl import __version__
from mgrl.core import ConfigurationError
from mgrl.core.mdp import epsilon_greedy, softmax_policy, uniform_policy
from mgrl.core.rng import Rng
from mgrl.envs import (
    augment_with_freeze,
    make_deterministic_reachable_mdp,
    make_random_mdp,
    unfrozen_states,
)
from mgrl.oracle import (
    HerConfig,
    apply_t_pi,
    cosine_similarity,
    dyadic_mass_report,
    expected_update_delta_ac,
    expected_update_delta_dqn,
    expected_update_delta_td,
    expected_update_her,
    expected_update_uvfa,
    finite_difference_grad_J,
    her_distribution,
    her_fixed_point,
    q_star_finite,
    solve_m_pi,
    solve_q_star,
)
from mgrl.tabular import delta_dqn_update_moments

logging.basicConfig(stream=sys.stdout)
logger = logging.getLogger("verify")
logger.setLevel(logging.INFO)

SCHEMA_VERSION = 1
VERIFY_SEED = 0
MC_SAMPLES = 1_000_000
RELATIONS = {"le": "<=", "ge": ">=", "gt": ">"}


class Check(BaseModel):
    """Represent one measured quantity compared against a tolerance."""

    suite: str
    name: str
    value: float
    tolerance: float
    relation: str = "le"

    @validator("relation")
    def _known_relation(cls, value):  # pylint: disable=no-self-argument
        if value not in RELATIONS:
            raise ValueError(f"unknown relation '{value}'")
        return value

    @property
    def passed(self) -> bool:
        """Return True if the value satisfies its relation."""
        if math.isnan(self.value):
            return False
        if self.relation == "le":
            return self.value <= self.tolerance
        if self.relation == "ge":
            return self.value >= self.tolerance
        return self.value > self.tolerance

    def line(self) -> str:
        """Return the human-readable report line."""
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.suite}.{self.name}: {self.value:.6e} "
            f"{RELATIONS[self.relation]} {self.tolerance:.1e}"
        )


def _sup(array) -> float:
    return float(np.max(np.abs(array)))


def _mdp_shape(index):
    return 2 + index % 5, 2 + index % 2


def theorem1_bias(rng: Rng) -> List[Check]:
    """Check that HER overestimates the freeze action on freeze-augmented MDPs."""
    suite = "theorem1_bias"
    checks = []
    base_states, gamma = 5, 0.9
    formula, margins, frozen = [], [], []
    for index in range(10):
        mdp = augment_with_freeze(
            make_random_mdp(base_states, 2, 3, rng.spawn(index), discount=gamma)
        )
        exploration = uniform_policy(mdp.n_states, mdp.n_goals, mdp.n_actions)
        cfg = HerConfig(alpha=0.8, pk_gamma=0.9, pl_gamma=0.9, exploration=exploration)
        q_inf = her_fixed_point(mdp, her_distribution(mdp, cfg)).q
        q_star = q_star_finite(mdp).q
        reward = mdp.goal_onehot()
        live = unfrozen_states(mdp)
        action = mdp.freeze_action
        expected = reward[live] + gamma / (base_states * (1.0 - gamma))
        formula.append(_sup(q_star[live, action, :] - expected))
        margins.append(float(np.min(q_inf[live, action, :] - q_star[live, action, :])))
        dead = np.arange(base_states, mdp.n_states)
        frozen.append(_sup(q_inf[dead] - reward[dead][:, None, :] / (1.0 - gamma)))
    checks.append(
        Check(
            suite=suite,
            name="q_star_freeze_formula",
            value=max(formula),
            tolerance=1e-9,
        )
    )
    checks.append(
        Check(
            suite=suite,
            name="min_overestimation_margin",
            value=min(margins),
            tolerance=0.0,
            relation="gt",
        )
    )
    checks.append(
        Check(suite=suite, name="frozen_values", value=max(frozen), tolerance=1e-9)
    )
    return checks


def theorem2_deterministic(rng: Rng) -> List[Check]:
    """Check that HER has Q* as a fixed point on deterministic MDPs."""
    suite = "theorem2_deterministic"
    updates, fixed_points = [], []
    for index in range(20):
        n_states, n_actions = _mdp_shape(index)
        mdp = make_deterministic_reachable_mdp(n_states, n_actions, rng.spawn(index))
        q_star = q_star_finite(mdp).q
        cfg = HerConfig(
            alpha=0.8,
            pk_gamma=0.9,
            pl_gamma=0.9,
            exploration=epsilon_greedy(q_star, 0.2),
        )
        dist = her_distribution(mdp, cfg)
        updates.append(_sup(expected_update_her(mdp, dist, q_star, q_star)))
        fixed_points.append(_sup(her_fixed_point(mdp, dist).q - q_star))
    return [
        Check(
            suite=suite,
            name="expected_update_at_q_star",
            value=max(updates),
            tolerance=1e-10,
        ),
        Check(
            suite=suite,
            name="fixed_point_distance",
            value=max(fixed_points),
            tolerance=1e-9,
        ),
    ]


def _z_score(mean, std, count) -> float:
    scores = np.zeros_like(mean)
    spread = std > 0
    scores[spread] = np.abs(mean[spread]) * math.sqrt(count) / std[spread]
    scores[~spread & (mean != 0)] = math.inf
    return float(scores.max())


def theorem4_dqn_fixedpoint(rng: Rng) -> List[Check]:
    """Check that the δ-DQN update vanishes in expectation at the optimal density."""
    suite = "theorem4_dqn_fixedpoint"
    updates, identities = [], []
    fixed = []
    for index in range(20):
        n_states, n_actions = _mdp_shape(index)
        mdp = make_random_mdp(n_states, n_actions, min(3, n_states), rng.spawn(index))
        q_star = solve_q_star(mdp).q
        updates.append(_sup(expected_update_delta_dqn(mdp, q_star, q_star)))
        guess = rng.spawn(100 + index).randoms(q_star.shape)
        identities.append(
            _sup(
                expected_update_delta_dqn(mdp, mdp.n_goals * guess, mdp.n_goals * guess)
                - mdp.n_goals * expected_update_uvfa(mdp, guess, guess)
            )
        )
        fixed.append((mdp, q_star))
    checks = [
        Check(
            suite=suite,
            name="expected_update_at_q_star",
            value=max(updates),
            tolerance=1e-10,
        ),
        Check(
            suite=suite, name="uvfa_identity", value=max(identities), tolerance=1e-10
        ),
    ]
    for index, (mdp, q_star) in enumerate(fixed[:3]):
        mean, std = delta_dqn_update_moments(
            mdp, q_star, q_star, MC_SAMPLES, rng.spawn(200 + index)
        )
        checks.append(
            Check(
                suite=suite,
                name=f"sampled_mean_zscore_{index}",
                value=_z_score(mean, std, MC_SAMPLES),
                tolerance=4.0,
            )
        )
    return checks


def theorem5_td_fixedpoint(rng: Rng) -> List[Check]:
    """Check that δ-TD(n) vanishes in expectation at the successor goal density."""
    suite = "theorem5_td_fixedpoint"
    updates = {1: [], 2: [], 3: []}
    masses, bellman = [], []
    for index in range(20):
        n_states, n_actions = _mdp_shape(index)
        stream = rng.spawn(index)
        mdp = make_random_mdp(n_states, n_actions, min(3, n_states), stream)
        policy = softmax_policy(stream.normals((n_states, mdp.n_goals, n_actions)))
        m_pi = solve_m_pi(mdp, policy).m
        for horizon, values in updates.items():
            values.append(
                _sup(expected_update_delta_td(mdp, policy, m_pi, m_pi, n=horizon))
            )
        total = np.einsum("sgx,x->sg", m_pi, mdp.goal_dist)
        masses.append(_sup(total - 1.0 / (1.0 - mdp.discount)))
        bellman.append(_sup(apply_t_pi(mdp, policy, m_pi) - m_pi))
    checks = [
        Check(
            suite=suite,
            name=f"expected_update_n{horizon}",
            value=max(values),
            tolerance=1e-10,
        )
        for horizon, values in updates.items()
    ]
    checks.append(
        Check(suite=suite, name="total_mass", value=max(masses), tolerance=1e-10)
    )
    checks.append(
        Check(
            suite=suite,
            name="bellman_fixed_point",
            value=max(bellman),
            tolerance=1e-10,
        )
    )
    return checks


def policy_gradient_direction(rng: Rng) -> List[Check]:
    """Check the δ-Actor-Critic direction against finite differences of J."""
    suite = "policy_gradient_direction"
    cosines, errors, baselines = [], [], []
    for index in range(10):
        n_states, n_actions = 2 + index % 3, 2 + index % 2
        stream = rng.spawn(index)
        mdp = make_random_mdp(n_states, n_actions, min(2, n_states), stream)
        logits = stream.normals((n_states, mdp.n_goals, n_actions))
        m_pi = solve_m_pi(mdp, softmax_policy(logits)).m
        update = expected_update_delta_ac(mdp, logits, m_pi)
        numeric = finite_difference_grad_J(mdp, logits)
        cosines.append(cosine_similarity(update, numeric))
        errors.append(float(np.linalg.norm(update - numeric) / np.linalg.norm(numeric)))
        shifted = expected_update_delta_ac(
            mdp, logits, m_pi, baseline=stream.normals((n_states, mdp.n_goals))
        )
        baselines.append(_sup(shifted - update))
    return [
        Check(
            suite=suite,
            name="min_cosine",
            value=min(cosines),
            tolerance=0.999,
            relation="ge",
        ),
        Check(suite=suite, name="relative_error", value=max(errors), tolerance=1e-6),
        Check(
            suite=suite,
            name="baseline_invariance",
            value=max(baselines),
            tolerance=1e-10,
        ),
    ]


def dyadic_mass(_rng: Rng) -> List[Check]:
    """Check the masses of the iterates on the dyadic tree."""
    suite = "dyadic_mass"
    checks = []
    for gamma in (0.4, 0.6):
        report = dyadic_mass_report(12, gamma)
        decrease = max(
            [0.0]
            + [early - late for early, late in zip(report.masses, report.masses[1:])]
        )
        checks.append(
            Check(
                suite=suite,
                name=f"monotone_gamma_{gamma}",
                value=decrease,
                tolerance=0.0,
            )
        )
        if report.diverges:
            checks.append(
                Check(
                    suite=suite,
                    name=f"diverges_gamma_{gamma}",
                    value=1.0,
                    tolerance=1.0,
                    relation="ge",
                )
            )
        else:
            ratio = abs(report.limit - report.masses[-1]) / report.tail_bounds[-1]
            checks.append(
                Check(
                    suite=suite,
                    name=f"tail_ratio_gamma_{gamma}",
                    value=ratio,
                    tolerance=1.0 + 1e-9,
                )
            )
    return checks


SUITES: Dict[str, Callable[[Rng], List[Check]]] = {
    "theorem1_bias": theorem1_bias,
    "theorem2_deterministic": theorem2_deterministic,
    "theorem4_dqn_fixedpoint": theorem4_dqn_fixedpoint,
    "theorem5_td_fixedpoint": theorem5_td_fixedpoint,
    "policy_gradient_direction": policy_gradient_direction,
    "dyadic_mass": dyadic_mass,
}
SUITE_IDS = tuple(SUITES) + ("all",)


def run_suite(name: str, tol: Optional[float] = None) -> List[Check]:
    """Run a suite, or every suite for ``all``; ``tol`` replaces every tolerance."""
    if name not in SUITE_IDS:
        raise ConfigurationError(f"unknown suite '{name}'")
    names = list(SUITES) if name == "all" else [name]
    checks = []
    for suite in names:
        logger.info("running %s", suite)
        found = SUITES[suite](Rng(VERIFY_SEED, (list(SUITES).index(suite),)))
        if tol is not None:
            found = [check.copy(update={"tolerance": tol}) for check in found]
        checks.extend(found)
    return checks


def build_report(name: str, checks: List[Check]) -> dict:
    """Return the JSON report of a verification run."""
    return {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "suite": name,
        "passed": all(check.passed for check in checks),
        "checks": [dict(check.dict(), passed=check.passed) for check in checks],
    }
