"""Test the verification suites."""
import pytest
from pydantic import ValidationError  # pylint: disable=no-name-in-module

from mgrl.core import ConfigurationError
from mgrl.verify import SUITES, Check, build_report, run_suite

from . import find_item


def test_check_relations():
    """Test the three comparison relations and NaN values."""
    assert Check(suite="s", name="a", value=1.0, tolerance=1.0).passed
    assert Check(suite="s", name="b", value=1.0, tolerance=1.0, relation="ge").passed
    strict = Check(suite="s", name="c", value=1.0, tolerance=1.0, relation="gt")
    assert not strict.passed
    assert not Check(suite="s", name="d", value=float("nan"), tolerance=1.0).passed
    with pytest.raises(ValidationError):
        Check(suite="s", name="e", value=1.0, tolerance=1.0, relation="lt")


def test_check_line():
    """Test the report line of a check."""
    check = Check(suite="s", name="x", value=0.5, tolerance=1e-3)
    assert check.line() == "FAIL s.x: 5.000000e-01 <= 1.0e-03"


def test_unknown_suite():
    """Test that an unknown suite name is refused."""
    with pytest.raises(ConfigurationError):
        run_suite("theorem3")


def test_dyadic_mass_suite():
    """Test the dyadic suite checks and the report schema."""
    checks = run_suite("dyadic_mass")
    assert all(check.passed for check in checks)
    assert find_item(checks, "name", "diverges_gamma_0.6") is not None
    report = build_report("dyadic_mass", checks)
    assert report["schema_version"] == 1 and report["passed"]
    assert set(report["checks"][0]) == {
        "suite",
        "name",
        "value",
        "tolerance",
        "relation",
        "passed",
    }


def test_tolerance_override():
    """Test that a global tolerance replaces every check tolerance."""
    checks = run_suite("dyadic_mass", tol=-1.0)
    assert {check.tolerance for check in checks} == {-1.0}
    assert not build_report("dyadic_mass", checks)["passed"]


def test_suites_are_reproducible():
    """Test that a suite measures the same values twice."""
    first = [check.value for check in run_suite("policy_gradient_direction")]
    assert first == [check.value for check in run_suite("policy_gradient_direction")]


@pytest.mark.timeout(300)
@pytest.mark.parametrize(
    "suite",
    [
        "theorem1_bias",
        "theorem2_deterministic",
        "theorem5_td_fixedpoint",
        "policy_gradient_direction",
    ],
)
def test_exact_suites_pass(suite):
    """Test that the exact suites pass at their tolerances."""
    failed = [check.line() for check in run_suite(suite) if not check.passed]
    assert not failed


@pytest.mark.slow
@pytest.mark.timeout(600)
def test_dqn_fixed_point_suite():
    """Test the δ-DQN suite and its failure at a zero tolerance."""
    checks = run_suite("theorem4_dqn_fixedpoint")
    assert all(check.passed for check in checks)
    tight = run_suite("theorem4_dqn_fixedpoint", tol=0.0)
    assert not build_report("theorem4_dqn_fixedpoint", tight)["passed"]


def test_suite_registry():
    """Test the registered suite names."""
    assert list(SUITES) == [
        "theorem1_bias",
        "theorem2_deterministic",
        "theorem4_dqn_fixedpoint",
        "theorem5_td_fixedpoint",
        "policy_gradient_direction",
        "dyadic_mass",
    ]
