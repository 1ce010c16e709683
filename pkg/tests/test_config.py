"""Test the experiment configs, runs and sweeps."""
import json

import pytest
import yaml
from pydantic import ValidationError  # pylint: disable=no-name-in-module

from mgrl.config import (
    EnvSpec,
    ExperimentConfig,
    build_env,
    load_config,
    resolve_seed,
)
from mgrl.core import ConfigurationError, FiniteMultiGoalMdp
from mgrl.core.rng import Rng
from mgrl.envs import TorusEnv
from mgrl.mdpfile import save_mdp
from mgrl.runner import CSV_HEADER, aggregate, run_experiment, run_to_directory, sweep

from . import MINIMAL_CONFIG, find_item


def _config(**changes):
    content = yaml.safe_load(MINIMAL_CONFIG)
    content.update(changes)
    return ExperimentConfig.parse_obj(content)


def test_load_minimal_config(config_file):
    """Test the defaults filled into a minimal config."""
    config = load_config(config_file)
    assert config.algo == "uvfa" and config.env.kind == "random"
    assert config.train.episodes == 6
    assert config.her.alpha == pytest.approx(0.8)
    assert config.output.directory == "results"


@pytest.mark.parametrize(
    "changes",
    [
        {"algo": "sarsa"},
        {"learning_rate": 0.1},
        {"env": {"kind": "grid"}},
        {"env": {"kind": "random", "n_state": 4}},
        {"env": {"kind": "random", "discount": 1.0}},
        {"env": {"kind": "file"}},
        {"env": {"kind": "torus"}},
        {"algo": "deep_her"},
        {"train": {"episodes": -1}},
    ],
)
def test_invalid_configs(changes):
    """Test that unknown keys and inconsistent sections are rejected."""
    with pytest.raises(ValidationError):
        _config(**changes)


def test_non_mapping_config(tmp_path):
    """Test that a YAML list is not a config."""
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_seed_override(monkeypatch):
    """Test that MGRL_SEED replaces the configured seed."""
    config = _config(seed=3)
    assert resolve_seed(config) == 3
    monkeypatch.setenv("MGRL_SEED", "11")
    assert resolve_seed(config) == 11
    monkeypatch.setenv("MGRL_SEED", "eleven")
    with pytest.raises(ConfigurationError):
        resolve_seed(config)


def test_build_env_kinds(tmp_path, ring_mdp):
    """Test every environment kind and the default discounts."""
    rng = Rng(0)
    mdp = build_env(EnvSpec(kind="random", n_states=4), rng)
    assert isinstance(mdp, FiniteMultiGoalMdp) and mdp.discount == 0.9
    frozen = build_env(EnvSpec(kind="ring", n_states=3, freeze=True), rng)
    assert frozen.n_states == 6 and frozen.freeze_action == 2
    assert build_env(EnvSpec(kind="dyadic", depth=2), rng).n_states == 7
    assert build_env(EnvSpec(kind="deterministic", n_states=3), rng).is_deterministic
    path = tmp_path / "ring.mdp"
    save_mdp(ring_mdp, path)
    loaded = build_env(EnvSpec(kind="file", path=str(path), discount=0.5), rng)
    assert loaded.n_states == 5 and loaded.discount == 0.5
    torus = build_env(EnvSpec(kind="torus", dim=3), rng)
    assert isinstance(torus, TorusEnv) and torus.discount == 0.995
    frozen_torus = build_env(EnvSpec(kind="torus", freeze=True), rng)
    assert frozen_torus.freeze and frozen_torus.n_actions == 5


def test_run_experiment_summary():
    """Test the summary of an in-process run."""
    rows, summary, model = run_experiment(_config(), 5)
    assert model is None
    assert summary["seed"] == 5 and summary["algo"] == "uvfa"
    assert summary["final"]["sup_distance"] == rows[-2].value
    assert all(row.seed == 5 for row in rows)
    assert summary["config"]["train"]["episodes"] == 6


def test_run_to_directory(tmp_path, monkeypatch):
    """Test the result files and the seed override."""
    monkeypatch.setenv("MGRL_SEED", "7")
    csv_path, json_path = run_to_directory(_config(), tmp_path / "out")
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert all(line.endswith(",7") for line in lines[1:])
    summary = json.loads(json_path.read_text(encoding="utf-8"))
    assert summary["seed"] == 7 and summary["schema_version"] == 1


def test_zero_episodes_header_only(tmp_path):
    """Test that a run without episodes writes the header alone."""
    config = _config(train={"episodes": 0})
    csv_path, json_path = run_to_directory(config, tmp_path)
    assert csv_path.read_text(encoding="utf-8") == ",".join(CSV_HEADER) + "\n"
    assert json.loads(json_path.read_text(encoding="utf-8"))["final"] == {}


def test_aggregate_single_seed():
    """Test that one seed gives zero spread."""
    report = aggregate([{"seed": 4, "final": {"a": 2.0, "b": -1.0}}])
    assert report["seeds"] == [4]
    assert find_item(report["metrics"], "metric", "a") == {
        "metric": "a",
        "mean": 2.0,
        "std": 0.0,
        "count": 1,
    }


def test_aggregate_population_std():
    """Test the mean and the population standard deviation."""
    report = aggregate(
        [{"seed": 2, "final": {"a": 3.0}}, {"seed": 1, "final": {"a": 1.0}}]
    )
    assert report["seeds"] == [1, 2]
    assert report["metrics"] == [{"metric": "a", "mean": 2.0, "std": 1.0, "count": 2}]


@pytest.mark.asyncio
async def test_sweep_duplicate_seeds(tmp_path):
    """Test that repeated seeds give identical files and zero spread."""
    report = await sweep(_config(), [3, 3], tmp_path)
    first = (tmp_path / "run-0-seed-3.csv").read_bytes()
    second = (tmp_path / "run-1-seed-3.csv").read_bytes()
    assert first == second
    assert all(row["std"] == 0.0 for row in report["metrics"])
    saved = json.loads((tmp_path / "aggregate.json").read_text(encoding="utf-8"))
    assert saved["metrics"] == report["metrics"]
    assert len(report["metrics"]) == len({"sup_distance", "expected_return"})


@pytest.mark.asyncio
async def test_sweep_counts(tmp_path):
    """Test one aggregate row per metric with the number of seeds."""
    report = await sweep(_config(), [0, 1, 2], tmp_path)
    assert report["seeds"] == [0, 1, 2]
    assert {row["count"] for row in report["metrics"]} == {3}
