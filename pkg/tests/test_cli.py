"""Test the command line interface."""
import argparse
import json

import pytest

from mgrl.__main__ import main
from mgrl.mdpfile import save_mdp
from mgrl.options import parse_cmd_line, parse_seeds
from mgrl.runner import CSV_HEADER


def test_parse_seeds():
    """Test the seed list parser."""
    assert parse_seeds("0,1, 5") == [0, 1, 5]
    with pytest.raises(argparse.ArgumentTypeError):
        parse_seeds("a,b")


def test_parse_cmd_line():
    """Test the sub-command options."""
    opt = parse_cmd_line(["verify", "dyadic_mass", "--tol", "0.5"])
    assert opt.command == "verify" and opt.tol == 0.5 and opt.json is None
    opt = parse_cmd_line(["sweep", "config.yaml", "--seeds", "1,2"])
    assert opt.seeds == [1, 2] and opt.out is None


@pytest.mark.parametrize(
    "args",
    [
        [],
        ["verify", "theorem9"],
        ["sweep", "config.yaml", "--seeds", "x"],
        ["mdp"],
    ],
)
def test_usage_errors(args):
    """Test that argument errors exit with status 2."""
    with pytest.raises(SystemExit) as err:
        main(args)
    assert err.value.code == 2


def test_run_is_reproducible(tmp_path, config_file):
    """Test that two runs of one config write byte-identical metrics."""
    assert main(["run", str(config_file), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(config_file), "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert first == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert first.decode("utf-8").splitlines()[0] == "step,episode,metric,value,seed"
    assert ",".join(CSV_HEADER) == "step,episode,metric,value,seed"
    summary = json.loads((tmp_path / "a" / "summary.json").read_text(encoding="utf-8"))
    assert summary["algo"] == "uvfa"


def test_run_bad_config(tmp_path, capsys):
    """Test that an invalid config exits with status 2."""
    path = tmp_path / "bad.yaml"
    path.write_text("seed: 0\nalgo: uvfa\nenv:\n  kind: random\n  colour: red\n")
    assert main(["run", str(path), "--out", str(tmp_path)]) == 2
    assert "colour" in capsys.readouterr().err
    path.write_text("seed: [0\n")
    assert main(["run", str(path), "--out", str(tmp_path)]) == 2


def test_run_missing_config(tmp_path):
    """Test that an unreadable config exits with status 3."""
    assert main(["run", str(tmp_path / "missing.yaml")]) == 3


def test_sweep_command(tmp_path, config_file, capsys):
    """Test the sweep files and the printed aggregate."""
    out = tmp_path / "sweep"
    assert main(["sweep", str(config_file), "--seeds", "0,1", "--out", str(out)]) == 0
    assert (out / "run-0-seed-0.csv").exists() and (out / "run-1-seed-1.csv").exists()
    report = json.loads((out / "aggregate.json").read_text(encoding="utf-8"))
    assert report["seeds"] == [0, 1]
    assert "sup_distance:" in capsys.readouterr().out


def test_mdp_validate(tmp_path, random_mdp, capsys):
    """Test the validation of good and broken MDP files."""
    path = tmp_path / "good.mdp"
    save_mdp(random_mdp, path)
    assert main(["mdp", "validate", str(path)]) == 0
    assert "states=5" in capsys.readouterr().out
    broken = tmp_path / "broken.mdp"
    broken.write_text(path.read_text().replace("discount 0.9", "discount 2"))
    assert main(["mdp", "validate", str(broken)]) == 2
    assert "line" in capsys.readouterr().err
    assert main(["mdp", "validate", str(tmp_path / "missing.mdp")]) == 3


def test_verify_command(tmp_path, capsys):
    """Test the report lines and the JSON report of a suite."""
    report_path = tmp_path / "report.json"
    assert main(["verify", "dyadic_mass", "--json", str(report_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS dyadic_mass.monotone_gamma_0.4" in out
    assert "0 failed" in out
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["suite"] == "dyadic_mass" and report["passed"]


def test_verify_tight_tolerance_fails():
    """Test that an impossible tolerance fails the suite with status 1."""
    assert main(["verify", "dyadic_mass", "--tol", "-1"]) == 1
