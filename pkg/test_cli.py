#!/usr/bin/env python3
"""Tests for the metatool command line."""

import json
import sys

import pytest

from metatool.cli import create_parser, main


@pytest.fixture
def out(tmp_path):
    return tmp_path / "out"


def write_config(tmp_path, text):
    path = tmp_path / "config.yaml"
    path.write_text(text)
    return str(path)


def test_parser_lists_every_command():
    parser = create_parser()
    for command in ("design", "discover", "invent", "select", "calibrate", "experiment", "report"):
        args = parser.parse_args([command] + (["e1"] if command in ("experiment", "report") else []))
        assert callable(args.func)


def test_version_exits_cleanly(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert capsys.readouterr().out.startswith("metatool ")


def test_select_writes_a_report(out, capsys):
    assert main(["--quiet", "--out", str(out), "select", "--task", "reach"]) == 0
    data = json.loads((out / "select" / "selection.json").read_text())
    assert data["choice"]["id"] in {"stick", "long-stick"}
    assert data["report"]["channels"]["control"] is not None
    assert "Selected" in capsys.readouterr().out


def test_discover_composes_a_hook_for_pulling(out):
    assert main(["--quiet", "--out", str(out), "--seed", "3", "discover", "--context", "pull"]) == 0
    data = json.loads((out / "discover" / "discovery.json").read_text())
    assert "hook" in data["combo"]
    assert data["belief"] == {"reach": 0.0, "pull": 1.0}
    assert {d["feature"] for d in data["structure"]} == {"extend", "hook", "push", "wedge"}


@pytest.mark.parametrize("method", ["cem", "finetune"])
def test_design_writes_result_and_trace(tmp_path, out, method):
    config = write_config(tmp_path, "design:\n  population: 8\n  iterations: 2\n  elite_frac: 0.25\n"
                                    "finetune:\n  population: 8\n  budget: 16\n")
    assert main(["--quiet", "--config", config, "--out", str(out), "design", "--method", method]) == 0
    data = json.loads((out / "design" / "design.json").read_text())
    assert data["tool"]["id"]
    assert (out / "design" / "trace.csv").exists()
    assert (out / "design" / "trace.svg").exists()


def test_experiment_then_report(out, capsys):
    assert main(["--quiet", "--out", str(out), "--seed", "1", "experiment", "e3"]) == 0
    summary = out / "e3" / "summary.csv"
    assert summary.exists()
    (out / "e3" / "plot.svg").unlink()
    assert main(["--quiet", "--out", str(out), "report", "e3"]) == 0
    assert (out / "e3" / "plot.svg").exists()
    assert "Experiment e3" in capsys.readouterr().out


def test_report_without_summary_fails(out, capsys):
    assert main(["--quiet", "--out", str(out), "report", "e4"]) == 3
    assert "not found" in capsys.readouterr().err


def test_unknown_config_section_is_a_config_error(tmp_path, out, capsys):
    path = write_config(tmp_path, "bogus:\n  value: 1\n")
    assert main(["--config", path, "--out", str(out), "select"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_out_of_range_config_is_a_config_error(tmp_path, out):
    assert main(["--config", write_config(tmp_path, "env:\n  trials: 0\n"), "--out", str(out), "select"]) == 2
    assert main(["--config", write_config(tmp_path, "env: [1, 2\n"), "--out", str(out), "select"]) == 2
    assert main(["--config", str(tmp_path / "missing.yaml"), "--out", str(out), "select"]) == 2


def test_config_path_from_environment(tmp_path, out, monkeypatch):
    monkeypatch.setenv("METATOOL_CONFIG", write_config(tmp_path, "impasse:\n  window: 0\n"))
    assert main(["--out", str(out), "select"]) == 2


def test_bad_seed_is_rejected(out):
    assert main(["--seed", "-1", "--out", str(out), "select"]) == 2


def test_unwritable_output_is_reported(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    assert main(["--quiet", "--out", str(blocker / "sub"), "select"]) == 3


def main_runner() -> int:
    """Run this module's tests."""
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main_runner())
