import json
import sys

import pytest
from typer.testing import CliRunner

from repofix.cli import app, parse_temperatures, resize_schedule
from repofix.core import ConfigurationError
from repofix.llm import Gateway, Role

from conftest import (
    EVAL_INSTANCES,
    ISSUE_FILE,
    MEAN_BROKEN_SYNTAX,
    MEAN_FIX,
    ScriptedBackend,
    code,
    localization_script,
)

runner = CliRunner()


@pytest.fixture
def config_file(tmp_path):
    """A config whose test runner is the sample repository's script."""
    path = tmp_path / "repofix.toml"
    path.write_text(
        "[runner]\n"
        f"command = [{json.dumps(sys.executable)}, \"run_tests.py\"]\n"
        "timeout = 60\n"
        "[runner.env]\n"
        'PYTHONDONTWRITEBYTECODE = "1"\n'
        "[engine]\n"
        "temperatures = [0.0, 0.4]\n"
    )
    return path


@pytest.fixture
def use_script(monkeypatch):
    """Routes every gateway the CLI builds to a scripted backend."""

    def install(script):
        def make(config, log_dir=None, transport=None):
            return Gateway(ScriptedBackend(script), log_dir=log_dir)

        monkeypatch.setattr("repofix.pipeline.make_gateway", make)
        monkeypatch.setattr("repofix.evaluation.make_gateway", make)

    return install


# Test index and info
def test_index_and_info(sample_repo, tmp_path):
    out = tmp_path / "index"
    result = runner.invoke(app, ["index", "--root", str(sample_repo), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "Indexed 5 files" in result.output

    result = runner.invoke(app, ["info", "--index", str(out)])
    assert result.exit_code == 0
    assert "Documents" in result.output
    assert "hash (dim 64)" in result.output


def test_index_with_exclusions(sample_repo, tmp_path):
    out = tmp_path / "index"
    result = runner.invoke(
        app,
        ["index", "--root", str(sample_repo), "--out", str(out), "--exclude", "run_tests.py"],
    )
    assert result.exit_code == 0, result.output
    assert "Indexed 4 files" in result.output


def test_info_without_index(tmp_path):
    result = runner.invoke(app, ["info", "--index", str(tmp_path / "none")])
    assert result.exit_code == 0
    assert "No index found" in result.output


def test_index_missing_root(tmp_path):
    result = runner.invoke(app, ["index", "--root", str(tmp_path / "missing")])
    assert result.exit_code == 5
    assert "Error:" in result.output


# Test localize
def test_localize_writes_plan(sample_repo, tmp_path, use_script):
    use_script(localization_script())
    plan = tmp_path / "plan.json"
    result = runner.invoke(
        app,
        [
            "--run-dir",
            str(tmp_path / "run"),
            "localize",
            "--issue",
            str(ISSUE_FILE),
            "--root",
            str(sample_repo),
            "--index",
            str(tmp_path / "index"),
            "--out",
            str(plan),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "calc/stats.py" in result.output
    data = json.loads(plan.read_text())
    assert data["plan"][0]["name"] == "mean"


def test_localize_failure_exit_code(sample_repo, tmp_path, use_script):
    script = localization_script()
    script[Role.CODER_PARSER] = ["[]"]
    use_script(script)
    result = runner.invoke(
        app,
        [
            "--run-dir",
            str(tmp_path / "run"),
            "localize",
            "--issue",
            str(ISSUE_FILE),
            "--root",
            str(sample_repo),
            "--index",
            str(tmp_path / "index"),
        ],
    )
    assert result.exit_code == 2


# Test fix
def fix_args(config_file, sample_repo, tmp_path, *extra):
    return [
        "--config",
        str(config_file),
        "--run-dir",
        str(tmp_path / "run"),
        "fix",
        "--issue",
        str(ISSUE_FILE),
        "--root",
        str(sample_repo),
        "--index",
        str(tmp_path / "index"),
        "--out",
        str(tmp_path / "out"),
        *extra,
    ]


def test_fix_writes_patch(config_file, sample_repo, tmp_path, use_script):
    script = localization_script()
    script[Role.CODE_GENERATION] = [code(MEAN_FIX)]
    script[Role.FINAL_SELECTION] = [json.dumps({"id": 0, "reason": "lowest temperature"})]
    use_script(script)

    result = runner.invoke(app, fix_args(config_file, sample_repo, tmp_path))
    assert result.exit_code == 0, result.output
    patch = (tmp_path / "out" / "chosen.patch").read_text()
    assert "+    return sum(values) / len(values)" in patch
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["status"] == "resolved"
    assert len(report["candidates"]) == 2


def test_fix_failure_exit_code(config_file, sample_repo, tmp_path, use_script):
    script = localization_script()
    script[Role.CODE_GENERATION] = [code(MEAN_BROKEN_SYNTAX)]
    use_script(script)

    result = runner.invoke(app, fix_args(config_file, sample_repo, tmp_path, "--retry", "0"))
    assert result.exit_code == 3
    assert "generate" in result.output
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["failed_stage"] == "generate"


def test_fix_k_must_match_temperatures(config_file, sample_repo, tmp_path):
    args = fix_args(config_file, sample_repo, tmp_path, "--k", "2", "--temps", "0.1")
    result = runner.invoke(app, args)
    assert result.exit_code == 5
    assert "does not match" in result.output


def test_fix_with_single_candidate(config_file, sample_repo, tmp_path, use_script):
    script = localization_script()
    script[Role.CODE_GENERATION] = [code(MEAN_FIX)]
    use_script(script)
    result = runner.invoke(app, fix_args(config_file, sample_repo, tmp_path, "--k", "1"))
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert [c["temperature"] for c in report["candidates"]] == [0.0]
    assert "final_selection" not in report["usage"]


def test_resize_schedule():
    assert resize_schedule((0.0, 0.4, 0.8), 2) == (0.0, 0.4)
    assert resize_schedule((0.0, 0.4), 3) == (0.0, 0.4, 0.8)
    assert resize_schedule((0.0, 1.0), 5) == (0.0, 0.25, 0.5, 0.75, 1.0)
    with pytest.raises(ConfigurationError):
        resize_schedule((0.0,), 0)


# Test eval
def test_eval_reports_rates(tmp_path, use_script):
    use_script(localization_script())
    result = runner.invoke(
        app, ["--run-dir", str(tmp_path / "run"), "eval", "--instances", str(EVAL_INSTANCES)]
    )
    assert result.exit_code == 0, result.output
    assert "Top-5 localization: 80.0%" in result.output
    assert (tmp_path / "run" / "eval_report.json").exists()


# Test global options
def test_missing_config_file(tmp_path):
    result = runner.invoke(app, ["--config", str(tmp_path / "nope.toml"), "info"])
    assert result.exit_code == 5
    assert "Config file not found" in result.output


def test_replay_without_transcript(sample_repo, tmp_path):
    result = runner.invoke(
        app,
        [
            "--backend",
            "replay",
            "--run-dir",
            str(tmp_path / "run"),
            "localize",
            "--issue",
            str(ISSUE_FILE),
            "--root",
            str(sample_repo),
            "--index",
            str(tmp_path / "index"),
        ],
    )
    assert result.exit_code == 5
    assert "transcript" in result.output


def test_parse_temperatures():
    assert parse_temperatures("0.0, 0.4,0.8") == (0.0, 0.4, 0.8)
    assert parse_temperatures(None) is None
    with pytest.raises(ConfigurationError):
        parse_temperatures("hot,cold")
