"""Tests for pipeline.py module."""

import dataclasses
import io
import json
import sys

import httpx
import pytest

from repofix.config import EngineConfig, GatewayConfig, TestRunnerConfig
from repofix.core import ConfigurationError, ProblemStatement
from repofix.llm import Gateway, RecordingBackend, Role, Transcript, make_gateway
from repofix.pipeline import (
    CHOSEN_PATCH,
    LOG_DIR,
    MANIFEST_FILE,
    PLAN_FILE,
    REPORT_FILE,
    obtain_index,
    read_problem,
    run_fix,
    run_index,
    run_localize,
)
from repofix.validator import BASELINE_FILE, run_suite
from repofix import workspace as ws

from conftest import (
    ISSUE_FILE,
    MEAN_BROKEN_SYNTAX,
    MEAN_FIX,
    MEAN_FIX_FLOAT,
    MEAN_REGRESSING,
    ScriptedBackend,
    code,
    localization_script,
)

CG = Role.CODE_GENERATION


def fix_script(**extra):
    script = localization_script()
    script.update(
        {
            (CG, 0.0): [code(MEAN_FIX)],
            (CG, 0.4): [code(MEAN_REGRESSING)],
            (CG, 0.8): [code(MEAN_FIX_FLOAT)],
            Role.FINAL_SELECTION: [json.dumps({"id": 0, "reason": "minimal"})],
        }
    )
    script.update(extra)
    return script


@pytest.fixture
def problem(sample_repo):
    return read_problem(str(ISSUE_FILE), str(sample_repo))


def expected_stats(sample_repo):
    original = ws.read_source(sample_repo / "calc" / "stats.py")
    return original, original.replace("(len(values) - 1)", "len(values)")


# Test the fix run
def test_run_fix_end_to_end(run_config, problem, scripted, sample_repo, runner_config, tmp_path):
    """Test that the chosen patch fixes the issue and the checkout stays untouched."""
    before = ws.tree_hashes(sample_repo)
    gateway = scripted(fix_script(), log_dir=tmp_path / "run" / LOG_DIR)
    outcome = run_fix(run_config, problem, gateway=gateway)

    assert outcome.error is None
    assert ws.tree_hashes(sample_repo) == before

    out = outcome.out_dir
    original, fixed = expected_stats(sample_repo)
    chosen = (out / CHOSEN_PATCH).read_text(encoding="utf-8")
    assert chosen == ws.file_diff("calc/stats.py", original, fixed)
    assert "-    return sum(values) / (len(values) - 1)\n" in chosen
    assert "+    return sum(values) / len(values)\n" in chosen

    target = tmp_path / "target"
    target.mkdir()
    patched = ws.create_scratch(sample_repo, parent=target)
    assert ws.apply_patch(patched, chosen) == ["calc/stats.py"]
    assert ws.read_source(patched / "calc" / "stats.py") == fixed
    assert not run_suite(patched, runner_config).failing

    for name in (BASELINE_FILE, PLAN_FILE, REPORT_FILE, "candidates/candidate_1.patch"):
        assert (out / name).exists(), name
    assert any((out / LOG_DIR).iterdir())

    report = json.loads((out / REPORT_FILE).read_text())
    assert report["status"] == "resolved"
    assert report["failed_stage"] is None
    assert report["exit_code"] == 0
    assert report["chosen"] == 0
    assert report["baseline"] == {"pass": 4, "fail": 1, "error": 0, "skip": 0}
    assert [c["status"] for c in report["candidates"]] == ["selected", "regressed", "survived"]
    assert report["usage"]["code_generation"]["calls"] == 3


def test_run_fix_writes_to_out_dir(run_config, problem, scripted, tmp_path):
    config = dataclasses.replace(run_config, out_dir=str(tmp_path / "artifacts"))
    outcome = run_fix(config, problem, gateway=scripted(fix_script()))
    assert outcome.out_dir == tmp_path / "artifacts"
    assert (tmp_path / "artifacts" / CHOSEN_PATCH).exists()


def test_record_then_replay_is_identical(run_config, problem, tmp_path):
    """Test that a replayed run reproduces the recorded artifacts byte for byte."""
    transcript_path = tmp_path / "transcript.jsonl"
    recorder = RecordingBackend(ScriptedBackend(fix_script()), Transcript(path=transcript_path))
    recorded = run_fix(
        dataclasses.replace(run_config, run_dir=str(tmp_path / "recorded")),
        problem,
        gateway=Gateway(recorder),
    )
    assert recorded.error is None

    def poisoned(request):
        raise AssertionError(f"Network access during replay: {request.url}")

    replay_gateway = make_gateway(
        GatewayConfig(backend="replay", transcript=str(transcript_path)),
        transport=httpx.MockTransport(poisoned),
    )
    replayed = run_fix(
        dataclasses.replace(run_config, run_dir=str(tmp_path / "replayed")),
        problem,
        gateway=replay_gateway,
    )
    assert replayed.error is None

    for name in (CHOSEN_PATCH, REPORT_FILE):
        assert (recorded.out_dir / name).read_bytes() == (replayed.out_dir / name).read_bytes()


def unusable_runner(config):
    return dataclasses.replace(
        config, runner=TestRunnerConfig(command=(sys.executable, "-c", "print('???')"))
    )


def single_candidate(config):
    return dataclasses.replace(
        config, engine=EngineConfig(temperatures=(0.0,))
    )


FAILURES = {
    "baseline": (unusable_runner, {}, 5, "BaselineError"),
    "localize": (None, {Role.CODER_PARSER: ["[]"]}, 2, "LocalizationFailed"),
    "generate": (None, {CG: [code(MEAN_BROKEN_SYNTAX)]}, 3, "GenerationError"),
    "refine": (
        single_candidate,
        {CG: [code(MEAN_REGRESSING)], Role.REFINEMENT: [code(MEAN_REGRESSING)]},
        3,
        "NoSurvivorError",
    ),
}


@pytest.mark.parametrize("stage", sorted(FAILURES))
def test_failed_stage_is_reported(stage, run_config, problem, scripted, sample_repo):
    adjust, extra, exit_code, error_type = FAILURES[stage]
    config = adjust(run_config) if adjust else run_config
    script = fix_script()
    if CG in extra:
        for temperature in (0.0, 0.4, 0.8):
            script.pop((CG, temperature))
    script.update(extra)

    before = ws.tree_hashes(sample_repo)
    outcome = run_fix(config, problem, gateway=scripted(script))

    assert outcome.error is not None
    assert type(outcome.error).__name__ == error_type
    report = json.loads((outcome.out_dir / REPORT_FILE).read_text())
    assert report["status"] == "failed"
    assert report["failed_stage"] == stage
    assert report["exit_code"] == exit_code
    assert report["error"]["type"] == error_type
    assert not (outcome.out_dir / CHOSEN_PATCH).exists()
    assert ws.tree_hashes(sample_repo) == before


def test_backend_failure_is_reported(run_config, problem, scripted, sample_repo):
    script = fix_script()
    del script[Role.QUERY_GENERATION]
    outcome = run_fix(run_config, problem, gateway=scripted(script))
    assert outcome.report["failed_stage"] == "localize"
    assert outcome.report["exit_code"] == 4


def test_generation_failure_keeps_candidate_records(run_config, problem, scripted):
    script = localization_script()
    script[CG] = [code(MEAN_BROKEN_SYNTAX)]
    outcome = run_fix(run_config, problem, gateway=scripted(script))
    assert [c["status"] for c in outcome.report["candidates"]] == ["splice_failed"] * 3


# Test localization and indexing entry points
def test_run_localize_writes_plan(run_config, problem, scripted, tmp_path):
    out = tmp_path / "plan.json"
    result = run_localize(run_config, problem, out=out, gateway=scripted(localization_script()))
    assert json.loads(out.read_text()) == json.loads(json.dumps(result.to_dict()))


def test_obtain_index_reuses_artifacts(run_config, monkeypatch):
    built, location = run_index(run_config)
    assert (location / MANIFEST_FILE).exists()

    def fail(*args, **kwargs):
        raise AssertionError("index rebuilt")

    monkeypatch.setattr("repofix.pipeline.build_index", fail)
    loaded = obtain_index(run_config)
    assert loaded.repo_map.paths() == built.repo_map.paths()
    with pytest.raises(AssertionError, match="rebuilt"):
        obtain_index(run_config, reindex=True)


# Test problem input
def test_read_problem(tmp_path, monkeypatch):
    problem = read_problem(str(ISSUE_FILE), str(tmp_path))
    assert isinstance(problem, ProblemStatement)
    assert "mean" in problem.text

    monkeypatch.setattr(sys, "stdin", io.StringIO("  from stdin \n"))
    assert read_problem("-", ".").text == "from stdin"

    with pytest.raises(ConfigurationError, match="not found"):
        read_problem(str(tmp_path / "missing.txt"), ".")
    (tmp_path / "empty.txt").write_text("   \n")
    with pytest.raises(ConfigurationError, match="empty"):
        read_problem(str(tmp_path / "empty.txt"), ".")


@pytest.mark.parametrize("keep_workspaces", [False, True])
def test_default_dirs_stay_outside_checkout(
    keep_workspaces, run_config, problem, scripted, sample_repo, repofix_home, monkeypatch
):
    """Test that a fix run from inside the checkout with default dirs leaves it untouched."""
    monkeypatch.chdir(sample_repo)
    config = dataclasses.replace(
        run_config,
        repo_root=None,
        index_dir=None,
        run_dir=None,
        engine=EngineConfig(temperatures=(0.0,), keep_workspaces=keep_workspaces),
    )
    script = localization_script()
    script[CG] = [code(MEAN_FIX)]
    before = ws.tree_hashes(sample_repo)

    outcome = run_fix(config, problem, gateway=scripted(script))

    assert outcome.error is None
    assert ws.tree_hashes(sample_repo) == before
    assert not (sample_repo / ".repofix").exists()
    assert repofix_home.resolve() in outcome.out_dir.resolve().parents
    assert (outcome.out_dir / CHOSEN_PATCH).is_file()


@pytest.mark.parametrize("field", ["index_dir", "run_dir", "out_dir"])
def test_output_dirs_inside_checkout_are_rejected(
    field, run_config, problem, scripted, sample_repo
):
    config = dataclasses.replace(run_config, **{field: str(sample_repo / ".repofix" / "x")})
    with pytest.raises(ConfigurationError, match="inside the repository"):
        run_fix(config, problem, gateway=scripted({}))
    assert not (sample_repo / ".repofix" / "x").exists()


def test_plan_inside_checkout_is_rejected(run_config, problem, scripted, sample_repo):
    with pytest.raises(ConfigurationError, match="inside the repository"):
        run_localize(run_config, problem, out=sample_repo / "plan.json", gateway=scripted({}))


def test_missing_repo_root(run_config, problem, scripted, tmp_path):
    config = dataclasses.replace(run_config, repo_root=str(tmp_path / "nowhere"))
    with pytest.raises(ConfigurationError, match="not found"):
        run_fix(config, problem, gateway=scripted({}))
