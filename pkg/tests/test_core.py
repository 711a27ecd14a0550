"""Tests for core.py module."""

import pytest

from repofix.core import (
    BackendError,
    CodeUnit,
    ConfigurationError,
    EditPlan,
    GenerationError,
    LocalizationError,
    LocationLevel,
    NoSurvivorError,
    PlanElement,
    ProblemStatement,
    RelevantLocation,
    ReplayMissError,
    RepoFileMap,
    RepofixError,
    ResolutionError,
    StructuredOutputError,
    UnitKind,
    join_repo_path,
    normalize_repo_path,
)


# Test exit codes
@pytest.mark.parametrize(
    "exc, code",
    [
        (RepofixError("x"), 1),
        (ConfigurationError("x"), 5),
        (LocalizationError("x"), 2),
        (ResolutionError("x"), 2),
        (GenerationError("x"), 3),
        (NoSurvivorError("x"), 3),
        (BackendError("x"), 4),
        (ReplayMissError("abc", "coder_parser"), 4),
        (StructuredOutputError("x"), 4),
    ],
)
def test_exit_codes(exc, code):
    """Every error maps to the CLI exit code of its failure class."""
    assert exc.exit_code == code
    assert isinstance(exc, RepofixError)


def test_replay_miss_names_fingerprint():
    """Test that a replay miss carries the fingerprint it could not serve."""
    e = ReplayMissError("deadbeef", "file_locator")
    assert e.fingerprint == "deadbeef"
    assert "deadbeef" in str(e)
    assert "file_locator" in str(e)


def test_generation_errors_carry_candidates():
    e = NoSurvivorError("none left", candidates=["a", "b"])
    assert e.candidates == ["a", "b"]
    assert GenerationError("nothing").candidates == []


# Test domain types
def test_problem_statement_rejects_blank_text():
    with pytest.raises(ValueError):
        ProblemStatement(text="   ")


def test_code_unit_overlap_and_contains():
    unit = CodeUnit(kind=UnitKind.FUNCTION, name="f", qualified_name="f", span=(10, 20))
    assert unit.contains(10) and unit.contains(20)
    assert not unit.contains(21)
    assert unit.overlaps(5, 10)
    assert unit.overlaps(20, 30)
    assert not unit.overlaps(1, 9)
    assert unit.start_line == 10 and unit.end_line == 20


def test_repo_file_map_paths_and_contains():
    """Test that root files use the '.' key and paths come out sorted by directory."""
    repo_map = RepoFileMap(entries={".": ["setup.py"], "pkg": ["a.py", "b.py"]})
    assert repo_map.paths() == ["setup.py", "pkg/a.py", "pkg/b.py"]
    assert repo_map.contains("setup.py")
    assert repo_map.contains("pkg/b.py")
    assert not repo_map.contains("pkg/c.py")
    assert len(repo_map) == 3


def test_join_repo_path():
    assert join_repo_path(".", "x.py") == "x.py"
    assert join_repo_path("a/b", "x.py") == "a/b/x.py"


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("calc/stats.py", "calc/stats.py"),
        ("./calc/stats.py", "calc/stats.py"),
        ("`calc/stats.py`", "calc/stats.py"),
        ("calc\\stats.py", "calc/stats.py"),
        (" /calc/stats.py ", "calc/stats.py"),
    ],
)
def test_normalize_repo_path(raw, expected):
    assert normalize_repo_path(raw) == expected


def test_edit_plan_files_in_first_seen_order():
    def element(file, line):
        return PlanElement(
            location=RelevantLocation(LocationLevel.METHOD, "f", line, file),
            instruction="change",
        )

    plan = EditPlan(elements=[element("b.py", 1), element("a.py", 1), element("b.py", 9)])
    assert plan.files == ["b.py", "a.py"]
    assert len(plan) == 3
