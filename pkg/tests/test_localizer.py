"""Tests for localizer.py module."""

import json

import pytest

from repofix.core import (
    CandidateFileSet,
    LocalizationError,
    LocationLevel,
    ProblemStatement,
    RepoFileMap,
)
from repofix.indexer import build_index
from repofix.llm import Role
from repofix.localizer import (
    FALLBACK_RATIONALE,
    FILE_MAP,
    RAG,
    LocalizationFailed,
    QuerySet,
    generate_queries,
    localize,
    locate_files_from_map,
    number_lines,
    parse_locations,
    plan_from_dict,
    plan_to_dict,
    preassimilate,
    retrieve_candidate_files,
    union_candidates,
)
from repofix.vectors import HashEmbedder
from repofix.workspace import read_source

from conftest import MEAN_LOCATION, localization_script

ISSUE = "mean() returns the wrong average: the arithmetic mean of values is too large"


@pytest.fixture
def problem(sample_repo):
    return ProblemStatement(text=ISSUE, repo_root=str(sample_repo))


@pytest.fixture
def embedder():
    return HashEmbedder(256)


@pytest.fixture
def index(sample_repo, embedder):
    return build_index(sample_repo, embedder=embedder)


# Test query generation
def test_generate_queries(problem, scripted):
    gateway = scripted({Role.QUERY_GENERATION: [json.dumps(["a", "b", "a", " ", "c"])]})
    assert generate_queries(problem, 3, gateway).queries == ("a", "b", "c")


def test_generate_queries_pads_with_problem(problem, scripted):
    gateway = scripted({Role.QUERY_GENERATION: [json.dumps(["only one"])]})
    assert generate_queries(problem, 4, gateway).queries == ("only one", ISSUE)
    with pytest.raises(ValueError):
        generate_queries(problem, 0, gateway)


# Test candidate files
def test_retrieve_candidate_files(index, embedder):
    queries = QuerySet(queries=("arithmetic mean of values", "mean average"))
    files = retrieve_candidate_files(queries, index.vector_index, embedder, per_query_k=3)
    assert files[0] == "calc/stats.py"
    assert len(files) == len(set(files))
    assert set(files) <= set(index.schematics)


def test_locate_files_from_map_drops_unknown_paths(problem, index, scripted):
    gateway = scripted(
        {Role.FILE_LOCATOR: [json.dumps(["./calc/stats.py", "calc/missing.py", "calc/stats.py"])]}
    )
    assert locate_files_from_map(problem, index.repo_map, 5, gateway) == ["calc/stats.py"]


def test_locate_files_from_map_gives_up_quietly(problem, index, scripted):
    gateway = scripted({Role.FILE_LOCATOR: ["no json here"]})
    assert locate_files_from_map(problem, index.repo_map, 5, gateway, retry_budget=1) == []
    assert gateway.backend.calls(Role.FILE_LOCATOR) == 2


def test_locate_files_from_empty_map(problem, scripted):
    with pytest.raises(LocalizationError, match="empty"):
        locate_files_from_map(problem, RepoFileMap(), 5, scripted({}))


def test_union_candidates():
    union = union_candidates(["a.py", "b.py"], ["b.py", "c.py", "d.py"], cap=3)
    assert union.ranked_files == ["a.py", "b.py", "c.py"]
    assert union.provenance == {"a.py": {RAG}, "b.py": {RAG, FILE_MAP}, "c.py": {FILE_MAP}}
    assert union_candidates([], ["x.py"]).ranked_files == ["x.py"]
    with pytest.raises(LocalizationError):
        union_candidates([], [])


# Test pre-assimilation
def selection_answer(*files):
    return json.dumps({"files": list(files), "rationale": "because"})


def test_preassimilate_filters_and_limits(problem, index, scripted):
    candidates = CandidateFileSet(ranked_files=["calc/stats.py", "calc/shapes.py", "calc/text.py"])
    gateway = scripted(
        {
            Role.PREASSIMILATOR: [
                selection_answer("calc/other.py", "calc/shapes.py", "calc/stats.py")
            ]
        }
    )
    selection = preassimilate(problem, candidates, index.schematics, gateway, l_max=1)
    assert selection.files == ["calc/shapes.py"]
    assert selection.rationale == "because"
    assert selection.l_max == 1

    prompt = gateway.backend.requests[0].prompt
    assert "class Rectangle" in prompt
    assert "at most 1 file" in prompt


def test_preassimilate_unbounded(problem, index, scripted):
    candidates = CandidateFileSet(ranked_files=["calc/stats.py", "calc/shapes.py"])
    gateway = scripted({Role.PREASSIMILATOR: [selection_answer("calc/stats.py", "calc/shapes.py")]})
    selection = preassimilate(problem, candidates, index.schematics, gateway, l_max=None)
    assert selection.files == ["calc/stats.py", "calc/shapes.py"]


def test_preassimilate_falls_back_to_top_candidate(problem, index, scripted):
    candidates = CandidateFileSet(ranked_files=["calc/text.py", "calc/stats.py"])
    gateway = scripted({Role.PREASSIMILATOR: [selection_answer("nowhere.py")]})
    selection = preassimilate(problem, candidates, index.schematics, gateway)
    assert selection.files == ["calc/text.py"]
    assert selection.rationale == FALLBACK_RATIONALE


# Test location extraction
def test_number_lines():
    assert number_lines("a\nb\n") == "1 | a\n2 | b"
    assert number_lines("\n".join("x" * 10)).splitlines()[9] == "10 | x"


def test_parse_locations(problem, sample_repo, scripted):
    content = read_source(sample_repo / "calc" / "stats.py")
    gateway = scripted({Role.CODER_PARSER: [json.dumps([MEAN_LOCATION])]})
    plan = parse_locations(problem, "calc/stats.py", content, gateway)
    (element,) = plan.elements
    assert element.location.level == LocationLevel.METHOD
    assert (element.location.start_line, element.location.end_line) == (4, 8)
    assert element.instruction == MEAN_LOCATION["instruction"]
    assert "    4 | def mean(values):" not in gateway.backend.requests[0].prompt
    assert " 4 | def mean(values):" in gateway.backend.requests[0].prompt


def test_parse_locations_reprompts_invalid(problem, sample_repo, scripted):
    content = read_source(sample_repo / "calc" / "stats.py")
    wrong = dict(MEAN_LOCATION, name="variance")
    gateway = scripted(
        {Role.CODER_PARSER: [json.dumps([wrong]), json.dumps([MEAN_LOCATION])]}
    )
    plan = parse_locations(problem, "calc/stats.py", content, gateway, retry_budget=1)
    assert len(plan) == 1
    assert "variance" in gateway.backend.requests[1].prompt


def test_parse_locations_drops_overlaps_on_last_attempt(problem, sample_repo, scripted):
    content = read_source(sample_repo / "calc" / "stats.py")
    again = dict(MEAN_LOCATION, instruction="Something else.")
    gateway = scripted({Role.CODER_PARSER: [json.dumps([MEAN_LOCATION, again])]})
    plan = parse_locations(problem, "calc/stats.py", content, gateway, retry_budget=0)
    assert [e.instruction for e in plan.elements] == [MEAN_LOCATION["instruction"]]


def test_parse_locations_fails_without_valid_location(problem, sample_repo, scripted):
    content = read_source(sample_repo / "calc" / "stats.py")
    top = {"level": "top_level", "start_line": 1, "instruction": "x"}
    gateway = scripted({Role.CODER_PARSER: [json.dumps([top])]})
    with pytest.raises(LocalizationError, match="calc/stats.py"):
        parse_locations(problem, "calc/stats.py", content, gateway, retry_budget=1)


# Test the full localization
def test_localize(problem, index, embedder, scripted):
    gateway = scripted(localization_script())
    result = localize(problem, index, gateway, embedder)

    # Two scripted queries, padded with the issue text up to the default of four.
    assert result.queries.queries == ("mean average wrong value", "divide sum by count", ISSUE)
    assert result.map_files == ["calc/stats.py"]
    assert "calc/stats.py" in result.candidates.ranked_files
    assert FILE_MAP in result.candidates.provenance["calc/stats.py"]
    assert result.selection.files == ["calc/stats.py"]
    assert [e.location.file for e in result.plan.elements] == ["calc/stats.py"]
    assert not result.file_errors

    data = result.to_dict()
    assert data["plan"][0]["start_line"] == 4
    assert plan_to_dict(plan_from_dict(data["plan"])) == data["plan"]


def test_localize_fails_with_partial_result(problem, index, embedder, scripted):
    script = localization_script()
    script[Role.CODER_PARSER] = [json.dumps([])]
    with pytest.raises(LocalizationFailed) as info:
        localize(problem, index, scripted(script), embedder)
    result = info.value.result
    assert result.candidates.ranked_files
    assert "calc/stats.py" in result.file_errors
    assert "calc/stats.py" in str(info.value)


def test_localize_reports_missing_selected_file(problem, index, embedder, scripted, sample_repo):
    (sample_repo / "calc" / "stats.py").unlink()
    with pytest.raises(LocalizationFailed) as info:
        localize(problem, index, scripted(localization_script()), embedder)
    assert info.value.result.file_errors == {"calc/stats.py": "file not found in checkout"}


def test_localize_without_embedding_documents(scripted, embedder, tmp_path):
    """Test that a repository with no functions falls back to the file map."""
    repo = tmp_path / "flat"
    (repo / "pkg").mkdir(parents=True)
    (repo / "pkg" / "settings.py").write_text("DEBUG = True\nTIMEOUT = 5\n")
    (repo / "pkg" / "legacy.py").write_text("print 'hello'\n")
    index = build_index(repo, embedder=embedder)
    assert len(index.vector_index) == 0
    assert index.repo_map.contains("pkg/legacy.py")

    location = {
        "level": "top_level",
        "name": "",
        "start_line": 2,
        "end_line": 2,
        "instruction": "Raise the timeout to 30.",
    }
    gateway = scripted(
        {
            Role.QUERY_GENERATION: [json.dumps(["timeout too short"])],
            Role.FILE_LOCATOR: [json.dumps(["pkg/settings.py"])],
            Role.PREASSIMILATOR: [
                json.dumps({"files": ["pkg/settings.py"], "rationale": "timeout lives there"})
            ],
            Role.CODER_PARSER: [json.dumps([location])],
        }
    )
    problem = ProblemStatement(text="Requests time out after 5 seconds", repo_root=str(repo))
    result = localize(problem, index, gateway, embedder)

    assert result.rag_files == []
    assert result.candidates.ranked_files == ["pkg/settings.py"]
    assert result.candidates.provenance["pkg/settings.py"] == {FILE_MAP}
    assert [e.location.level for e in result.plan.elements] == [LocationLevel.TOP_LEVEL]
