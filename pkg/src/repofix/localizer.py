"""
Hierarchical localization.

Stage one gathers candidate files from two sources, retrieval over method
embeddings and a file-map completion, and unions them. Stage two narrows the
candidates to at most l_max files from their schematics. Stage three reads
each selected file in full and extracts the edit locations with per-location
change instructions.
"""

import logging
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from repofix.config import LocalizerConfig
from repofix.core import (
    CandidateFileSet,
    EditPlan,
    FileSchematic,
    FileSelection,
    LocalizationError,
    LocationLevel,
    PlanElement,
    ProblemStatement,
    RelevantLocation,
    RepoFileMap,
    ResolutionError,
    StructuredOutputError,
    normalize_repo_path,
)
from repofix.editor import resolve_span
from repofix.indexer import RepoIndex, fit_repo_map
from repofix.llm import (
    LOCATIONS,
    PATH_LIST,
    QUERY_LIST,
    SELECTION,
    Gateway,
    LocationPayload,
    Role,
    SelectionPayload,
)
from repofix.parsers import format_schematic, parse_file
from repofix import vectors
from repofix.workspace import read_source

logger = logging.getLogger(__name__)

RAG = "rag"
FILE_MAP = "file_map"
FALLBACK_RATIONALE = "fallback"


@dataclass(frozen=True)
class QuerySet:
    queries: Tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.queries)


@dataclass
class LocalizationResult:
    queries: QuerySet
    rag_files: List[str]
    map_files: List[str]
    candidates: CandidateFileSet
    selection: FileSelection
    plan: EditPlan
    map_truncated: bool = False
    file_errors: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "queries": list(self.queries.queries),
            "rag_files": self.rag_files,
            "map_files": self.map_files,
            "map_truncated": self.map_truncated,
            "candidates": candidates_to_dict(self.candidates),
            "selection": {
                "files": self.selection.files,
                "rationale": self.selection.rationale,
                "l_max": self.selection.l_max,
            },
            "plan": plan_to_dict(self.plan),
            "file_errors": dict(sorted(self.file_errors.items())),
        }


class LocalizationFailed(LocalizationError):
    """Raised when every selected file failed location extraction."""

    def __init__(self, result: LocalizationResult):
        details = "; ".join(f"{f}: {e}" for f, e in sorted(result.file_errors.items()))
        super().__init__(f"No valid edit location in the selected files ({details})")
        self.result = result


def candidates_to_dict(candidates: CandidateFileSet) -> List[Dict[str, Any]]:
    return [
        {"file": f, "sources": sorted(candidates.provenance.get(f, set()))}
        for f in candidates.ranked_files
    ]


def plan_to_dict(plan: EditPlan) -> List[Dict[str, Any]]:
    return [
        {
            "file": e.location.file,
            "level": e.location.level.value,
            "name": e.location.name,
            "start_line": e.location.start_line,
            "end_line": e.location.end_line,
            "instruction": e.instruction,
        }
        for e in plan.elements
    ]


def plan_from_dict(data: Sequence[Dict[str, Any]]) -> EditPlan:
    return EditPlan(
        elements=[
            PlanElement(
                location=RelevantLocation(
                    level=LocationLevel(d["level"]),
                    name=d.get("name", ""),
                    start_line=int(d["start_line"]),
                    file=d["file"],
                    end_line=d.get("end_line"),
                ),
                instruction=d["instruction"],
            )
            for d in data
        ]
    )


def _dedupe(items: Sequence[str]) -> List[str]:
    seen: List[str] = []
    for item in items:
        if item not in seen:
            seen.append(item)
    return seen


def generate_queries(
    problem: ProblemStatement, n: int, gateway: Gateway, retry_budget: int = 2
) -> QuerySet:
    """Asks for n search queries; short answers are padded with the problem text."""
    if n < 1:
        raise ValueError("At least one query is required")
    prompt = gateway.prompts.render(Role.QUERY_GENERATION, problem=problem.text, n=n)
    result = gateway.complete_with_retry(Role.QUERY_GENERATION, prompt, QUERY_LIST, retry_budget)

    queries = _dedupe([q.strip() for q in result.value if q and q.strip()])[:n]
    if len(queries) < n:
        queries = _dedupe(queries + [problem.text])
    logger.debug(f"Generated {len(queries)} queries")
    return QuerySet(queries=tuple(queries))


def retrieve_candidate_files(
    queries: QuerySet,
    index: vectors.VectorIndex,
    embedder: vectors.Embedder,
    per_query_k: int = 5,
) -> List[str]:
    """Files ranked by their best retrieval score over all queries."""
    best: Dict[str, float] = {}
    for query in queries.queries:
        for hit in index.search(vectors.embed(query, embedder), per_query_k):
            name = hit.entry.doc.file_name
            if name not in best or hit.score > best[name]:
                best[name] = hit.score
            logger.debug(f"Query hit {name} ({hit.entry.doc.unit_ref[0]}): {hit.score:.4f}")
    return sorted(best, key=lambda f: (-best[f], f))


def locate_files_from_map(
    problem: ProblemStatement,
    repo_map: RepoFileMap,
    m: int,
    gateway: Gateway,
    token_budget: int = 30000,
    retry_budget: int = 2,
) -> List[str]:
    """Asks for the m most likely files given the repository map.

    Paths missing from the map are dropped. An unusable completion yields an
    empty list so that localization can continue on retrieval alone.
    """
    if not len(repo_map):
        raise LocalizationError("Repository map is empty")
    rendered, _ = fit_repo_map(repo_map, token_budget)
    prompt = gateway.prompts.render(
        Role.FILE_LOCATOR, problem=problem.text, repo_map=rendered, m=m
    )
    try:
        result = gateway.complete_with_retry(Role.FILE_LOCATOR, prompt, PATH_LIST, retry_budget)
    except StructuredOutputError as e:
        logger.warning(f"File locator gave no usable answer: {e}")
        return []

    files = []
    for raw in result.value:
        path = normalize_repo_path(raw)
        if not repo_map.contains(path):
            logger.warning(f"Dropping file not in the repository map: {raw}")
            continue
        if path not in files:
            files.append(path)
    return files[:m]


def union_candidates(
    rag: Sequence[str], map_based: Sequence[str], cap: int = 5
) -> CandidateFileSet:
    """Retrieval-ranked files first, then map-based files not already present."""
    if not rag and not map_based:
        raise LocalizationError("No candidate files from retrieval or the file map")
    ranked: List[str] = []
    provenance: Dict[str, set] = {}
    for source, files in ((RAG, rag), (FILE_MAP, map_based)):
        for f in files:
            if f not in ranked:
                ranked.append(f)
            provenance.setdefault(f, set()).add(source)
    ranked = ranked[:cap]
    return CandidateFileSet(
        ranked_files=ranked, provenance={f: provenance[f] for f in ranked}
    )


def preassimilate(
    problem: ProblemStatement,
    candidates: CandidateFileSet,
    schematics: Dict[str, FileSchematic],
    gateway: Gateway,
    l_max: Optional[int] = 2,
    retry_budget: int = 2,
) -> FileSelection:
    """Narrows the candidates to the files that must be edited."""
    if not candidates.ranked_files:
        raise LocalizationError("No candidate files to choose from")
    if l_max is not None and l_max < 1:
        raise ValueError("l_max must be at least 1")

    outline = "\n\n".join(
        format_schematic(schematics[f]) if f in schematics else f"{f}: (not indexed)"
        for f in candidates.ranked_files
    )
    if l_max is None:
        limit = "Choose as many files as the change needs."
    else:
        limit = f"Choose at most {l_max} file(s)."
    prompt = gateway.prompts.render(
        Role.PREASSIMILATOR, problem=problem.text, schematics=outline, limit_instruction=limit
    )

    files: List[str] = []
    rationale = ""
    try:
        result = gateway.complete_with_retry(Role.PREASSIMILATOR, prompt, SELECTION, retry_budget)
        payload: SelectionPayload = result.value
        rationale = payload.rationale
        for raw in payload.files:
            path = normalize_repo_path(raw)
            if path not in candidates.ranked_files:
                logger.warning(f"Dropping selected file that is not a candidate: {raw}")
            elif path not in files:
                files.append(path)
    except StructuredOutputError as e:
        logger.warning(f"Pre-assimilation gave no usable answer: {e}")

    if l_max is not None:
        files = files[:l_max]
    if not files:
        logger.warning("No valid file selected; falling back to the top candidate")
        return FileSelection(
            files=[candidates.ranked_files[0]], rationale=FALLBACK_RATIONALE, l_max=l_max
        )
    return FileSelection(files=files, rationale=rationale, l_max=l_max)


def number_lines(content: str) -> str:
    """Prefixes every line with its 1-based number."""
    lines = content.splitlines()
    width = len(str(len(lines))) if lines else 1
    return "\n".join(f"{i:>{width}} | {line}" for i, line in enumerate(lines, 1))


def _to_location(payload: LocationPayload, file: str) -> RelevantLocation:
    level = LocationLevel(payload.level)
    if level == LocationLevel.TOP_LEVEL and payload.end_line is None:
        raise ResolutionError("top_level locations need an end_line")
    if level != LocationLevel.TOP_LEVEL and not payload.name.strip():
        raise ResolutionError(f"{level.value} locations need a name")
    return RelevantLocation(
        level=level,
        name="" if level == LocationLevel.TOP_LEVEL else payload.name.strip(),
        start_line=payload.start_line,
        file=file,
        end_line=payload.end_line,
    )


def parse_locations(
    problem: ProblemStatement,
    file: str,
    content: str,
    gateway: Gateway,
    retry_budget: int = 1,
) -> EditPlan:
    """Extracts validated edit locations for one file.

    Invalid locations are reported back to the model once; whatever is still
    invalid on the last attempt is dropped.

    Raises:
        LocalizationError: If no valid location remains
    """
    prompt = gateway.prompts.render(
        Role.CODER_PARSER, problem=problem.text, file=file, content=number_lines(content)
    )

    def validate(payloads: List[LocationPayload], final: bool) -> List[PlanElement]:
        accepted: List[Tuple[PlanElement, Tuple[int, int]]] = []
        errors: List[str] = []
        for payload in payloads:
            label = f"{payload.level} '{payload.name}' at line {payload.start_line}"
            try:
                location = _to_location(payload, file)
                target = resolve_span(content, location)
            except ResolutionError as e:
                errors.append(f"{label}: {e}")
                continue
            span = target.resolved_span
            clash = next((s for _, s in accepted if not (span[1] < s[0] or span[0] > s[1])), None)
            if clash is not None:
                errors.append(f"{label}: overlaps another location (lines {clash[0]}-{clash[1]})")
                continue
            resolved = RelevantLocation(
                level=location.level,
                name=location.name,
                start_line=span[0],
                file=file,
                end_line=span[1],
            )
            accepted.append((PlanElement(location=resolved, instruction=payload.instruction), span))

        if errors and not final:
            raise StructuredOutputError("Invalid locations:\n- " + "\n- ".join(errors))
        for error in errors:
            logger.warning(f"Dropping invalid location in {file}: {error}")
        if not accepted:
            raise StructuredOutputError(
                "No valid location: " + ("; ".join(errors) or "the list was empty")
            )
        return [element for element, _ in accepted]

    try:
        result = gateway.complete_with_retry(
            Role.CODER_PARSER, prompt, LOCATIONS, retry_budget, validate=validate
        )
    except StructuredOutputError as e:
        raise LocalizationError(f"No valid edit location in {file}: {e}") from e
    return EditPlan(elements=result.value)


def localize(
    problem: ProblemStatement,
    index: RepoIndex,
    gateway: Gateway,
    embedder: vectors.Embedder,
    config: Optional[LocalizerConfig] = None,
    retry_budget: int = 2,
) -> LocalizationResult:
    """Runs all three localization stages against the checkout at problem.repo_root.

    Raises:
        LocalizationError: If no candidate file or no valid location is found
    """
    config = config or LocalizerConfig()
    root = Path(problem.repo_root)

    queries = generate_queries(problem, config.n_queries, gateway, retry_budget)
    with ThreadPoolExecutor(max_workers=2) as pool:
        rag_future: Optional[Future] = None
        if len(index.vector_index):
            rag_future = pool.submit(
                retrieve_candidate_files, queries, index.vector_index, embedder, config.per_query_k
            )
        else:
            logger.warning("Vector index holds no documents; using the repository map alone")
        map_future = pool.submit(
            locate_files_from_map,
            problem,
            index.repo_map,
            config.m_files,
            gateway,
            config.map_token_budget,
            retry_budget,
        )
        rag_files = rag_future.result() if rag_future is not None else []
        map_files = map_future.result()
    _, map_truncated = fit_repo_map(index.repo_map, config.map_token_budget)

    candidates = union_candidates(rag_files, map_files, config.cap)
    logger.debug(f"Candidate files: {candidates.ranked_files}")

    selection = preassimilate(
        problem, candidates, index.schematics, gateway, config.l_max, retry_budget
    )
    logger.debug(f"Selected files: {selection.files} ({selection.rationale})")

    elements: List[PlanElement] = []
    file_errors: Dict[str, str] = {}
    for file in selection.files:
        path = root / file
        if not path.is_file():
            file_errors[file] = "file not found in checkout"
            logger.warning(f"Selected file missing from checkout: {file}")
            continue
        try:
            content = read_source(path)
        except (SyntaxError, UnicodeDecodeError) as e:
            file_errors[file] = "file cannot be decoded"
            logger.warning(f"Selected file cannot be decoded: {file}: {e}")
            continue
        if not parse_file(file, content).parse_ok:
            file_errors[file] = "file does not parse"
            logger.warning(f"Selected file does not parse: {file}")
            continue
        try:
            plan = parse_locations(problem, file, content, gateway, config.location_retry)
        except LocalizationError as e:
            file_errors[file] = str(e)
            logger.warning(str(e))
            continue
        elements.extend(plan.elements)

    result = LocalizationResult(
        queries=queries,
        rag_files=rag_files,
        map_files=map_files,
        candidates=candidates,
        selection=selection,
        plan=EditPlan(elements=elements),
        map_truncated=map_truncated,
        file_errors=file_errors,
    )
    if not elements:
        raise LocalizationFailed(result)
    return result
