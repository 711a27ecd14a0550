import logging
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Dict, List, Optional, Set, Tuple

# We use a logger but don't configure it here.
# Configuration should happen at the application entry point.
logger = logging.getLogger(__name__)

ROOT_DIR_KEY = "."


class RepofixError(Exception):
    """Base exception for repofix."""

    exit_code = 1


class ConfigurationError(RepofixError, ValueError):
    """Raised when configuration is invalid or a configured tool is missing."""

    exit_code = 5


class IndexingError(RepofixError):
    """Raised when a repository cannot be indexed."""

    pass


class CorruptArtifactError(RepofixError):
    """Raised when a persisted artifact cannot be read back."""

    pass


class VectorIndexError(RepofixError):
    """Raised on invalid vector index usage."""

    pass


class EmbeddingError(RepofixError):
    """Raised when text cannot be embedded."""

    exit_code = 4

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class BackendError(RepofixError):
    """Raised when a completion backend fails."""

    exit_code = 4


class ReplayMissError(BackendError):
    """Raised when a replay transcript has no response for a request."""

    def __init__(self, fingerprint: str, role: str):
        super().__init__(f"No recorded response for {role} request {fingerprint}")
        self.fingerprint = fingerprint


class StructuredOutputError(RepofixError):
    """Raised when a completion does not match the expected shape."""

    exit_code = 4

    def __init__(self, diagnostic: str):
        super().__init__(diagnostic)
        self.diagnostic = diagnostic


class LocalizationError(RepofixError):
    """Raised when no edit location can be established."""

    exit_code = 2


class ResolutionError(LocalizationError):
    """Raised when a location does not resolve to a span of the file."""

    pass


class EditRejectedError(RepofixError):
    """Raised when generated code is rejected before splicing."""

    exit_code = 3

    def __init__(self, diagnostic: str):
        super().__init__(diagnostic)
        self.diagnostic = diagnostic


class GenerationError(RepofixError):
    """Raised when no candidate solution could be generated."""

    exit_code = 3

    def __init__(self, message: str, candidates: Optional[list] = None):
        super().__init__(message)
        self.candidates = candidates or []


class NoSurvivorError(RepofixError):
    """Raised when every candidate was eliminated by validation."""

    exit_code = 3

    def __init__(self, message: str, candidates: Optional[list] = None):
        super().__init__(message)
        self.candidates = candidates or []


class RefinementLimitError(RepofixError):
    """Raised when a candidate has used up its refinement budget."""

    exit_code = 3


class BaselineError(RepofixError):
    """Raised when the baseline test report is unusable."""

    exit_code = 5


class TruncatedReportError(RepofixError):
    """Raised when a truncated test report is used for regression checks."""

    pass


class WorkspaceError(RepofixError):
    """Raised when a scratch workspace cannot be prepared."""

    pass


class PatchApplyError(RepofixError):
    """Raised when a unified diff does not apply."""

    pass


class UnitKind(StrEnum):
    FUNCTION = "function"
    METHOD = "method"
    CLASS = "class"
    TOP_LEVEL = "top_level"


class LocationLevel(StrEnum):
    TOP_LEVEL = "top_level"
    CLASS = "class"
    METHOD = "method"


@dataclass(frozen=True)
class Arg:
    name: str
    annotation: Optional[str] = None
    default: Optional[str] = None


@dataclass(frozen=True)
class CodeUnit:
    kind: UnitKind
    name: str
    qualified_name: str
    span: Tuple[int, int]
    signature: str = ""
    args: Tuple[Arg, ...] = ()
    decorators: Tuple[str, ...] = ()
    docstring: Optional[str] = None
    return_statements: Tuple[str, ...] = ()
    parent_class: Optional[str] = None
    # Line of the def/class keyword; differs from span[0] when decorated.
    def_line: int = 0

    @property
    def start_line(self) -> int:
        return self.span[0]

    @property
    def end_line(self) -> int:
        return self.span[1]

    def contains(self, line: int) -> bool:
        return self.span[0] <= line <= self.span[1]

    def overlaps(self, start: int, end: int) -> bool:
        return not (end < self.span[0] or start > self.span[1])


@dataclass
class FileSchematic:
    path: str
    units: List[CodeUnit] = field(default_factory=list)
    parse_ok: bool = True
    parse_error: Optional[str] = None

    def find(self, qualified_name: str) -> List[CodeUnit]:
        return [u for u in self.units if u.qualified_name == qualified_name]


@dataclass
class RepoFileMap:
    """Directory -> sorted source filenames, relative to the repository root."""

    entries: Dict[str, List[str]] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def paths(self) -> List[str]:
        result = []
        for directory in sorted(self.entries):
            for name in self.entries[directory]:
                result.append(join_repo_path(directory, name))
        return result

    def contains(self, path: str) -> bool:
        directory, _, name = path.rpartition("/")
        return name in self.entries.get(directory or ROOT_DIR_KEY, [])

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())


def join_repo_path(directory: str, name: str) -> str:
    if directory == ROOT_DIR_KEY:
        return name
    return f"{directory}/{name}"


def normalize_repo_path(path: str) -> str:
    """Normalize a model- or user-supplied path to the repo-relative form."""
    clean = path.strip().strip("`'\"").replace("\\", "/")
    while clean.startswith("./"):
        clean = clean[2:]
    return clean.strip("/")


@dataclass(frozen=True)
class EmbeddingDocument:
    document: str
    file_name: str
    parent_class: Optional[str]
    unit_ref: Tuple[str, int]


@dataclass(frozen=True)
class ProblemStatement:
    text: str
    repo_root: str = "."

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("Problem statement text must not be empty")


@dataclass(frozen=True)
class RelevantLocation:
    level: LocationLevel
    name: str
    start_line: int
    file: str
    end_line: Optional[int] = None


@dataclass(frozen=True)
class PlanElement:
    location: RelevantLocation
    instruction: str


@dataclass
class EditPlan:
    elements: List[PlanElement] = field(default_factory=list)

    @property
    def files(self) -> List[str]:
        seen: List[str] = []
        for element in self.elements:
            if element.location.file not in seen:
                seen.append(element.location.file)
        return seen

    def __len__(self) -> int:
        return len(self.elements)


@dataclass
class CandidateFileSet:
    ranked_files: List[str] = field(default_factory=list)
    provenance: Dict[str, Set[str]] = field(default_factory=dict)


@dataclass
class FileSelection:
    files: List[str]
    rationale: str
    l_max: Optional[int]
