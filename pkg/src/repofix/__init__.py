"""repofix - issue-driven fault localization and patch generation."""

from repofix.core import (
    RepofixError,
    ConfigurationError,
    LocalizationError,
    GenerationError,
    NoSurvivorError,
    BackendError,
    ProblemStatement,
    RelevantLocation,
    PlanElement,
    EditPlan,
    CodeUnit,
    FileSchematic,
)
from repofix.config import RunConfig, load_config
from repofix.indexer import RepoIndex, build_index, load_index, write_index
from repofix.vectors import VectorIndex, HashEmbedder, make_embedder
from repofix.llm import Gateway, Role, make_gateway
from repofix.localizer import LocalizationResult, localize
from repofix.editor import splice, resolve_span
from repofix.engine import SolutionEngine, CandidateSolution, TemperatureSchedule
from repofix.validator import TestReport, run_suite, diff_reports
from repofix.pipeline import run_fix, run_localize, run_index
from repofix.evaluation import EvalInstance, EvalReport, load_instances, run_eval
from repofix.cli import run

__all__ = [
    # Core data structures
    "ProblemStatement",
    "RelevantLocation",
    "PlanElement",
    "EditPlan",
    "CodeUnit",
    "FileSchematic",
    # Exceptions
    "RepofixError",
    "ConfigurationError",
    "LocalizationError",
    "GenerationError",
    "NoSurvivorError",
    "BackendError",
    # Configuration
    "RunConfig",
    "load_config",
    # Indexing
    "RepoIndex",
    "build_index",
    "load_index",
    "write_index",
    "VectorIndex",
    "HashEmbedder",
    "make_embedder",
    # Completions
    "Gateway",
    "Role",
    "make_gateway",
    # Pipeline stages
    "LocalizationResult",
    "localize",
    "splice",
    "resolve_span",
    "SolutionEngine",
    "CandidateSolution",
    "TemperatureSchedule",
    "TestReport",
    "run_suite",
    "diff_reports",
    "run_fix",
    "run_localize",
    "run_index",
    # Evaluation
    "EvalInstance",
    "EvalReport",
    "load_instances",
    "run_eval",
    # CLI
    "run",
]
