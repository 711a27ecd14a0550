"""
End-to-end orchestration for the index, localize and fix commands.

Every fix run leaves a self-contained run directory: the run log of all
completions, test reports, candidate patches, the chosen patch and
report.json naming the stage that failed, if any.
"""

import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from repofix.config import RunConfig
from repofix.core import (
    ConfigurationError,
    GenerationError,
    NoSurvivorError,
    ProblemStatement,
    RepofixError,
)
from repofix.engine import CandidateSolution, SolutionEngine, SolutionSet, TemperatureSchedule
from repofix.indexer import RepoIndex, build_index, load_index, write_index, MANIFEST_FILE
from repofix.llm import Gateway, make_gateway
from repofix.localizer import LocalizationFailed, LocalizationResult, localize
from repofix.validator import TestReport, record_baseline
from repofix import vectors

logger = logging.getLogger(__name__)

HOME_ENV = "REPOFIX_HOME"
REPORT_FILE = "report.json"
PLAN_FILE = "plan.json"
CHOSEN_PATCH = "chosen.patch"
CANDIDATES_DIR = "candidates"
LOG_DIR = "log"


def read_problem(issue: Optional[str], repo_root: str) -> ProblemStatement:
    """Reads the issue text from a file, or from stdin when issue is '-'."""
    if not issue:
        raise ConfigurationError("An issue file is required (use '-' for stdin)")
    if issue == "-":
        text = sys.stdin.read()
    else:
        path = Path(issue)
        if not path.is_file():
            raise ConfigurationError(f"Issue file not found: {issue}")
        text = path.read_text(encoding="utf-8")
    try:
        return ProblemStatement(text=text.strip(), repo_root=repo_root)
    except ValueError as e:
        raise ConfigurationError(str(e)) from e


def data_home() -> Path:
    """Where repofix keeps indexes and runs; REPOFIX_HOME overrides ~/.repofix."""
    return Path(os.environ.get(HOME_ENV) or Path.home() / ".repofix")


def repo_data_dir(repo_root) -> Path:
    """Per-repository state directory, keyed by the checkout's absolute path."""
    root = Path(repo_root).resolve()
    key = hashlib.sha256(str(root).encode("utf-8")).hexdigest()[:12]
    return data_home() / "repos" / f"{root.name or 'root'}-{key}"


def new_run_dir(base: Path) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    path = Path(base) / stamp
    path.mkdir(parents=True, exist_ok=True)
    return path


def ensure_outside(repo_root: Path, path: Optional[Path], what: str) -> None:
    """Rejects output locations inside the checkout, which must stay pristine.

    Raises:
        ConfigurationError: If path is the repository root or lies below it
    """
    if path is None:
        return
    root = Path(repo_root).resolve()
    target = Path(path).resolve()
    if target == root or root in target.parents:
        raise ConfigurationError(
            f"The {what} {path} lies inside the repository {repo_root}; "
            "choose a directory outside the checkout"
        )


def repo_root_of(config: RunConfig) -> Path:
    root = Path(config.repo_root or ".")
    if not root.is_dir():
        raise ConfigurationError(f"Repository root not found: {root}")
    return root


def index_dir_of(config: RunConfig) -> Path:
    if config.index_dir:
        return Path(config.index_dir)
    return repo_data_dir(config.repo_root or ".") / "index"


def run_dir_of(config: RunConfig) -> Path:
    if config.run_dir:
        return Path(config.run_dir)
    return new_run_dir(repo_data_dir(config.repo_root or ".") / "runs")


def check_output_dirs(config: RunConfig, out: Optional[Path] = None) -> Path:
    """Validates that nothing a run writes lands inside the checkout; returns the root."""
    root = repo_root_of(config)
    ensure_outside(root, index_dir_of(config), "index directory")
    ensure_outside(root, Path(config.run_dir) if config.run_dir else None, "run directory")
    ensure_outside(root, Path(config.out_dir) if config.out_dir else None, "output directory")
    ensure_outside(root, out, "output path")
    return root


def run_index(config: RunConfig) -> Tuple[RepoIndex, Path]:
    """Builds the index of config.repo_root and writes its artifacts."""
    root = repo_root_of(config)
    index_dir = index_dir_of(config)
    ensure_outside(root, index_dir, "index directory")
    embedder = vectors.make_embedder(config.embedder)
    index = build_index(root, config.index, embedder)
    out = write_index(index, index_dir, config.embedder)
    return index, out


def obtain_index(config: RunConfig, reindex: bool = False) -> RepoIndex:
    index_dir = index_dir_of(config)
    if reindex or not (index_dir / MANIFEST_FILE).exists():
        logger.debug(f"Building index into {index_dir}")
        index, _ = run_index(config)
        return index
    return load_index(index_dir)


def write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path


def run_localize(
    config: RunConfig,
    problem: ProblemStatement,
    out: Optional[Path] = None,
    gateway: Optional[Gateway] = None,
    index: Optional[RepoIndex] = None,
) -> LocalizationResult:
    """Runs the three localization stages and writes plan.json."""
    check_output_dirs(config, out=out)
    run_dir = run_dir_of(config)
    gateway = gateway or make_gateway(config.llm, log_dir=run_dir / LOG_DIR)
    index = index or obtain_index(config)
    embedder = vectors.make_embedder(config.embedder)
    result = localize(
        problem, index, gateway, embedder, config.localizer, config.engine.retry_budget
    )
    write_json(out or run_dir / PLAN_FILE, result.to_dict())
    return result


@dataclass
class FixOutcome:
    """What a fix run produced; report mirrors report.json."""

    report: Dict[str, Any]
    out_dir: Path
    solutions: Optional[SolutionSet] = None
    localization: Optional[LocalizationResult] = None
    baseline: Optional[TestReport] = None
    error: Optional[RepofixError] = None
    candidates: List[CandidateSolution] = field(default_factory=list)

    @property
    def chosen_patch(self) -> Optional[str]:
        if self.solutions is None or self.solutions.chosen_candidate is None:
            return None
        return self.solutions.chosen_candidate.patch


def _write_patches(out_dir: Path, candidates: List[CandidateSolution]) -> None:
    for candidate in candidates:
        if candidate.patch:
            path = out_dir / CANDIDATES_DIR / f"candidate_{candidate.id}.patch"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(candidate.patch, encoding="utf-8")


def run_fix(
    config: RunConfig,
    problem: ProblemStatement,
    reindex: bool = False,
    gateway: Optional[Gateway] = None,
) -> FixOutcome:
    """Baseline, localize, generate, validate, refine and select.

    The pristine checkout is only read. All artifacts go to the output
    directory (the run directory unless configured otherwise); report.json is
    written even when a stage fails, and the error is returned in the outcome.
    """
    repo_root = check_output_dirs(config)
    run_dir = run_dir_of(config)
    out_dir = Path(config.out_dir) if config.out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    gateway = gateway or make_gateway(config.llm, log_dir=run_dir / LOG_DIR)

    outcome = FixOutcome(report={}, out_dir=out_dir)
    engine = SolutionEngine(
        repo_root,
        gateway,
        config.runner,
        config.engine,
        run_dir=out_dir,
        scratch_parent=run_dir / "workspaces" if config.engine.keep_workspaces else None,
    )
    stage = "baseline"
    try:
        outcome.baseline = record_baseline(repo_root, config.runner, run_dir=out_dir)

        stage = "localize"
        index = obtain_index(config, reindex)
        embedder = vectors.make_embedder(config.embedder)
        outcome.localization = localize(
            problem, index, gateway, embedder, config.localizer, config.engine.retry_budget
        )
        write_json(out_dir / PLAN_FILE, outcome.localization.to_dict())

        stage = "generate"
        schedule = TemperatureSchedule(config.engine.temperatures)
        try:
            outcome.solutions = engine.run(
                outcome.localization.plan, problem, outcome.baseline, schedule
            )
        finally:
            stage = engine.stage
        outcome.candidates = outcome.solutions.candidates
        stage = "done"
    except RepofixError as e:
        logger.error(f"Fix failed during {stage}: {e}")
        outcome.error = e
        if isinstance(e, LocalizationFailed):
            outcome.localization = e.result
        if isinstance(e, (GenerationError, NoSurvivorError)):
            outcome.candidates = list(e.candidates)
    finally:
        _write_patches(out_dir, outcome.candidates)
        chosen = outcome.chosen_patch
        if chosen is not None:
            (out_dir / CHOSEN_PATCH).write_text(chosen, encoding="utf-8")
        outcome.report = build_report(outcome, stage, gateway)
        write_json(out_dir / REPORT_FILE, outcome.report)
        engine.cleanup(outcome.candidates)
    return outcome


def build_report(outcome: FixOutcome, stage: str, gateway: Gateway) -> Dict[str, Any]:
    """report.json content; free of timestamps, absolute paths and backend identity."""
    error = outcome.error
    return {
        "status": "resolved" if error is None else "failed",
        "failed_stage": None if error is None else stage,
        "error": None if error is None else {"type": type(error).__name__, "message": str(error)},
        "exit_code": 0 if error is None else error.exit_code,
        "baseline": outcome.baseline.counts() if outcome.baseline else None,
        "localization": outcome.localization.to_dict() if outcome.localization else None,
        "candidates": [c.to_dict() for c in outcome.candidates],
        "chosen": outcome.solutions.chosen if outcome.solutions else None,
        "usage": gateway.usage_summary(),
    }
