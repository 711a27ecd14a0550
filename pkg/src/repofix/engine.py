"""
Candidate generation, elimination, refinement and final selection.

One candidate is generated per temperature, each in its own scratch copy of
the pristine checkout. Candidates that break a previously passing test are
eliminated. When nothing survives, regressed candidates get a bounded number
of feedback refinements before the final choice is made.
"""

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from repofix.config import EngineConfig, TestRunnerConfig
from repofix.core import (
    ConfigurationError,
    EditPlan,
    EditRejectedError,
    GenerationError,
    LocationLevel,
    NoSurvivorError,
    PlanElement,
    ProblemStatement,
    RefinementLimitError,
    RelevantLocation,
    ResolutionError,
    StructuredOutputError,
)
from repofix.editor import (
    GeneratedCode,
    LineShifts,
    SpliceResult,
    apply_plan_element,
    extract_span,
    resolve_span,
)
from repofix.llm import CHOICE, CODE, ChoicePayload, CodePayload, Gateway, Role
from repofix.validator import RegressionDiff, TestReport, diff_reports, run_suite, save_report
from repofix import workspace as ws

logger = logging.getLogger(__name__)


class CandidateStatus(StrEnum):
    GENERATED = "generated"
    SPLICE_FAILED = "splice_failed"
    REGRESSED = "regressed"
    SURVIVED = "survived"
    REFINED = "refined"
    SELECTED = "selected"


@dataclass(frozen=True)
class TemperatureSchedule:
    temperatures: Tuple[float, ...] = (0.0, 0.4, 0.8)

    def __post_init__(self):
        if not self.temperatures:
            raise ConfigurationError("At least one temperature is required")
        if len(set(self.temperatures)) != len(self.temperatures):
            raise ConfigurationError("Temperatures must be distinct")
        for t in self.temperatures:
            if not 0.0 <= t <= 2.0:
                raise ConfigurationError(f"Temperature {t} outside [0, 2]")

    @property
    def k(self) -> int:
        return len(self.temperatures)


@dataclass
class EditRecord:
    element: PlanElement
    code: GeneratedCode
    result: SpliceResult
    refined: bool = False


@dataclass
class CandidateSolution:
    id: int
    temperature: float
    edits: List[EditRecord] = field(default_factory=list)
    workspace: Optional[Path] = None
    patch: str = ""
    status: CandidateStatus = CandidateStatus.GENERATED
    diagnostics: List[str] = field(default_factory=list)
    report: Optional[TestReport] = None
    diff: Optional[RegressionDiff] = None
    refinements: int = 0

    @property
    def files(self) -> List[str]:
        seen: List[str] = []
        for edit in self.edits:
            if edit.element.location.file not in seen:
                seen.append(edit.element.location.file)
        return seen

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "temperature": self.temperature,
            "status": self.status.value,
            "refinements": self.refinements,
            "edits": [
                {
                    "file": e.element.location.file,
                    "level": e.element.location.level.value,
                    "name": e.element.location.name,
                    "attempt": e.code.attempt,
                    "refined": e.refined,
                    "changed_span": list(e.result.changed_span),
                }
                for e in self.edits
            ],
            "test_counts": self.report.counts() if self.report else None,
            "regression": self.diff.to_dict() if self.diff else None,
            "diagnostics": self.diagnostics,
        }


@dataclass
class SolutionSet:
    candidates: List[CandidateSolution]
    chosen: Optional[int] = None

    @property
    def chosen_candidate(self) -> Optional[CandidateSolution]:
        return next((c for c in self.candidates if c.id == self.chosen), None)

    @property
    def survivors(self) -> List[CandidateSolution]:
        alive = (CandidateStatus.SURVIVED, CandidateStatus.REFINED, CandidateStatus.SELECTED)
        return [c for c in self.candidates if c.status in alive]


def render_plan(plan: EditPlan) -> str:
    lines = []
    for i, element in enumerate(plan.elements, 1):
        loc = element.location
        if loc.level == LocationLevel.TOP_LEVEL:
            what = "top-level code"
        else:
            what = f"{loc.level.value} `{loc.name}`"
        if loc.end_line:
            span = f"lines {loc.start_line}-{loc.end_line}"
        else:
            span = f"line {loc.start_line}"
        lines.append(f"{i}. {what} in {loc.file} ({span}): {element.instruction}")
    return "\n".join(lines)


def _describe(location: RelevantLocation) -> str:
    return location.name if location.name else "top-level code"


class SolutionEngine:
    """Drives the candidate lifecycle for one problem against one checkout."""

    def __init__(
        self,
        pristine,
        gateway: Gateway,
        runner: TestRunnerConfig,
        config: Optional[EngineConfig] = None,
        run_dir=None,
        scratch_parent=None,
    ):
        self.pristine = Path(pristine)
        self.gateway = gateway
        self.runner = runner
        self.config = config or EngineConfig()
        self.run_dir = Path(run_dir) if run_dir else None
        self.scratch_parent = scratch_parent
        self.stage = "generate"

    # Generation

    def _generate_edit(
        self,
        candidate: CandidateSolution,
        element: PlanElement,
        prompt: str,
        role: Role,
    ) -> Tuple[GeneratedCode, SpliceResult]:
        assert candidate.workspace is not None
        workspace = candidate.workspace

        def validate(payload: CodePayload, final: bool) -> Tuple[GeneratedCode, SpliceResult]:
            code = GeneratedCode(text=payload.code, temperature=candidate.temperature)
            result = apply_plan_element(workspace, element, code)
            if not result.syntax_ok:
                raise EditRejectedError(result.diagnostic or "Edited file does not parse")
            return code, result

        outcome = self.gateway.complete_with_retry(
            role,
            prompt,
            CODE,
            self.config.retry_budget,
            temperature=candidate.temperature,
            validate=validate,
        )
        code, result = outcome.value
        return dataclasses.replace(code, attempt=outcome.attempt), result

    def generate_candidate(
        self, candidate_id: int, temperature: float, plan: EditPlan, problem: ProblemStatement
    ) -> CandidateSolution:
        candidate = CandidateSolution(id=candidate_id, temperature=temperature)
        candidate.workspace = ws.create_scratch(
            self.pristine, parent=self.scratch_parent, prefix=f"repofix-c{candidate_id}-"
        )
        plan_text = render_plan(plan)
        shifts = LineShifts()

        for element in plan.elements:
            location = shifts.adjust(element.location)
            current = PlanElement(location=location, instruction=element.instruction)
            path = candidate.workspace / location.file
            try:
                if not path.is_file():
                    raise ResolutionError(f"File not found: {location.file}")
                content = ws.read_source(path)
                target = resolve_span(content, location)
                prompt = self.gateway.prompts.render(
                    Role.CODE_GENERATION,
                    problem=problem.text,
                    plan=plan_text,
                    level=location.level.value,
                    name=_describe(location),
                    file=location.file,
                    instruction=element.instruction,
                    code=extract_span(content, target.resolved_span).rstrip("\n"),
                )
                code, result = self._generate_edit(candidate, current, prompt, Role.CODE_GENERATION)
            except (ResolutionError, StructuredOutputError) as e:
                candidate.status = CandidateStatus.SPLICE_FAILED
                candidate.diagnostics.append(f"{location.file} {_describe(location)}: {e}")
                logger.debug(f"Candidate {candidate_id} failed on {location.file}: {e}")
                break
            shifts.record(location.file, result)
            candidate.edits.append(EditRecord(element=current, code=code, result=result))

        if candidate.status != CandidateStatus.SPLICE_FAILED:
            candidate.patch = ws.diff_workspace(self.pristine, candidate.workspace, candidate.files)
        logger.debug(f"Candidate {candidate_id} (t={temperature}): {candidate.status.value}")
        return candidate

    def generate_candidates(
        self, plan: EditPlan, problem: ProblemStatement, schedule: TemperatureSchedule
    ) -> List[CandidateSolution]:
        """One candidate per temperature.

        Raises:
            GenerationError: If every candidate failed to splice
        """
        if not plan.elements:
            raise ValueError("Edit plan is empty")
        self.stage = "generate"
        jobs = list(enumerate(schedule.temperatures))
        if self.config.parallel_generation and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
                futures = [
                    pool.submit(self.generate_candidate, i, t, plan, problem) for i, t in jobs
                ]
                candidates = [f.result() for f in futures]
        else:
            candidates = [self.generate_candidate(i, t, plan, problem) for i, t in jobs]

        if all(c.status == CandidateStatus.SPLICE_FAILED for c in candidates):
            details = "; ".join(
                f"candidate {c.id}: {' | '.join(c.diagnostics)}" for c in candidates
            )
            raise GenerationError(f"No candidate could be applied ({details})", candidates)
        return candidates

    # Validation

    def _validate(self, candidate: CandidateSolution, baseline: TestReport, label: str) -> None:
        assert candidate.workspace is not None
        report = run_suite(candidate.workspace, self.runner)
        candidate.report = report
        if self.run_dir is not None:
            save_report(report, self.run_dir / f"candidate_{candidate.id}_{label}.json")
        if report.truncated:
            candidate.status = CandidateStatus.REGRESSED
            candidate.diff = None
            candidate.diagnostics.append(f"Test run unusable: {report.diagnostic}")
            return
        candidate.diff = diff_reports(baseline, report)
        if candidate.diff.is_regression(self.config.strict_vanished):
            candidate.status = CandidateStatus.REGRESSED
        elif label == "post":
            candidate.status = CandidateStatus.SURVIVED
        else:
            candidate.status = CandidateStatus.REFINED

    def filter_by_validation(
        self, candidates: Sequence[CandidateSolution], baseline: TestReport
    ) -> List[CandidateSolution]:
        """Runs the full suite for every generated candidate; returns the survivors."""
        self.stage = "validate"
        pending = [c for c in candidates if c.status == CandidateStatus.GENERATED]
        if self.config.hermetic and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=len(pending)) as pool:
                list(pool.map(lambda c: self._validate(c, baseline, "post"), pending))
        else:
            for candidate in pending:
                self._validate(candidate, baseline, "post")
        survivors = [c for c in candidates if c.status == CandidateStatus.SURVIVED]
        logger.debug(f"{len(survivors)} of {len(candidates)} candidates survived validation")
        return survivors

    # Refinement

    def _current_location(
        self, candidate: CandidateSolution, index: int, shifts: LineShifts
    ) -> Optional[RelevantLocation]:
        edit = candidate.edits[index]
        start, end = edit.result.changed_span
        if end < start:
            return None
        loc = edit.element.location
        later = LineShifts()
        for other in candidate.edits[index + 1 :]:
            if other.element.location.file == loc.file:
                later.record(loc.file, other.result)
        later.edits.setdefault(loc.file, []).extend(shifts.edits.get(loc.file, []))
        return later.adjust(dataclasses.replace(loc, start_line=start, end_line=end))

    def refine(
        self, candidate: CandidateSolution, problem: ProblemStatement, baseline: TestReport
    ) -> CandidateSolution:
        """Rewrites every edit of a regressed candidate with the failing-test feedback.

        Raises:
            RefinementLimitError: If the candidate used up its refinement budget
        """
        if candidate.refinements >= self.config.max_refinements:
            raise RefinementLimitError(
                f"Candidate {candidate.id} was already refined {candidate.refinements} time(s)"
            )
        candidate.refinements += 1
        self.stage = "refine"

        report = candidate.report
        if candidate.diff is not None:
            failing = candidate.diff.regressed_tests(self.config.strict_vanished)
            failures = "\n".join(failing) or "(none)"
        else:
            failures = (report.diagnostic if report else None) or "(test run unusable)"
        output = (report.output if report else "").strip() or "(no output)"

        shifts = LineShifts()
        for i, edit in enumerate(candidate.edits):
            location = self._current_location(candidate, i, shifts)
            if location is None:
                continue
            element = PlanElement(location=location, instruction=edit.element.instruction)
            assert candidate.workspace is not None
            try:
                content = ws.read_source(candidate.workspace / location.file)
                target = resolve_span(content, location)
                prompt = self.gateway.prompts.render(
                    Role.REFINEMENT,
                    problem=problem.text,
                    failures=failures,
                    output=output,
                    level=location.level.value,
                    name=_describe(location),
                    file=location.file,
                    code=extract_span(content, target.resolved_span).rstrip("\n"),
                    instruction=edit.element.instruction,
                )
                code, result = self._generate_edit(candidate, element, prompt, Role.REFINEMENT)
            except (ResolutionError, StructuredOutputError) as e:
                candidate.diagnostics.append(f"Refinement of {location.file} failed: {e}")
                candidate.status = CandidateStatus.REGRESSED
                logger.debug(f"Refinement of candidate {candidate.id} failed: {e}")
                return candidate
            shifts.record(location.file, result)
            candidate.edits[i] = EditRecord(element=element, code=code, result=result, refined=True)

        assert candidate.workspace is not None
        candidate.patch = ws.diff_workspace(self.pristine, candidate.workspace, candidate.files)
        self._validate(candidate, baseline, f"refined{candidate.refinements}")
        logger.debug(f"Candidate {candidate.id} after refinement: {candidate.status.value}")
        return candidate

    # Selection

    def _selection_context(self, candidate: CandidateSolution) -> str:
        counts = candidate.report.counts() if candidate.report else {}
        fixed = sorted(candidate.diff.new_passes) if candidate.diff else []
        return (
            f"Candidate {candidate.id} (temperature {candidate.temperature}):\n"
            f"Tests: {counts.get('pass', 0)} passing, "
            f"{counts.get('fail', 0) + counts.get('error', 0)} failing\n"
            f"Previously failing tests now passing: {', '.join(fixed) or 'none'}\n"
            f"```diff\n{candidate.patch}```"
        )

    def select_final(
        self, survivors: Sequence[CandidateSolution], problem: ProblemStatement
    ) -> int:
        """Chooses one survivor; a single survivor is chosen without a completion.

        Raises:
            NoSurvivorError: If there is nothing to choose from
        """
        self.stage = "select"
        if not survivors:
            raise NoSurvivorError("No surviving candidate to select")
        fallback = min(survivors, key=lambda c: (c.temperature, c.id))
        if len(survivors) == 1:
            chosen = survivors[0]
        else:
            prompt = self.gateway.prompts.render(
                Role.FINAL_SELECTION,
                problem=problem.text,
                candidates="\n\n".join(self._selection_context(c) for c in survivors),
            )
            try:
                choice: ChoicePayload = self.gateway.complete_with_retry(
                    Role.FINAL_SELECTION, prompt, CHOICE, self.config.retry_budget
                ).value
                chosen = next((c for c in survivors if c.id == choice.id), fallback)
                if chosen is fallback and choice.id != fallback.id:
                    logger.warning(
                        f"Selected id {choice.id} is not a survivor; using candidate {fallback.id}"
                    )
            except StructuredOutputError as e:
                logger.warning(f"Final selection failed ({e}); using candidate {fallback.id}")
                chosen = fallback
        chosen.status = CandidateStatus.SELECTED
        return chosen.id

    def run(
        self,
        plan: EditPlan,
        problem: ProblemStatement,
        baseline: TestReport,
        schedule: Optional[TemperatureSchedule] = None,
    ) -> SolutionSet:
        """Generate, validate, rescue by refinement when nothing survived, select.

        Raises:
            GenerationError: If no candidate could be applied
            NoSurvivorError: If every candidate regressed, even after refinement
        """
        schedule = schedule or TemperatureSchedule(self.config.temperatures)
        candidates = self.generate_candidates(plan, problem, schedule)
        survivors = self.filter_by_validation(candidates, baseline)

        for _ in range(self.config.max_refinements):
            if survivors:
                break
            for candidate in candidates:
                if candidate.status == CandidateStatus.REGRESSED:
                    self.refine(candidate, problem, baseline)
            survivors = [c for c in candidates if c.status == CandidateStatus.REFINED]

        if not survivors:
            self.stage = "refine" if self.config.max_refinements else "validate"
            raise NoSurvivorError(
                "Every candidate was eliminated by validation", candidates
            )

        chosen = self.select_final(survivors, problem)
        return SolutionSet(candidates=candidates, chosen=chosen)

    def cleanup(self, candidates: Sequence[CandidateSolution]) -> None:
        if self.config.keep_workspaces:
            return
        for candidate in candidates:
            if candidate.workspace is not None:
                ws.destroy(candidate.workspace)
