"""
Localization and resolution evaluation over a set of issue instances.
"""

import dataclasses
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

from repofix.config import RunConfig
from repofix.core import (
    ConfigurationError,
    LocalizationError,
    ProblemStatement,
    RepofixError,
    normalize_repo_path,
)
from repofix.indexer import build_index
from repofix.llm import Gateway, make_gateway
from repofix.localizer import LocalizationFailed, localize
from repofix.pipeline import LOG_DIR, data_home, new_run_dir, run_fix, write_json
from repofix.validator import Outcome, diff_reports, run_suite
from repofix import vectors
from repofix import workspace as ws

logger = logging.getLogger(__name__)

HINT_FIELDS = ("hints", "hints_text")
EVAL_REPORT_FILE = "eval_report.json"

_PATCH_TARGET = re.compile(r"^(?:\+\+\+|---) (?:[ab]/)?(\S+)")


@dataclass(frozen=True)
class EvalInstance:
    instance_id: str
    repo: str
    problem_statement: str
    gold_files: FrozenSet[str]
    gold_test_patch: Optional[str] = None
    fail_to_pass: Tuple[str, ...] = ()
    pass_to_pass: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.gold_files:
            raise ConfigurationError(f"Instance {self.instance_id} has no gold files")
        if not self.problem_statement or not self.problem_statement.strip():
            raise ConfigurationError(f"Instance {self.instance_id} has an empty problem statement")


@dataclass
class InstanceResult:
    instance_id: str
    candidate_files: List[str] = field(default_factory=list)
    top1_hit: bool = False
    top5_hit: bool = False
    resolved: Optional[bool] = None
    resolved_full_suite: Optional[bool] = None
    error: Optional[str] = None

    @property
    def errored(self) -> bool:
        return self.error is not None


def _percent(hits: int, total: int) -> Optional[float]:
    if total == 0:
        return None
    return round(100.0 * hits / total, 2)


@dataclass
class EvalReport:
    results: List[InstanceResult] = field(default_factory=list)

    @property
    def scored(self) -> List[InstanceResult]:
        return [r for r in self.results if not r.errored]

    @property
    def errors(self) -> int:
        return sum(1 for r in self.results if r.errored)

    @property
    def top1(self) -> Optional[float]:
        return _percent(sum(r.top1_hit for r in self.scored), len(self.scored))

    @property
    def top5(self) -> Optional[float]:
        return _percent(sum(r.top5_hit for r in self.scored), len(self.scored))

    @property
    def resolution(self) -> Optional[float]:
        judged = [r for r in self.scored if r.resolved is not None]
        return _percent(sum(bool(r.resolved) for r in judged), len(judged))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "instances": [dataclasses.asdict(r) for r in self.results],
            "scored": len(self.scored),
            "errors": self.errors,
            "top1": self.top1,
            "top5": self.top5,
            "resolution": self.resolution,
        }


def topk_hit(candidate_files: List[str], gold_files: Iterable[str], k: int) -> bool:
    return bool(set(candidate_files[:k]) & set(gold_files))


def files_in_patch(patch: str) -> FrozenSet[str]:
    """Repo-relative paths touched by a unified diff."""
    files = set()
    for line in patch.splitlines():
        m = _PATCH_TARGET.match(line)
        if m and m.group(1) != "/dev/null":
            files.add(normalize_repo_path(m.group(1)))
    return frozenset(files)


def _strip_hints(record: Mapping[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in record.items() if k not in HINT_FIELDS}


def _as_tuple(value: Any) -> Tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        # The public benchmark stores these lists as JSON strings.
        value = json.loads(value) if value.strip().startswith("[") else [value]
    return tuple(str(v) for v in value)


def instance_from_dict(record: Mapping[str, Any], base_dir: Optional[Path] = None) -> EvalInstance:
    data = _strip_hints(record)
    try:
        repo = Path(data["repo"])
        if base_dir is not None and not repo.is_absolute():
            repo = base_dir / repo
        gold = data.get("gold_files")
        if not gold and data.get("patch"):
            gold = files_in_patch(data["patch"])
        return EvalInstance(
            instance_id=str(data["instance_id"]),
            repo=str(repo),
            problem_statement=data["problem_statement"],
            gold_files=frozenset(normalize_repo_path(g) for g in gold or ()),
            gold_test_patch=data.get("gold_test_patch"),
            fail_to_pass=_as_tuple(data.get("fail_to_pass")),
            pass_to_pass=_as_tuple(data.get("pass_to_pass")),
        )
    except KeyError as e:
        raise ConfigurationError(f"Eval instance is missing field {e}") from e


def from_swebench_record(record: Mapping[str, Any], checkouts_dir) -> EvalInstance:
    """Adapts a public benchmark record; the checkout is checkouts_dir/<instance_id>."""
    data = _strip_hints(record)
    return instance_from_dict(
        {
            "instance_id": data["instance_id"],
            "repo": str(Path(checkouts_dir) / data["instance_id"]),
            "problem_statement": data["problem_statement"],
            "patch": data.get("patch", ""),
            "gold_test_patch": data.get("test_patch"),
            "fail_to_pass": data.get("FAIL_TO_PASS"),
            "pass_to_pass": data.get("PASS_TO_PASS"),
        }
    )


def load_instances(path, checkouts_dir=None) -> List[EvalInstance]:
    """Reads eval instances from JSON lines.

    Records in the public benchmark shape are adapted when checkouts_dir is
    given; relative repo paths resolve against the file's directory.
    """
    source = Path(path)
    instances = []
    try:
        with open(source, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                record = json.loads(line)
                if checkouts_dir is not None and "FAIL_TO_PASS" in record:
                    instances.append(from_swebench_record(record, checkouts_dir))
                else:
                    instances.append(instance_from_dict(record, base_dir=source.parent))
    except FileNotFoundError as e:
        raise ConfigurationError(f"Instances file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid instances file {path}: {e}") from e
    return instances


def _verdicts(
    instance: EvalInstance, config: RunConfig, chosen_patch: str
) -> Tuple[Optional[bool], Optional[bool]]:
    """Designated-test and full-suite verdicts with the gold test patch applied."""
    before = ws.create_scratch(instance.repo, prefix="repofix-eval-")
    after = ws.create_scratch(instance.repo, prefix="repofix-eval-")
    try:
        ws.apply_patch(after, chosen_patch)
        if instance.gold_test_patch:
            ws.apply_patch(before, instance.gold_test_patch)
            ws.apply_patch(after, instance.gold_test_patch)
        baseline = run_suite(before, config.runner)
        post = run_suite(after, config.runner)
    finally:
        ws.destroy(before)
        ws.destroy(after)

    full: Optional[bool] = None
    if not baseline.truncated and not post.truncated:
        diff = diff_reports(baseline, post)
        full = not diff.is_regression(config.engine.strict_vanished) and bool(diff.new_passes)

    designated: Optional[bool] = None
    if instance.fail_to_pass and not post.truncated:
        required = instance.fail_to_pass + instance.pass_to_pass
        designated = all(post.outcomes.get(t) == Outcome.PASS for t in required)
    return designated, full


def evaluate_instance(
    instance: EvalInstance,
    config: RunConfig,
    run_dir: Path,
    fix: bool = False,
    gateway: Optional[Gateway] = None,
) -> InstanceResult:
    result = InstanceResult(instance_id=instance.instance_id)
    if not Path(instance.repo).is_dir():
        result.error = f"checkout not found: {instance.repo}"
        logger.warning(f"{instance.instance_id}: {result.error}")
        return result

    instance_dir = run_dir / instance.instance_id
    instance_config = dataclasses.replace(
        config,
        repo_root=instance.repo,
        run_dir=str(instance_dir),
        out_dir=None,
        index_dir=str(instance_dir / "index"),
    )
    gateway = gateway or make_gateway(config.llm, log_dir=instance_dir / LOG_DIR)
    problem = ProblemStatement(text=instance.problem_statement, repo_root=instance.repo)
    try:
        if fix:
            _fix_and_judge(instance, instance_config, problem, gateway, result)
        else:
            result.candidate_files = _localize_only(instance, config, problem, gateway)
    except RepofixError as e:
        result.error = f"{type(e).__name__}: {e}"
        logger.warning(f"{instance.instance_id} errored: {result.error}")

    result.top1_hit = topk_hit(result.candidate_files, instance.gold_files, 1)
    result.top5_hit = topk_hit(result.candidate_files, instance.gold_files, 5)
    return result


def _localize_only(
    instance: EvalInstance, config: RunConfig, problem: ProblemStatement, gateway: Gateway
) -> List[str]:
    embedder = vectors.make_embedder(config.embedder)
    index = build_index(instance.repo, config.index, embedder)
    try:
        localization = localize(
            problem, index, gateway, embedder, config.localizer, config.engine.retry_budget
        )
        return localization.candidates.ranked_files
    except LocalizationFailed as e:
        return e.result.candidates.ranked_files
    except LocalizationError as e:
        logger.warning(f"{instance.instance_id}: {e}")
        return []


def _fix_and_judge(
    instance: EvalInstance,
    config: RunConfig,
    problem: ProblemStatement,
    gateway: Gateway,
    result: InstanceResult,
) -> None:
    """One fix run; its own localization is the one scored."""
    outcome = run_fix(config, problem, reindex=True, gateway=gateway)
    if outcome.localization is not None:
        result.candidate_files = outcome.localization.candidates.ranked_files
    elif outcome.error is not None and not isinstance(outcome.error, LocalizationError):
        # Nothing was localized, so there is nothing to score.
        raise outcome.error

    patch = outcome.chosen_patch
    if patch is None:
        result.resolved = False
        result.resolved_full_suite = False
        return
    designated, full = _verdicts(instance, config, patch)
    result.resolved_full_suite = full
    result.resolved = designated if designated is not None else full


def run_eval(
    instances: List[EvalInstance],
    config: RunConfig,
    fix: bool = False,
    gateway: Optional[Gateway] = None,
) -> EvalReport:
    """Scores localization (and optionally resolution) for every instance."""
    run_dir = Path(config.run_dir) if config.run_dir else new_run_dir(data_home() / "eval")
    report = EvalReport()
    for instance in instances:
        report.results.append(evaluate_instance(instance, config, run_dir, fix, gateway))
    write_json(run_dir / EVAL_REPORT_FILE, report.to_dict())
    return report
