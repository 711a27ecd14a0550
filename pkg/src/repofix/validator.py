"""
Test suite execution and regression detection.

Runs the configured test command inside a workspace, parses per-test
outcomes (line protocol or JUnit XML) and compares reports against a
baseline recorded on the pristine checkout.
"""

import json
import logging
import os
import subprocess
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple

from repofix.config import TestRunnerConfig
from repofix.core import (
    BaselineError,
    ConfigurationError,
    CorruptArtifactError,
    TruncatedReportError,
)
from repofix import workspace as ws

logger = logging.getLogger(__name__)

BASELINE_FILE = "baseline.json"
OUTPUT_TAIL = 4000


class Outcome(StrEnum):
    PASS = "pass"
    FAIL = "fail"
    ERROR = "error"
    SKIP = "skip"

    @property
    def failed(self) -> bool:
        return self in (Outcome.FAIL, Outcome.ERROR)


@dataclass
class TestReport:
    outcomes: Dict[str, Outcome] = field(default_factory=dict)
    wall_time: float = 0.0
    truncated: bool = False
    diagnostic: Optional[str] = None
    output: str = ""

    __test__ = False  # not a pytest class

    def ids(self, *outcomes: Outcome) -> FrozenSet[str]:
        return frozenset(t for t, o in self.outcomes.items() if o in outcomes)

    @property
    def passing(self) -> FrozenSet[str]:
        return self.ids(Outcome.PASS)

    @property
    def failing(self) -> FrozenSet[str]:
        return self.ids(Outcome.FAIL, Outcome.ERROR)

    def counts(self) -> Dict[str, int]:
        return {o.value: len(self.ids(o)) for o in Outcome}

    def to_dict(self) -> Dict:
        return {
            "outcomes": {t: self.outcomes[t].value for t in sorted(self.outcomes)},
            "wall_time": round(self.wall_time, 3),
            "truncated": self.truncated,
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "TestReport":
        return cls(
            outcomes={t: Outcome(o) for t, o in data.get("outcomes", {}).items()},
            wall_time=float(data.get("wall_time", 0.0)),
            truncated=bool(data.get("truncated", False)),
            diagnostic=data.get("diagnostic"),
        )


@dataclass(frozen=True)
class RegressionDiff:
    new_failures: FrozenSet[str] = frozenset()
    new_passes: FrozenSet[str] = frozenset()
    still_failing: FrozenSet[str] = frozenset()
    vanished: FrozenSet[str] = frozenset()
    # Vanished tests that passed at baseline.
    vanished_passing: FrozenSet[str] = frozenset()

    def is_regression(self, strict_vanished: bool = True) -> bool:
        if self.new_failures:
            return True
        return strict_vanished and bool(self.vanished_passing)

    def regressed_tests(self, strict_vanished: bool = True) -> List[str]:
        ids = set(self.new_failures)
        if strict_vanished:
            ids |= self.vanished_passing
        return sorted(ids)

    def to_dict(self) -> Dict[str, List[str]]:
        return {
            "new_failures": sorted(self.new_failures),
            "new_passes": sorted(self.new_passes),
            "still_failing": sorted(self.still_failing),
            "vanished": sorted(self.vanished),
        }


def parse_line_protocol(text: str) -> Tuple[Dict[str, Outcome], Optional[str]]:
    """Parses '<test-id> <status>' lines.

    Returns:
        (outcomes, diagnostic); the diagnostic is set when a line is malformed
    """
    outcomes: Dict[str, Outcome] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        test_id, _, status = line.rpartition(" ")
        try:
            outcome = Outcome(status.strip().lower())
        except ValueError:
            return outcomes, f"Unparseable report line {lineno}: {line[:200]}"
        if not test_id.strip():
            return outcomes, f"Missing test id on report line {lineno}"
        test_id = test_id.strip()
        if test_id in outcomes:
            logger.warning(f"Duplicate test id {test_id}; keeping the last outcome")
        outcomes[test_id] = outcome
    return outcomes, None


def parse_junit_xml(path) -> Tuple[Dict[str, Outcome], Optional[str]]:
    """Reads per-test outcomes from a JUnit-style XML report."""
    try:
        root = ET.parse(path).getroot()
    except FileNotFoundError:
        return {}, f"Report file not found: {path}"
    except ET.ParseError as e:
        return {}, f"Unparseable report file {path}: {e}"

    outcomes: Dict[str, Outcome] = {}
    for case in root.iter("testcase"):
        name = case.get("name", "")
        classname = case.get("classname")
        test_id = f"{classname}::{name}" if classname else name
        if case.find("error") is not None:
            outcome = Outcome.ERROR
        elif case.find("failure") is not None:
            outcome = Outcome.FAIL
        elif case.find("skipped") is not None:
            outcome = Outcome.SKIP
        else:
            outcome = Outcome.PASS
        outcomes[test_id] = outcome
    return outcomes, None


def _text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bytes):
        return value.decode("utf-8", errors="replace")
    return value


def _tail(text: str) -> str:
    return text if len(text) <= OUTPUT_TAIL else text[-OUTPUT_TAIL:]


def run_suite(workspace, config: TestRunnerConfig) -> TestReport:
    """Runs the full test suite inside workspace and parses its report.

    Raises:
        ConfigurationError: If the test command cannot be found
    """
    root = Path(workspace).resolve()
    argv = [part.replace("{workspace}", str(root)) for part in config.command]
    env = os.environ.copy()
    env.update(dict(config.env))

    report_path: Optional[Path] = None
    if config.report_format == "junit_xml":
        if not config.report_file:
            raise ConfigurationError("junit_xml reports need runner.report_file")
        report_path = root / config.report_file.replace("{workspace}", str(root))
        report_path.unlink(missing_ok=True)

    logger.debug(f"Running test suite in {root}: {' '.join(argv)}")
    started = time.monotonic()
    truncated = False
    diagnostic = None
    try:
        proc = subprocess.run(
            argv,
            cwd=root,
            env=env,
            capture_output=True,
            text=True,
            timeout=config.timeout,
        )
        stdout, stderr = proc.stdout, proc.stderr
        if proc.returncode < 0:
            truncated = True
            diagnostic = f"Test runner killed by signal {-proc.returncode}"
    except FileNotFoundError as e:
        raise ConfigurationError(f"Test command not found: {argv[0]}") from e
    except subprocess.TimeoutExpired as e:
        stdout, stderr = _text(e.stdout), _text(e.stderr)
        truncated = True
        diagnostic = f"Test runner exceeded the {config.timeout:g}s timeout"
    wall_time = time.monotonic() - started

    if report_path is not None:
        outcomes, parse_error = parse_junit_xml(report_path)
    else:
        outcomes, parse_error = parse_line_protocol(stdout)
    if parse_error:
        truncated = True
        diagnostic = f"{diagnostic}; {parse_error}" if diagnostic else parse_error

    if truncated:
        logger.warning(f"Truncated test report for {root}: {diagnostic}")
    else:
        logger.debug(f"Test suite finished in {wall_time:.1f}s: {len(outcomes)} tests")
    return TestReport(
        outcomes=outcomes,
        wall_time=wall_time,
        truncated=truncated,
        diagnostic=diagnostic,
        output=_tail(stdout + ("\n" + stderr if stderr else "")),
    )


def diff_reports(baseline: TestReport, post: TestReport) -> RegressionDiff:
    """Classifies every baseline test by its post-edit outcome.

    Error counts as failure; skips are neutral except that a test passing at
    baseline and skipped afterwards is treated as vanished.

    Raises:
        TruncatedReportError: If either report is truncated
    """
    if baseline.truncated or post.truncated:
        which = "baseline" if baseline.truncated else "post-edit"
        raise TruncatedReportError(f"Cannot diff a truncated {which} report")

    new_failures, new_passes, still_failing = set(), set(), set()
    vanished, vanished_passing = set(), set()
    for test_id, before in baseline.outcomes.items():
        after = post.outcomes.get(test_id)
        if after is None or (before == Outcome.PASS and after == Outcome.SKIP):
            vanished.add(test_id)
            if before == Outcome.PASS:
                vanished_passing.add(test_id)
        elif before == Outcome.PASS and after.failed:
            new_failures.add(test_id)
        elif before.failed and after == Outcome.PASS:
            new_passes.add(test_id)
        elif before.failed and after.failed:
            still_failing.add(test_id)

    return RegressionDiff(
        new_failures=frozenset(new_failures),
        new_passes=frozenset(new_passes),
        still_failing=frozenset(still_failing),
        vanished=frozenset(vanished),
        vanished_passing=frozenset(vanished_passing),
    )


def save_report(report: TestReport, path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
    return out


def load_report(path) -> TestReport:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return TestReport.from_dict(json.load(f))
    except FileNotFoundError as e:
        raise CorruptArtifactError(f"Test report not found: {path}") from e
    except (json.JSONDecodeError, ValueError, AttributeError) as e:
        raise CorruptArtifactError(f"Corrupt test report {path}: {e}") from e


def record_baseline(
    pristine, config: TestRunnerConfig, run_dir=None, scratch_parent=None
) -> TestReport:
    """Runs the suite on a scratch copy of the pristine checkout.

    Raises:
        BaselineError: If the baseline report is truncated
    """
    scratch = ws.create_scratch(pristine, parent=scratch_parent, prefix="repofix-baseline-")
    try:
        report = run_suite(scratch, config)
    finally:
        ws.destroy(scratch)

    if run_dir is not None:
        save_report(report, Path(run_dir) / BASELINE_FILE)
    if report.truncated:
        raise BaselineError(f"Baseline test run is unusable: {report.diagnostic}")
    logger.debug(f"Baseline: {report.counts()}")
    return report
