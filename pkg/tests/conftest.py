"""
Shared fixtures: a scripted completion backend and the sample repository.
"""

import json
import shutil
import sys
import threading
from pathlib import Path
from typing import Dict, List, Optional

import pytest

from repofix.config import EngineConfig, RunConfig, TestRunnerConfig
from repofix.core import BackendError
from repofix.llm import CompletionRequest, CompletionResponse, Gateway, Role

FIXTURES_DIR = Path(__file__).parent / "fixtures"
SAMPLE_REPO = FIXTURES_DIR / "sample_repo"
ISSUE_FILE = FIXTURES_DIR / "issue.txt"
EVAL_INSTANCES = FIXTURES_DIR / "eval_instances.jsonl"

MEAN_HEADER = 'def mean(values):\n    """Arithmetic mean of values."""\n'

# Divides by the number of values.
MEAN_FIX = (
    MEAN_HEADER
    + "    if not values:\n"
    + '        raise ValueError("mean of empty sequence")\n'
    + "    return sum(values) / len(values)\n"
)

# Also correct, spelled differently.
MEAN_FIX_FLOAT = (
    MEAN_HEADER
    + "    if not values:\n"
    + '        raise ValueError("mean of empty sequence")\n'
    + "    return sum(values) / float(len(values))\n"
)

# Fixes the average but stops raising on empty input.
MEAN_REGRESSING = MEAN_HEADER + "    return sum(values) / len(values) if values else 0.0\n"

MEAN_BROKEN_SYNTAX = MEAN_HEADER + "    return sum(values) / len(values\n"

MEAN_LOCATION = {
    "level": "method",
    "name": "mean",
    "start_line": 4,
    "end_line": 8,
    "instruction": "Divide the sum by len(values) instead of len(values) - 1.",
}


def code(text: str) -> str:
    """A code_generation/refinement answer wrapping text."""
    return json.dumps({"code": text})


def localization_script(files: Optional[List[str]] = None) -> Dict:
    """Answers for the localization roles on the sample repository."""
    return {
        Role.QUERY_GENERATION: [json.dumps(["mean average wrong value", "divide sum by count"])],
        Role.FILE_LOCATOR: [json.dumps(files or ["calc/stats.py", "calc/missing.py"])],
        Role.PREASSIMILATOR: [
            json.dumps({"files": ["calc/stats.py"], "rationale": "mean is defined there"})
        ],
        Role.CODER_PARSER: [json.dumps([MEAN_LOCATION])],
    }


class ScriptedBackend:
    """Answers by role, or by (role, temperature) when such a key is scripted.

    Each key holds a queue of answers; the last answer repeats once the queue
    is exhausted.
    """

    backend_id = "scripted"

    def __init__(self, script: Dict):
        self.script = {k: list(v) for k, v in script.items()}
        self.requests: List[CompletionRequest] = []
        self._served: Dict = {}
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest, model: str) -> CompletionResponse:
        with self._lock:
            self.requests.append(request)
            key = (request.role, round(request.temperature, 6))
            if key not in self.script:
                key = request.role
            answers = self.script.get(key)
            if not answers:
                raise BackendError(f"No scripted answer for {request.role.value}")
            served = self._served.get(key, 0)
            self._served[key] = served + 1
            text = answers[min(served, len(answers) - 1)]
        return CompletionResponse(
            text=text,
            prompt_tokens=len(request.prompt.split()),
            completion_tokens=len(text.split()),
            backend_id=self.backend_id,
        )

    def calls(self, role: Role, temperature: Optional[float] = None) -> int:
        return sum(
            1
            for r in self.requests
            if r.role == role and (temperature is None or r.temperature == temperature)
        )


@pytest.fixture(autouse=True)
def repofix_home(tmp_path, monkeypatch) -> Path:
    """Keeps default index and run directories inside the test's tmp_path."""
    home = tmp_path / "home"
    monkeypatch.setenv("REPOFIX_HOME", str(home))
    return home


@pytest.fixture
def scripted():
    """Factory for a Gateway over a ScriptedBackend."""

    def make(script: Dict, log_dir=None) -> Gateway:
        return Gateway(ScriptedBackend(script), log_dir=log_dir)

    return make


@pytest.fixture
def sample_repo(tmp_path) -> Path:
    """A private copy of the sample repository."""
    target = tmp_path / "checkout"
    shutil.copytree(SAMPLE_REPO, target)
    return target


@pytest.fixture
def runner_config() -> TestRunnerConfig:
    return TestRunnerConfig(
        command=(sys.executable, "run_tests.py"),
        timeout=60.0,
        env=(("PYTHONDONTWRITEBYTECODE", "1"),),
    )


@pytest.fixture
def run_config(sample_repo, runner_config, tmp_path) -> RunConfig:
    return RunConfig(
        repo_root=str(sample_repo),
        index_dir=str(tmp_path / "index"),
        run_dir=str(tmp_path / "run"),
        runner=runner_config,
        engine=EngineConfig(temperatures=(0.0, 0.4, 0.8)),
    )
