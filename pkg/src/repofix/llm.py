"""
Completion gateway for repofix.

A uniform completion interface over pluggable backends (live HTTP, replay,
record), the role prompt templates, structured-output parsing and the
error-feedback retry loop.
"""

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from enum import StrEnum
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Callable, Dict, List, Literal, Optional, Protocol, Tuple

import httpx
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from repofix.config import GatewayConfig
from repofix.core import (
    BackendError,
    ConfigurationError,
    CorruptArtifactError,
    EditRejectedError,
    ReplayMissError,
    StructuredOutputError,
)

logger = logging.getLogger(__name__)

RETRY_SECTION = "\n\nPrevious attempt failed because:\n{diagnostic}\n"
MAX_TEMPERATURE = 2.0


class Role(StrEnum):
    QUERY_GENERATION = "query_generation"
    FILE_LOCATOR = "file_locator"
    PREASSIMILATOR = "preassimilator"
    CODER_PARSER = "coder_parser"
    CODE_GENERATION = "code_generation"
    REFINEMENT = "refinement"
    FINAL_SELECTION = "final_selection"


CODE_ROLES = frozenset({Role.CODE_GENERATION, Role.REFINEMENT})


@dataclass(frozen=True)
class CompletionRequest:
    role: Role
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("Completion prompt must not be empty")
        if not 0.0 <= self.temperature <= MAX_TEMPERATURE:
            raise ValueError(f"Temperature {self.temperature} outside [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(
            [self.role.value, self.prompt, round(float(self.temperature), 6)],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    backend_id: str = ""


class Backend(Protocol):
    backend_id: str

    def complete(self, request: CompletionRequest, model: str) -> CompletionResponse: ...


class LiveBackend:
    """Chat-completion HTTP backend (model, messages, temperature, max_tokens)."""

    backend_id = "live"

    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        timeout: float = 120.0,
        retries: int = 3,
        max_concurrency: int = 4,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = httpx.Client(
            base_url=base_url, headers=headers, timeout=timeout, transport=transport
        )
        self.retries = max(1, retries)
        self._slots = threading.BoundedSemaphore(max(1, max_concurrency))

    def complete(self, request: CompletionRequest, model: str) -> CompletionResponse:
        body = {
            "model": model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        last_error: Optional[Exception] = None
        for attempt in range(1, self.retries + 1):
            try:
                with self._slots:
                    response = self.client.post("/chat/completions", json=body)
                if response.status_code == 429 or response.status_code >= 500:
                    response.raise_for_status()
                if response.status_code >= 400:
                    raise BackendError(
                        f"Completion request rejected ({response.status_code}): "
                        f"{response.text[:200]}"
                    )
                data = response.json()
                usage = data.get("usage") or {}
                return CompletionResponse(
                    text=data["choices"][0]["message"]["content"] or "",
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    completion_tokens=int(usage.get("completion_tokens", 0)),
                    backend_id=self.backend_id,
                )
            except (httpx.TransportError, httpx.HTTPStatusError) as e:
                last_error = e
                logger.warning(
                    f"Completion request failed (attempt {attempt}/{self.retries}): {e}"
                )
                if attempt < self.retries:
                    time.sleep(min(2 ** (attempt - 1), 8))
            except (KeyError, IndexError, TypeError, ValueError) as e:
                raise BackendError(f"Malformed completion response: {e}") from e
        raise BackendError(
            f"Completion backend unavailable after {self.retries} attempts: {last_error}"
        ) from last_error

    def close(self) -> None:
        self.client.close()


@dataclass
class TranscriptEntry:
    fingerprint: str
    role: str
    temperature: float
    prompt: str
    response: CompletionResponse


@dataclass
class Transcript:
    """Ordered (fingerprint, response) pairs, persisted as JSON lines."""

    entries: List[TranscriptEntry] = field(default_factory=list)
    path: Optional[Path] = None
    _served: Dict[str, int] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def load(cls, path) -> "Transcript":
        transcript = cls(path=Path(path))
        try:
            with open(path, "r", encoding="utf-8") as f:
                for lineno, line in enumerate(f, 1):
                    if not line.strip():
                        continue
                    data = json.loads(line)
                    r = data["response"]
                    transcript.entries.append(
                        TranscriptEntry(
                            fingerprint=data["fingerprint"],
                            role=data.get("role", ""),
                            temperature=float(data.get("temperature", 0.0)),
                            prompt=data.get("prompt", ""),
                            response=CompletionResponse(
                                text=r["text"],
                                prompt_tokens=int(r.get("prompt_tokens", 0)),
                                completion_tokens=int(r.get("completion_tokens", 0)),
                            ),
                        )
                    )
        except FileNotFoundError as e:
            raise ConfigurationError(f"Transcript not found: {path}") from e
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise CorruptArtifactError(f"Corrupt transcript {path}: {e}") from e
        return transcript

    def lookup(self, fingerprint: str) -> Optional[CompletionResponse]:
        """Serves recorded responses in order; the last one repeats when exhausted."""
        with self._lock:
            matches = [e for e in self.entries if e.fingerprint == fingerprint]
            if not matches:
                return None
            served = self._served.get(fingerprint, 0)
            self._served[fingerprint] = served + 1
            return matches[min(served, len(matches) - 1)].response

    def append(self, request: CompletionRequest, response: CompletionResponse) -> None:
        entry = TranscriptEntry(
            fingerprint=request.fingerprint,
            role=request.role.value,
            temperature=request.temperature,
            prompt=request.prompt,
            response=response,
        )
        with self._lock:
            self.entries.append(entry)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(_entry_to_dict(entry), ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self.entries)


def _entry_to_dict(entry: TranscriptEntry) -> Dict[str, Any]:
    return {
        "fingerprint": entry.fingerprint,
        "role": entry.role,
        "temperature": entry.temperature,
        "prompt": entry.prompt,
        "response": {
            "text": entry.response.text,
            "prompt_tokens": entry.response.prompt_tokens,
            "completion_tokens": entry.response.completion_tokens,
        },
    }


class ReplayBackend:
    """Answers only from a transcript; a miss is an error, never a live call."""

    backend_id = "replay"

    def __init__(self, transcript: Transcript):
        self.transcript = transcript

    def complete(self, request: CompletionRequest, model: str) -> CompletionResponse:
        response = self.transcript.lookup(request.fingerprint)
        if response is None:
            raise ReplayMissError(request.fingerprint, request.role.value)
        return CompletionResponse(
            text=response.text,
            prompt_tokens=response.prompt_tokens,
            completion_tokens=response.completion_tokens,
            backend_id=self.backend_id,
        )


class RecordingBackend:
    """Delegates to another backend and appends every exchange to a transcript."""

    backend_id = "record"

    def __init__(self, inner: Backend, transcript: Transcript):
        self.inner = inner
        self.transcript = transcript

    def complete(self, request: CompletionRequest, model: str) -> CompletionResponse:
        response = self.inner.complete(request, model)
        self.transcript.append(request, response)
        return response


def make_backend(
    config: GatewayConfig, transport: Optional[httpx.BaseTransport] = None
) -> Backend:
    """Builds the configured backend (live, replay or record)."""
    if config.backend == "replay":
        if not config.transcript:
            raise ConfigurationError("Replay backend requires a transcript path")
        return ReplayBackend(Transcript.load(config.transcript))

    live = LiveBackend(
        base_url=config.base_url,
        api_key=config.api_key,
        timeout=config.timeout,
        retries=config.request_retries,
        max_concurrency=config.max_concurrency,
        transport=transport,
    )
    if config.backend == "live":
        return live
    if config.backend == "record":
        if not config.transcript:
            raise ConfigurationError("Record backend requires a transcript path")
        path = Path(config.transcript)
        transcript = Transcript.load(path) if path.exists() else Transcript(path=path)
        return RecordingBackend(live, transcript)
    raise ConfigurationError(f"Unknown completion backend '{config.backend}'")


# Expected response shapes


class SelectionPayload(BaseModel):
    files: List[str]
    rationale: str = ""


class LocationPayload(BaseModel):
    level: Literal["top_level", "class", "method"]
    name: str = ""
    start_line: int = Field(ge=1)
    end_line: Optional[int] = Field(default=None, ge=1)
    instruction: str = Field(min_length=1)


class CodePayload(BaseModel):
    code: str


class ChoicePayload(BaseModel):
    id: int
    reason: str = ""


@dataclass(frozen=True)
class Schema:
    description: str
    adapter: TypeAdapter


QUERY_LIST = Schema("a JSON array of strings", TypeAdapter(List[str]))
PATH_LIST = Schema("a JSON array of file path strings", TypeAdapter(List[str]))
SELECTION = Schema(
    'a JSON object {"files": [...], "rationale": "..."}', TypeAdapter(SelectionPayload)
)
LOCATIONS = Schema(
    'a JSON array of {"level", "name", "start_line", "end_line"?, "instruction"} objects',
    TypeAdapter(List[LocationPayload]),
)
CODE = Schema('a JSON object {"code": "..."}', TypeAdapter(CodePayload))
CHOICE = Schema('a JSON object {"id": <int>, "reason": "..."}', TypeAdapter(ChoicePayload))

_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


def extract_json(text: str) -> Any:
    """Returns the first JSON value in text, tolerating prose and code fences.

    Raises:
        StructuredOutputError: If no JSON value is present
    """
    decoder = json.JSONDecoder()
    candidates = [m.group(1) for m in _FENCE.finditer(text)] + [text]
    for chunk in candidates:
        for i, ch in enumerate(chunk):
            if ch not in "[{":
                continue
            try:
                value, _ = decoder.raw_decode(chunk, i)
                return value
            except json.JSONDecodeError:
                continue
    raise StructuredOutputError("No JSON value found in the response.")


def _describe_validation_error(e: ValidationError) -> str:
    problems = []
    for err in e.errors()[:5]:
        loc = ".".join(str(p) for p in err.get("loc", ())) or "value"
        problems.append(f"{loc}: {err.get('msg')}")
    return "; ".join(problems)


def parse_structured(text: str, schema: Schema) -> Any:
    """Extracts and validates the structured value of a completion.

    Raises:
        StructuredOutputError: With a diagnostic suitable for re-prompting
    """
    value = extract_json(text)
    try:
        return schema.adapter.validate_python(value)
    except ValidationError as e:
        raise StructuredOutputError(
            f"Expected {schema.description}; got {type(value).__name__} "
            f"({_describe_validation_error(e)})."
        ) from e


class PromptLibrary:
    """Role prompt templates shipped in the repofix.prompts package."""

    def __init__(self, directory: Optional[Path] = None):
        self.directory = directory
        self._cache: Dict[Role, Template] = {}

    def template(self, role: Role) -> Template:
        if role not in self._cache:
            name = f"{role.value}.txt"
            if self.directory is not None:
                text = (self.directory / name).read_text(encoding="utf-8")
            else:
                text = resources.files("repofix.prompts").joinpath(name).read_text(
                    encoding="utf-8"
                )
            self._cache[role] = Template(text)
        return self._cache[role]

    def render(self, role: Role, **values: Any) -> str:
        try:
            return self.template(role).substitute(
                {k: str(v) for k, v in values.items()}
            )
        except KeyError as e:
            raise ConfigurationError(f"Prompt for {role.value} is missing value {e}") from e


@dataclass
class RoleUsage:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class RetryResult:
    value: Any
    attempt: int


class Gateway:
    """Role-aware completion entry point with usage accounting and a run log."""

    def __init__(
        self,
        backend: Backend,
        config: Optional[GatewayConfig] = None,
        prompts: Optional[PromptLibrary] = None,
        log_dir: Optional[Path] = None,
    ):
        self.backend = backend
        self.config = config or GatewayConfig()
        self.prompts = prompts or PromptLibrary()
        self.log_dir = Path(log_dir) if log_dir else None
        self.usage: Dict[str, RoleUsage] = {}
        self._seq = 0
        self._lock = threading.Lock()

    def max_tokens_for(self, role: Role) -> int:
        if role in CODE_ROLES:
            return self.config.code_max_tokens
        return self.config.analysis_max_tokens

    def request(self, role: Role, prompt: str, temperature: float = 0.0) -> CompletionRequest:
        return CompletionRequest(
            role=role,
            prompt=prompt,
            temperature=temperature,
            max_tokens=self.max_tokens_for(role),
        )

    def complete(self, request: CompletionRequest, attempt: int = 1) -> CompletionResponse:
        logger.debug(
            f"Completion: role={request.role.value} temperature={request.temperature} "
            f"attempt={attempt}"
        )
        response = self.backend.complete(request, self.config.model_for(request.role.value))
        with self._lock:
            usage = self.usage.setdefault(request.role.value, RoleUsage())
            usage.calls += 1
            usage.prompt_tokens += response.prompt_tokens
            usage.completion_tokens += response.completion_tokens
            self._seq += 1
            seq = self._seq
        self._log(seq, request, response, attempt)
        return response

    def _log(
        self, seq: int, request: CompletionRequest, response: CompletionResponse, attempt: int
    ) -> None:
        if self.log_dir is None:
            return
        self.log_dir.mkdir(parents=True, exist_ok=True)
        record = {
            "role": request.role.value,
            "temperature": request.temperature,
            "attempt": attempt,
            "fingerprint": request.fingerprint,
            "prompt": request.prompt,
            "response": response.text,
            "prompt_tokens": response.prompt_tokens,
            "completion_tokens": response.completion_tokens,
        }
        path = self.log_dir / f"{seq:04d}_{request.role.value}.json"
        path.write_text(json.dumps(record, indent=2, ensure_ascii=False), encoding="utf-8")

    def complete_with_retry(
        self,
        role: Role,
        prompt: str,
        schema: Schema,
        budget: int,
        temperature: float = 0.0,
        validate: Optional[Callable[[Any, bool], Any]] = None,
    ) -> RetryResult:
        """Completes and parses, re-prompting with the diagnostic on failure.

        Args:
            role: Prompt role
            prompt: Rendered first-attempt prompt
            schema: Expected response shape
            budget: Number of extra attempts after the first
            temperature: Sampling temperature
            validate: Optional callback (value, is_final_attempt) turning the parsed
                      value into the result; raising StructuredOutputError or
                      EditRejectedError triggers a retry

        Returns:
            RetryResult with the (validated) value and the 1-based attempt number

        Raises:
            StructuredOutputError: When the budget is exhausted
        """
        if budget < 0:
            raise ValueError("Retry budget must be non-negative")

        diagnostics: List[str] = []
        for attempt in range(1, budget + 2):
            current = prompt + "".join(RETRY_SECTION.format(diagnostic=d) for d in diagnostics)
            response = self.complete(self.request(role, current, temperature), attempt)
            try:
                value = parse_structured(response.text, schema)
                if validate is not None:
                    value = validate(value, attempt == budget + 1)
                return RetryResult(value=value, attempt=attempt)
            except (StructuredOutputError, EditRejectedError) as e:
                diagnostic = getattr(e, "diagnostic", str(e))
                logger.debug(f"{role.value} attempt {attempt} rejected: {diagnostic}")
                diagnostics.append(diagnostic)

        raise StructuredOutputError(
            f"{role.value} failed after {budget + 1} attempt(s): {diagnostics[-1]}"
        )

    def usage_summary(self) -> Dict[str, Dict[str, int]]:
        return {
            role: {
                "calls": u.calls,
                "prompt_tokens": u.prompt_tokens,
                "completion_tokens": u.completion_tokens,
            }
            for role, u in sorted(self.usage.items())
        }

    def calls(self, role: Role) -> int:
        usage = self.usage.get(role.value)
        return usage.calls if usage else 0


def make_gateway(
    config: GatewayConfig,
    log_dir: Optional[Path] = None,
    transport: Optional[httpx.BaseTransport] = None,
) -> Gateway:
    check_role_models(config.role_models)
    return Gateway(make_backend(config, transport=transport), config=config, log_dir=log_dir)


def check_role_models(pairs: Tuple[Tuple[str, str], ...]) -> None:
    unknown = {role for role, _ in pairs} - {r.value for r in Role}
    if unknown:
        raise ConfigurationError(f"Unknown role(s) in role_models: {', '.join(sorted(unknown))}")
