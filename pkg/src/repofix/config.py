"""
Configuration for repofix.

Every knob has a default. Values are layered: defaults, then the TOML config
file, then environment variables, then CLI flags.
"""

import dataclasses
import logging
import os
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from repofix.core import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_EXCLUDED_DIRS = (
    ".git",
    "__pycache__",
    "venv",
    ".venv",
    "build",
    "dist",
    "node_modules",
    ".repofix",
)

ANALYSIS_MAX_TOKENS = 1024
CODE_MAX_TOKENS = 4096


@dataclass(frozen=True)
class IndexConfig:
    extensions: Tuple[str, ...] = (".py",)
    excluded_dirs: Tuple[str, ...] = DEFAULT_EXCLUDED_DIRS
    exclude: Tuple[str, ...] = ()
    workers: int = 4


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "hash"  # hash | http
    dim: int = 64
    base_url: str = ""
    model: str = ""
    api_key_env: str = "EMBEDDER_API_KEY"
    timeout: float = 30.0
    retries: int = 3


@dataclass(frozen=True)
class LocalizerConfig:
    n_queries: int = 4
    m_files: int = 5
    per_query_k: int = 5
    cap: int = 5
    l_max: Optional[int] = 2
    map_token_budget: int = 30000
    location_retry: int = 1


@dataclass(frozen=True)
class EngineConfig:
    temperatures: Tuple[float, ...] = (0.0, 0.4, 0.8)
    retry_budget: int = 2
    max_refinements: int = 1
    parallel_generation: bool = True
    hermetic: bool = False
    strict_vanished: bool = True
    keep_workspaces: bool = False


@dataclass(frozen=True)
class TestRunnerConfig:
    command: Tuple[str, ...] = ("python", "-m", "pytest", "-q")
    report_format: str = "line_protocol"  # line_protocol | junit_xml
    report_file: Optional[str] = None
    timeout: float = 1800.0
    env: Tuple[Tuple[str, str], ...] = ()

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not self.command:
            raise ConfigurationError("Test runner command must not be empty")
        if self.timeout <= 0:
            raise ConfigurationError("Test runner timeout must be positive")
        if self.report_format not in ("line_protocol", "junit_xml"):
            raise ConfigurationError(
                f"Unknown report format '{self.report_format}' "
                "(expected line_protocol or junit_xml)"
            )


@dataclass(frozen=True)
class GatewayConfig:
    backend: str = "live"  # live | replay | record
    transcript: Optional[str] = None
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key: Optional[str] = None
    role_models: Tuple[Tuple[str, str], ...] = ()
    analysis_max_tokens: int = ANALYSIS_MAX_TOKENS
    code_max_tokens: int = CODE_MAX_TOKENS
    max_concurrency: int = 4
    request_retries: int = 3
    timeout: float = 120.0

    def model_for(self, role: str) -> str:
        return dict(self.role_models).get(role, self.model)


@dataclass(frozen=True)
class RunConfig:
    repo_root: Optional[str] = None
    issue: Optional[str] = None
    index_dir: Optional[str] = None
    run_dir: Optional[str] = None
    out_dir: Optional[str] = None
    index: IndexConfig = field(default_factory=IndexConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    runner: TestRunnerConfig = field(default_factory=TestRunnerConfig)
    llm: GatewayConfig = field(default_factory=GatewayConfig)


_SECTIONS = {
    "index": IndexConfig,
    "embedder": EmbedderConfig,
    "localizer": LocalizerConfig,
    "engine": EngineConfig,
    "runner": TestRunnerConfig,
    "llm": GatewayConfig,
}


def _coerce(value: Any) -> Any:
    """TOML arrays become tuples and tables become sorted pair tuples."""
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    if isinstance(value, dict):
        return tuple(sorted((str(k), str(v)) for k, v in value.items()))
    return value


def _build_section(cls, data: Mapping[str, Any], section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(
            f"Unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
        )
    try:
        return cls(**{k: _coerce(v) for k, v in data.items()})
    except TypeError as e:
        raise ConfigurationError(f"Invalid [{section}] configuration: {e}") from e


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    """Builds a RunConfig from a parsed config mapping."""
    top_level = {f.name for f in dataclasses.fields(RunConfig)} - set(_SECTIONS)
    kwargs: Dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigurationError(f"[{key}] must be a table")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        elif key in top_level:
            kwargs[key] = value
        else:
            raise ConfigurationError(f"Unknown configuration key '{key}'")
    return RunConfig(**kwargs)


def apply_env(config: RunConfig, environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Overrides gateway settings from LLM_* environment variables."""
    env = os.environ if environ is None else environ
    overrides: Dict[str, Any] = {}
    if env.get("LLM_API_KEY"):
        overrides["api_key"] = env["LLM_API_KEY"]
    if env.get("LLM_BASE_URL"):
        overrides["base_url"] = env["LLM_BASE_URL"]
    if env.get("LLM_MODEL"):
        overrides["model"] = env["LLM_MODEL"]
    if not overrides:
        return config
    return dataclasses.replace(config, llm=dataclasses.replace(config.llm, **overrides))


def load_config(path: Optional[str] = None) -> RunConfig:
    """Loads the run configuration from an optional TOML file plus environment."""
    config = RunConfig()
    if path:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigurationError(f"Config file not found: {path}")
        try:
            with open(config_path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"Invalid config file {path}: {e}") from e
        config = config_from_dict(data)
        logger.debug(f"Loaded configuration from {config_path}")
    return apply_env(config)


def override(section, **values: Any):
    """Returns section with the given non-None values replaced."""
    present = {k: v for k, v in values.items() if v is not None}
    if not present:
        return section
    return dataclasses.replace(section, **present)
