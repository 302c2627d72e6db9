"""
Configuration management for the Speculative Verdict Harness

Two layers: process settings read from the environment (``Settings``) and
the declarative run file describing the model pool (``RunConfig``).
"""
import os
import re
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings

from .exceptions import ConfigError
from .models import (
    AnswerFormat,
    BenchmarkKind,
    MetricKind,
    SelectionStrategy,
    VerdictInput,
    VerdictVisual,
)


class Settings(BaseSettings):
    """Process settings with environment variable support"""

    # Logging settings
    log_level: str = "INFO"
    log_file: Optional[str] = None

    # Output directories
    output_dir: str = "./runs"

    # Mock server settings
    mock_host: str = "127.0.0.1"
    mock_port: int = 8765

    # Execution settings
    default_max_concurrency: int = 8
    progress: bool = True

    class Config:
        env_file = ".env"
        env_prefix = "SVERDICT_"
        extra = "ignore"


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get the global settings instance"""
    return settings


def reload_settings() -> Settings:
    """Re-read the environment into the global settings instance"""
    global settings
    settings = Settings()
    return settings


class ApiStyle(Enum):
    """Request schema spoken by an endpoint"""
    CHAT = "chat"
    COMPLETIONS = "completions"


class ScoringBackend(Enum):
    """How an endpoint exposes answer log-probabilities"""
    ECHO_LOGPROBS = "echo_logprobs"
    SCORE_ROUTE = "score_route"
    NONE = "none"


DEFAULT_ANSWER_FORMATS: Dict[BenchmarkKind, AnswerFormat] = {
    BenchmarkKind.INFOGRAPHIC_VQA: AnswerFormat.BOXED,
    BenchmarkKind.CHARTMUSEUM: AnswerFormat.TAGGED,
    BenchmarkKind.CHARTQAPRO: AnswerFormat.TAGGED,
    BenchmarkKind.HRBENCH: AnswerFormat.LETTER,
    BenchmarkKind.CUSTOM: AnswerFormat.BOXED,
}


class Pricing(BaseModel):
    """Dollar price per million tokens"""
    input_per_million: float = Field(default=0.0, ge=0)
    output_per_million: float = Field(default=0.0, ge=0)


class ModelSpec(BaseModel):
    """One OpenAI-compatible endpoint"""
    name: str
    base_url: str
    model: Optional[str] = None
    api_style: ApiStyle = ApiStyle.CHAT
    supports_scoring: ScoringBackend = ScoringBackend.SCORE_ROUTE
    pricing: Pricing = Field(default_factory=Pricing)
    request_timeout: float = Field(default=60.0, gt=0)
    max_retries: int = Field(default=3, ge=0)
    retry_backoff: float = Field(default=1.0, ge=0)
    max_concurrency: Optional[int] = Field(default=None, ge=1)
    api_key_env: Optional[str] = None
    system_role: bool = True

    @property
    def served_model(self) -> str:
        return self.model or self.name

    @field_validator("base_url")
    @classmethod
    def _strip_slash(cls, value: str) -> str:
        return value.rstrip("/")

    def api_key(self) -> Optional[str]:
        if not self.api_key_env:
            return None
        return os.environ.get(self.api_key_env)


class MaxTokens(BaseModel):
    """Generation caps per round"""
    answer: int = 64
    reasoning: int = 4096
    verdict: int = 256


class RunConfig(BaseModel):
    """Declarative description of one Speculative Verdict run"""
    pool: List[ModelSpec] = Field(min_length=1)
    verdict: ModelSpec
    m: int = 3
    strategy: SelectionStrategy = SelectionStrategy.CROSS_ALL
    reference: Optional[Union[int, str]] = None
    verdict_input: VerdictInput = VerdictInput.REASONING_PATHS
    verdict_visual: VerdictVisual = VerdictVisual.IMAGE_PLUS_AUX
    max_concurrency: int = Field(default=8, ge=1)
    temperature: float = Field(default=0.0, ge=0)
    max_tokens: MaxTokens = Field(default_factory=MaxTokens)
    answer_formats: Dict[str, AnswerFormat] = Field(default_factory=dict)
    economy_mode: bool = False
    max_image_side: Optional[int] = Field(default=None, ge=1)
    anls_threshold: float = Field(default=0.5, ge=0, le=1)
    relaxed_tolerance: float = Field(default=0.05, ge=0)
    strict_accuracy: bool = False
    custom_metric: MetricKind = MetricKind.EXACT
    chartqapro_templates: Dict[str, str] = Field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.pool)

    @field_validator("answer_formats")
    @classmethod
    def _known_benchmarks(cls, value: Dict[str, AnswerFormat]) -> Dict[str, AnswerFormat]:
        for key in value:
            BenchmarkKind(key)
        return value

    @model_validator(mode="after")
    def _check_pool(self) -> "RunConfig":
        if not 1 <= self.m <= self.k:
            raise ValueError(f"m must lie in [1, {self.k}], got {self.m}")
        names = [spec.name for spec in self.pool]
        if len(set(names)) != len(names):
            raise ValueError(f"pool model names must be unique: {names}")
        if self.k > 1:
            unscored = [spec.name for spec in self.pool if spec.supports_scoring == ScoringBackend.NONE]
            if unscored:
                raise ValueError(f"pool members need a scoring backend: {unscored}")
        if self.strategy == SelectionStrategy.BEST_REFERENCE and self.reference is not None:
            self.reference_index()
        return self

    def reference_index(self) -> Optional[int]:
        """Pool index of the best_reference anchor"""
        if self.reference is None:
            return None
        if isinstance(self.reference, int):
            if not 0 <= self.reference < self.k:
                raise ValueError(f"reference index {self.reference} outside pool of {self.k}")
            return self.reference
        for index, spec in enumerate(self.pool):
            if spec.name == self.reference:
                return index
        raise ValueError(f"reference '{self.reference}' is not a pool member")

    def answer_format_for(self, benchmark: BenchmarkKind) -> AnswerFormat:
        return self.answer_formats.get(benchmark.value, DEFAULT_ANSWER_FORMATS[benchmark])


_ENV_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


def interpolate_env(text: str, environ: Optional[Dict[str, str]] = None) -> str:
    """Expand ${VAR} and ${VAR:-default} references"""
    env = os.environ if environ is None else environ

    def _replace(match: re.Match) -> str:
        name, default = match.group(1), match.group(2)
        if name in env:
            return env[name]
        if default is not None:
            return default
        raise ConfigError(f"environment variable {name} is not set")

    return _ENV_PATTERN.sub(_replace, text)


def parse_run_config(
    text: str,
    environ: Optional[Dict[str, str]] = None,
    default_concurrency: Optional[int] = None,
) -> RunConfig:
    """Validate a YAML run file; an omitted max_concurrency falls back to the process default"""
    try:
        data = yaml.safe_load(interpolate_env(text, environ))
    except yaml.YAMLError as e:
        raise ConfigError(f"run config is not valid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("run config must be a mapping")
    if data.get("max_concurrency") is None:
        data["max_concurrency"] = default_concurrency or get_settings().default_max_concurrency
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e


def load_run_config(path: Union[str, Path], default_concurrency: Optional[int] = None) -> RunConfig:
    """Read and validate a YAML run file"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read run config {path}: {e}") from e
    return parse_run_config(text, default_concurrency=default_concurrency)


def dump_run_config(config: RunConfig) -> str:
    """Normalized YAML form of a run config"""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False, allow_unicode=True)


def apply_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """Return a copy with the non-None overrides applied and re-validated"""
    updates = {key: value for key, value in overrides.items() if value is not None}
    if not updates:
        return config
    data = config.model_dump(mode="json")
    for key, value in updates.items():
        data[key] = value.value if isinstance(value, Enum) else value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid override {updates}: {e}") from e
