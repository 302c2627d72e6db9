"""
Scenario files for the mock model server.

A scenario is an ordered list of rules. Each request is matched against the
rules in order and the first match decides the response, so a scenario
always answers the same request the same way.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, model_validator

from ..core.exceptions import ScenarioError

logger = logging.getLogger(__name__)


class RuleKind(Enum):
    """Which requests a rule answers"""
    GENERATE = "generate"
    SCORE = "score"
    ANY = "any"


class FailureMode(Enum):
    """Injected failure"""
    TIMEOUT = "timeout"
    RATE_LIMIT = "rate_limit"
    SERVER_ERROR = "server_error"


class RuleUsage(BaseModel):
    prompt_tokens: int = Field(default=0, ge=0)
    completion_tokens: int = Field(default=0, ge=0)


@dataclass
class MockRequest:
    """What a rule can match on"""
    kind: RuleKind
    model: str
    digest: str
    text: str
    answer: Optional[str] = None


class ScenarioRule(BaseModel):
    """One scripted response"""
    model: Optional[str] = None
    kind: RuleKind = RuleKind.ANY
    digest: Optional[str] = None
    contains: Optional[Union[str, List[str]]] = None
    answer: Optional[str] = None
    response_text: str = ""
    token_logprobs: Optional[List[float]] = None
    usage: RuleUsage = Field(default_factory=RuleUsage)
    latency_ms: float = Field(default=0.0, ge=0)
    failure_mode: Optional[FailureMode] = None
    failures: Optional[int] = Field(default=None, ge=1)
    finish_reason: str = "stop"

    @model_validator(mode="after")
    def _check_score_rule(self) -> "ScenarioRule":
        if self.kind == RuleKind.SCORE and self.token_logprobs is None and self.failure_mode is None:
            raise ValueError("score rules need token_logprobs or a failure_mode")
        if self.token_logprobs is not None and not self.token_logprobs:
            raise ValueError("token_logprobs must not be empty")
        return self

    @property
    def needles(self) -> List[str]:
        if self.contains is None:
            return []
        return [self.contains] if isinstance(self.contains, str) else list(self.contains)

    def matches(self, request: MockRequest) -> bool:
        if self.kind != RuleKind.ANY and self.kind != request.kind:
            return False
        if request.kind == RuleKind.SCORE and self.token_logprobs is None and self.failure_mode is None:
            return False
        if self.model is not None and self.model != request.model:
            return False
        if self.digest is not None and self.digest != request.digest:
            return False
        if self.answer is not None and self.answer != request.answer:
            return False
        return all(needle in request.text for needle in self.needles)


class Scenario(BaseModel):
    """Ordered rules plus server-wide knobs"""
    rules: List[ScenarioRule] = Field(default_factory=list)
    timeout_seconds: float = Field(default=5.0, gt=0)

    def match(self, request: MockRequest) -> Optional[Tuple[int, ScenarioRule]]:
        """First matching rule and its position"""
        for index, rule in enumerate(self.rules):
            if rule.matches(request):
                return index, rule
        return None


def parse_scenario(data: object) -> Scenario:
    try:
        if isinstance(data, list):
            data = {"rules": data}
        return Scenario.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(f"invalid scenario: {e}") from e


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Read and validate a scenario JSON file"""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from e
    scenario = parse_scenario(data)
    logger.info(f"Loaded scenario {path} with {len(scenario.rules)} rules")
    return scenario
