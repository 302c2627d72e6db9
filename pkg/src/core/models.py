"""
Speculative Verdict Harness - Core Models

This module defines the data models shared by the pipeline, the consensus
scorer, the model connectors and the evaluation reports. Every model knows
how to serialize itself into the JSON-lines stage files of a run directory.
"""

import math
from enum import Enum
from typing import Dict, Any, Optional, List
from dataclasses import dataclass, field

import numpy as np


class BenchmarkKind(Enum):
    """Supported benchmark families"""
    INFOGRAPHIC_VQA = "InfographicVQA"
    CHARTMUSEUM = "ChartMuseum"
    CHARTQAPRO = "ChartQAPro"
    HRBENCH = "HRBench"
    CUSTOM = "Custom"


class MetricKind(Enum):
    """Per-sample scoring functions"""
    ANLS = "anls"
    RELAXED = "relaxed"
    EXACT = "exact"
    LETTER = "letter"


class AnswerFormat(Enum):
    """Marker used to pull the final answer out of model output"""
    BOXED = "boxed"
    TAGGED = "tagged"
    LETTER = "letter"


class FinishReason(Enum):
    """Why a generation stopped"""
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


class SelectionStrategy(Enum):
    """Expert selection strategies"""
    CROSS_ALL = "cross_all"
    BEST_REFERENCE = "best_reference"
    DIVERGENT = "divergent"


class VerdictInput(Enum):
    """Textual evidence forwarded to the verdict"""
    REASONING_PATHS = "reasoning_paths"
    ANSWERS_ONLY = "answers_only"


class VerdictVisual(Enum):
    """Visual evidence forwarded to the verdict"""
    IMAGE_PLUS_AUX = "image_plus_aux"
    IMAGE_ONLY = "image_only"
    NONE = "none"


class OutcomeStatus(Enum):
    """Sample processing status"""
    COMPLETED = "completed"
    FAILED = "failed"


def finite_or_none(value: float) -> Optional[float]:
    """JSON has no infinity; +inf scores are written as null"""
    return None if math.isinf(value) else float(value)


def none_to_inf(value: Optional[float]) -> float:
    return math.inf if value is None else float(value)


@dataclass
class Sample:
    """One benchmark item"""
    id: str
    question: str
    image: str
    gold_answers: List[str]
    benchmark: BenchmarkKind
    aux_image: Optional[str] = None
    question_type: Optional[str] = None


@dataclass
class TokenUsage:
    """Token counts reported by an endpoint"""
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            prompt_tokens=self.prompt_tokens + other.prompt_tokens,
            completion_tokens=self.completion_tokens + other.completion_tokens,
        )

    def to_dict(self) -> Dict[str, int]:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "TokenUsage":
        data = data or {}
        return cls(
            prompt_tokens=int(data.get("prompt_tokens", 0)),
            completion_tokens=int(data.get("completion_tokens", 0)),
        )


@dataclass
class GenerationRecord:
    """One generation call as seen by the cost ledger"""
    model: str
    prompt_digest: str
    output_text: str
    usage: TokenUsage
    finish_reason: FinishReason
    stage: str = ""
    latency_ms: float = 0.0
    cached: bool = False

    def to_dict(self) -> Dict[str, Any]:
        # latency and cache provenance vary between runs, they go to timings.jsonl
        return {
            "model": self.model,
            "stage": self.stage,
            "prompt_digest": self.prompt_digest,
            "output_text": self.output_text,
            "usage": self.usage.to_dict(),
            "finish_reason": self.finish_reason.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GenerationRecord":
        return cls(
            model=data["model"],
            prompt_digest=data["prompt_digest"],
            output_text=data.get("output_text", ""),
            usage=TokenUsage.from_dict(data.get("usage")),
            finish_reason=FinishReason(data.get("finish_reason", "stop")),
            stage=data.get("stage", ""),
        )


@dataclass
class NllScore:
    """Mean answer-span NLL of candidate i under scorer j"""
    scorer_index: int
    candidate_index: int
    mean_nll: float
    token_count: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scorer_index": self.scorer_index,
            "candidate_index": self.candidate_index,
            "mean_nll": self.mean_nll,
            "token_count": self.token_count,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NllScore":
        return cls(
            scorer_index=int(data["scorer_index"]),
            candidate_index=int(data["candidate_index"]),
            mean_nll=float(data["mean_nll"]),
            token_count=int(data["token_count"]),
        )


@dataclass
class CandidateAnswer:
    """Round-one short answer of one pool member"""
    model_index: int
    raw_text: str
    extracted: Optional[str] = None
    model: str = ""
    error: Optional[str] = None

    @property
    def valid(self) -> bool:
        return bool(self.extracted)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model_index": self.model_index,
            "model": self.model,
            "raw_text": self.raw_text,
            "extracted": self.extracted,
            "valid": self.valid,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CandidateAnswer":
        return cls(
            model_index=int(data["model_index"]),
            raw_text=data.get("raw_text", ""),
            extracted=data.get("extracted"),
            model=data.get("model", ""),
            error=data.get("error"),
        )


@dataclass
class ReasoningPath:
    """Chain-of-thought output of one selected expert"""
    expert_index: int
    cot_text: str
    extracted: Optional[str] = None
    usage: TokenUsage = field(default_factory=TokenUsage)
    model: str = ""
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and bool(self.cot_text)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "expert_index": self.expert_index,
            "model": self.model,
            "cot_text": self.cot_text,
            "extracted": self.extracted,
            "usage": self.usage.to_dict(),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ReasoningPath":
        return cls(
            expert_index=int(data["expert_index"]),
            cot_text=data.get("cot_text", ""),
            extracted=data.get("extracted"),
            usage=TokenUsage.from_dict(data.get("usage")),
            model=data.get("model", ""),
            error=data.get("error"),
        )


@dataclass
class ConsensusMatrix:
    """k x k relative consensus scores, cell (j, i) is scorer j on candidate i"""
    k: int
    relative: np.ndarray
    validity_mask: List[bool]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "relative": [[finite_or_none(v) for v in row] for row in self.relative.tolist()],
            "validity_mask": list(self.validity_mask),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConsensusMatrix":
        rows = [[none_to_inf(v) for v in row] for row in data["relative"]]
        k = int(data["k"])
        relative = np.array(rows, dtype=np.float64).reshape(k, k)
        return cls(k=k, relative=relative, validity_mask=[bool(v) for v in data["validity_mask"]])


@dataclass
class SelectionResult:
    """Chosen experts and the scores they were ranked by"""
    strategy: SelectionStrategy
    chosen: List[int]
    global_scores: List[float]
    short: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy.value,
            "chosen": list(self.chosen),
            "global_scores": [finite_or_none(v) for v in self.global_scores],
            "short": self.short,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SelectionResult":
        return cls(
            strategy=SelectionStrategy(data["strategy"]),
            chosen=[int(i) for i in data["chosen"]],
            global_scores=[none_to_inf(v) for v in data["global_scores"]],
            short=bool(data.get("short", False)),
        )


@dataclass
class VerdictResult:
    """Output of the single verdict call"""
    raw_text: str
    extracted: Optional[str]
    usage: TokenUsage = field(default_factory=TokenUsage)

    def to_dict(self) -> Dict[str, Any]:
        return {"raw_text": self.raw_text, "extracted": self.extracted, "usage": self.usage.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "VerdictResult":
        return cls(
            raw_text=data.get("raw_text", ""),
            extracted=data.get("extracted"),
            usage=TokenUsage.from_dict(data.get("usage")),
        )


@dataclass
class SampleOutcome:
    """Full per-sample audit trail"""
    sample_id: str
    benchmark: BenchmarkKind
    gold_answers: List[str]
    question_type: Optional[str] = None
    status: OutcomeStatus = OutcomeStatus.COMPLETED
    error: Optional[str] = None
    candidates: List[CandidateAnswer] = field(default_factory=list)
    scores: List[NllScore] = field(default_factory=list)
    matrix: Optional[ConsensusMatrix] = None
    selection: Optional[SelectionResult] = None
    paths: List[ReasoningPath] = field(default_factory=list)
    majority_answer: Optional[str] = None
    verdict: Optional[VerdictResult] = None
    records: List[GenerationRecord] = field(default_factory=list)
    usage_by_model: Dict[str, TokenUsage] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.status == OutcomeStatus.FAILED

    @property
    def verdict_answer(self) -> Optional[str]:
        return self.verdict.extracted if self.verdict else None

    @property
    def expert_answers(self) -> List[Optional[str]]:
        return [path.extracted for path in self.paths]

    @property
    def expert_indices(self) -> List[int]:
        return [path.expert_index for path in self.paths]

    def add_record(self, record: GenerationRecord):
        """Append a call to the ledger and fold its usage into the per-model totals"""
        self.records.append(record)
        total = self.usage_by_model.get(record.model, TokenUsage())
        self.usage_by_model[record.model] = total + record.usage

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "benchmark": self.benchmark.value,
            "gold_answers": list(self.gold_answers),
            "question_type": self.question_type,
            "status": self.status.value,
            "error": self.error,
            "candidates": [c.to_dict() for c in self.candidates],
            "scores": [s.to_dict() for s in self.scores],
            "matrix": self.matrix.to_dict() if self.matrix else None,
            "selection": self.selection.to_dict() if self.selection else None,
            "paths": [p.to_dict() for p in self.paths],
            "majority_answer": self.majority_answer,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "records": [r.to_dict() for r in self.records],
            "usage_by_model": {name: u.to_dict() for name, u in sorted(self.usage_by_model.items())},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SampleOutcome":
        return cls(
            sample_id=data["sample_id"],
            benchmark=BenchmarkKind(data["benchmark"]),
            gold_answers=list(data.get("gold_answers", [])),
            question_type=data.get("question_type"),
            status=OutcomeStatus(data.get("status", "completed")),
            error=data.get("error"),
            candidates=[CandidateAnswer.from_dict(c) for c in data.get("candidates", [])],
            scores=[NllScore.from_dict(s) for s in data.get("scores", [])],
            matrix=ConsensusMatrix.from_dict(data["matrix"]) if data.get("matrix") else None,
            selection=SelectionResult.from_dict(data["selection"]) if data.get("selection") else None,
            paths=[ReasoningPath.from_dict(p) for p in data.get("paths", [])],
            majority_answer=data.get("majority_answer"),
            verdict=VerdictResult.from_dict(data["verdict"]) if data.get("verdict") else None,
            records=[GenerationRecord.from_dict(r) for r in data.get("records", [])],
            usage_by_model={
                name: TokenUsage.from_dict(u) for name, u in (data.get("usage_by_model") or {}).items()
            },
        )
