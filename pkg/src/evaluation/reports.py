"""
Speculative Verdict Harness - Run Metrics

Aggregates per-sample outcomes into the benchmark metric for the verdict
and for the comparison rows (majority over the selected experts, majority
over the whole pool, and each pool member on its own).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from ..consensus.scoring import majority_vote
from ..core.config import RunConfig
from ..core.exceptions import EmptyRun, NoValidCandidates
from ..core.models import BenchmarkKind, MetricKind, SampleOutcome
from .metrics import AnswerScorer

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

ROW_VERDICT = "verdict"
ROW_MAJORITY_M = "majority_vote_m"
ROW_MAJORITY_K = "majority_vote_k"
ROW_BEST_SINGLE = "best_single_expert"


@dataclass
class SampleScore:
    """Scores of one sample under every comparison row"""
    sample_id: str
    verdict: float
    majority_m: float
    majority_k: float
    per_model: Dict[str, float] = field(default_factory=dict)
    failed: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "verdict": self.verdict,
            "majority_m": self.majority_m,
            "majority_k": self.majority_k,
            "per_model": dict(self.per_model),
            "failed": self.failed,
        }


@dataclass
class MetricsReport:
    """Benchmark metric of a run plus comparison rows, all in [0, 100]"""
    benchmark: BenchmarkKind
    metric: MetricKind
    n_samples: int
    primary_metric: float
    per_sample: List[SampleScore]
    comparison: Dict[str, float]
    per_model: Dict[str, float]
    n_failed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "benchmark": self.benchmark.value,
            "metric": self.metric.value,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "primary_metric": self.primary_metric,
            "comparison": dict(self.comparison),
            "per_model": dict(self.per_model),
            "per_sample": [s.to_dict() for s in self.per_sample],
        }


def _mean_percent(values: Sequence[float]) -> float:
    return sum(values) / len(values) * 100 if values else 0.0


def _safe_majority(answers: Sequence[Optional[str]], model_indices: Sequence[int]) -> Optional[str]:
    try:
        return majority_vote(answers, model_indices)
    except NoValidCandidates:
        return None


def score_run(
    outcomes: Sequence[SampleOutcome],
    benchmark: BenchmarkKind,
    config: Optional[RunConfig] = None,
) -> MetricsReport:
    """Apply the benchmark metric to verdict, majority and per-model answers"""
    if not outcomes:
        raise EmptyRun("no outcomes to score")
    mismatched = {o.benchmark for o in outcomes} - {benchmark}
    if mismatched:
        raise ValueError(f"outcomes mix benchmarks: {sorted(b.value for b in mismatched)}")

    scorer = AnswerScorer.for_benchmark(benchmark, config)
    per_sample: List[SampleScore] = []
    model_names: List[str] = []

    for outcome in sorted(outcomes, key=lambda o: o.sample_id):
        golds = outcome.gold_answers
        candidate_answers = [c.extracted for c in outcome.candidates]
        candidate_indices = [c.model_index for c in outcome.candidates]
        per_model = {}
        for candidate in outcome.candidates:
            name = candidate.model or f"model_{candidate.model_index}"
            if name not in model_names:
                model_names.append(name)
            per_model[name] = scorer.score(candidate.extracted, golds)

        per_sample.append(SampleScore(
            sample_id=outcome.sample_id,
            verdict=scorer.score(outcome.verdict_answer, golds),
            majority_m=scorer.score(outcome.majority_answer, golds),
            majority_k=scorer.score(_safe_majority(candidate_answers, candidate_indices), golds),
            per_model=per_model,
            failed=outcome.failed,
        ))

    per_model_metric = {
        name: _mean_percent([s.per_model.get(name, 0.0) for s in per_sample]) for name in model_names
    }
    comparison = {
        ROW_VERDICT: _mean_percent([s.verdict for s in per_sample]),
        ROW_MAJORITY_M: _mean_percent([s.majority_m for s in per_sample]),
        ROW_MAJORITY_K: _mean_percent([s.majority_k for s in per_sample]),
        ROW_BEST_SINGLE: max(per_model_metric.values(), default=0.0),
    }
    n_failed = sum(1 for s in per_sample if s.failed)
    if n_failed:
        logger.warning(f"{n_failed} of {len(per_sample)} samples failed and score 0")

    return MetricsReport(
        benchmark=benchmark,
        metric=scorer.metric,
        n_samples=len(per_sample),
        primary_metric=comparison[ROW_VERDICT],
        per_sample=per_sample,
        comparison=comparison,
        per_model=per_model_metric,
        n_failed=n_failed,
    )


def render_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Plain-text table with aligned columns; numbers are right-aligned"""
    cells = [[str(h) for h in headers]]
    for row in rows:
        cells.append([f"{v:.2f}" if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    numeric = [all(isinstance(row[i], (int, float)) for row in rows) and bool(rows) for i in range(len(headers))]

    def _line(values: Sequence[str]) -> str:
        parts = [v.rjust(w) if numeric[i] else v.ljust(w) for i, (v, w) in enumerate(zip(values, widths))]
        return "  ".join(parts).rstrip()

    lines = [_line(cells[0]), "  ".join("-" * w for w in widths)]
    lines.extend(_line(r) for r in cells[1:])
    return "\n".join(lines)


def format_metrics(report: MetricsReport) -> str:
    title = (f"{report.benchmark.value} ({report.metric.value}), "
             f"{report.n_samples} samples, {report.n_failed} failed")
    rows = [[name, value] for name, value in report.comparison.items()]
    rows.extend([f"model:{name}", value] for name, value in report.per_model.items())
    return f"{title}\n{render_table(['row', 'score'], rows)}"
