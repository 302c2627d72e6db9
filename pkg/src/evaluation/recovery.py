"""
Recovery analysis: how often the verdict is right, grouped by how many of
the selected experts were right and, when a bare-verdict run is supplied,
by whether the verdict model alone was right.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

from ..core.config import RunConfig
from ..core.models import BenchmarkKind, SampleOutcome
from .metrics import AnswerScorer
from .reports import SCHEMA_VERSION, render_table

logger = logging.getLogger(__name__)

MAJORITY = "majority_correct"
MINORITY = "minority_correct"
ZERO = "zero_correct"
BUCKETS = (MAJORITY, MINORITY, ZERO)

SPLIT_ALL = "all"
SPLIT_VERDICT_CORRECT = "verdict_correct"
SPLIT_VERDICT_WRONG = "verdict_wrong"
SPLIT_UNKNOWN = "verdict_unknown"


def bucket_for(correct_count: int, m: int) -> str:
    if correct_count > m / 2:
        return MAJORITY
    if correct_count >= 1:
        return MINORITY
    return ZERO


@dataclass
class BucketStats:
    count: int = 0
    recovered: int = 0

    @property
    def rate(self) -> float:
        return self.recovered / self.count if self.count else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"count": self.count, "recovered": self.recovered, "rate": self.rate}


@dataclass
class SampleRecovery:
    sample_id: str
    split: str
    bucket: str
    correct_count: int
    m: int
    recovered: bool


@dataclass
class RecoveryReport:
    """Bucket counts and verdict recovery rates, keyed split -> bucket"""
    benchmark: BenchmarkKind
    n_samples: int
    cells: Dict[str, Dict[str, BucketStats]]
    samples: List[SampleRecovery] = field(default_factory=list)

    def cell(self, split: str, bucket: str) -> BucketStats:
        return self.cells.get(split, {}).get(bucket, BucketStats())

    def bucket_of(self, sample_id: str) -> Optional[SampleRecovery]:
        for sample in self.samples:
            if sample.sample_id == sample_id:
                return sample
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "benchmark": self.benchmark.value,
            "n_samples": self.n_samples,
            "cells": {
                split: {bucket: stats.to_dict() for bucket, stats in buckets.items()}
                for split, buckets in self.cells.items()
            },
            "samples": [
                {
                    "sample_id": s.sample_id,
                    "split": s.split,
                    "bucket": s.bucket,
                    "correct_count": s.correct_count,
                    "m": s.m,
                    "recovered": s.recovered,
                }
                for s in self.samples
            ],
        }


def recovery_analysis(
    outcomes: Sequence[SampleOutcome],
    benchmark: BenchmarkKind,
    verdict_alone: Optional[Mapping[str, bool]] = None,
    config: Optional[RunConfig] = None,
) -> RecoveryReport:
    """Assign every sample to one (split, bucket) cell"""
    scorer = AnswerScorer.for_benchmark(benchmark, config)
    default_m = config.m if config is not None else 3
    splits = [SPLIT_ALL] if verdict_alone is None else [SPLIT_VERDICT_CORRECT, SPLIT_VERDICT_WRONG]
    cells: Dict[str, Dict[str, BucketStats]] = {s: {b: BucketStats() for b in BUCKETS} for s in splits}
    samples: List[SampleRecovery] = []

    for outcome in sorted(outcomes, key=lambda o: o.sample_id):
        m = len(outcome.paths) or default_m
        correct_count = sum(1 for answer in outcome.expert_answers if scorer.correct(answer, outcome.gold_answers))
        recovered = scorer.correct(outcome.verdict_answer, outcome.gold_answers)

        if verdict_alone is None:
            split = SPLIT_ALL
        elif outcome.sample_id in verdict_alone:
            split = SPLIT_VERDICT_CORRECT if verdict_alone[outcome.sample_id] else SPLIT_VERDICT_WRONG
        else:
            logger.warning(f"No bare-verdict result for sample {outcome.sample_id}")
            split = SPLIT_UNKNOWN
            cells.setdefault(split, {b: BucketStats() for b in BUCKETS})

        bucket = bucket_for(correct_count, m)
        stats = cells[split][bucket]
        stats.count += 1
        stats.recovered += int(recovered)
        samples.append(SampleRecovery(outcome.sample_id, split, bucket, correct_count, m, recovered))

    return RecoveryReport(benchmark=benchmark, n_samples=len(samples), cells=cells, samples=samples)


def format_recovery(report: RecoveryReport) -> str:
    rows = []
    for split, buckets in report.cells.items():
        for bucket in BUCKETS:
            stats = buckets[bucket]
            rows.append([split, bucket, stats.count, stats.recovered, stats.rate * 100])
    title = f"Recovery ({report.benchmark.value}), {report.n_samples} samples"
    return f"{title}\n{render_table(['split', 'bucket', 'count', 'recovered', 'rate'], rows)}"
