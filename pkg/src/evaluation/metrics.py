"""
Speculative Verdict Harness - Benchmark Metrics

Per-sample scoring functions and the mapping from benchmark family to
metric. Every function here is pure and safe to call concurrently.
"""

import re
from dataclasses import dataclass
from typing import Optional, Sequence

from Levenshtein import distance

from ..core.answers import extract_letter, normalize_answer
from ..core.config import RunConfig
from ..core.models import BenchmarkKind, MetricKind

ANLS_THRESHOLD = 0.5
RELAXED_TOLERANCE = 0.05

_NUMERIC_STRIP = re.compile(r"[%,$€£¥\s]")
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_WRAPPED_LETTER = re.compile(r"[\(\[]?\s*([A-Za-z])\s*[\)\]]?\.?")


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance"""
    return distance(a, b)


def similarity(pred: str, gold: str) -> float:
    """Normalized Levenshtein similarity on normalized strings"""
    p = normalize_answer(pred) if pred else ""
    g = normalize_answer(gold) if gold else ""
    longest = max(len(p), len(g))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(p, g) / longest


def anls(pred: Optional[str], golds: Sequence[str], threshold: float = ANLS_THRESHOLD) -> float:
    """Max-over-golds similarity, zeroed below the threshold"""
    best = 0.0
    for gold in golds:
        sim = similarity(pred or "", gold)
        if sim >= threshold:
            best = max(best, sim)
    return best


def parse_number(text: str) -> Optional[float]:
    cleaned = _NUMERIC_STRIP.sub("", text)
    if not _NUMBER.fullmatch(cleaned):
        return None
    return float(cleaned)


def relaxed_accuracy(pred: Optional[str], gold: str, rel_tol: float = RELAXED_TOLERANCE) -> bool:
    """Numeric answers within rel_tol of the gold, everything else by normalized equality"""
    if not pred:
        return False
    p, g = parse_number(pred), parse_number(gold)
    if p is not None and g is not None:
        if g == 0:
            return p == g
        return abs(p - g) <= rel_tol * abs(g)
    return normalize_answer(pred) == normalize_answer(gold)


def exact_match(pred: Optional[str], gold: str) -> bool:
    if not pred:
        return False
    return normalize_answer(pred) == normalize_answer(gold)


def option_letter(text: str) -> Optional[str]:
    match = _WRAPPED_LETTER.fullmatch(text.strip())
    if match:
        return match.group(1).upper()
    return extract_letter(text)


def letter_match(pred: Optional[str], gold: str) -> bool:
    """Case-insensitive comparison of option letters"""
    if not pred:
        return False
    p, g = option_letter(pred), option_letter(gold)
    return p is not None and p == g


def metric_for(benchmark: BenchmarkKind, config: Optional[RunConfig] = None) -> MetricKind:
    if benchmark == BenchmarkKind.INFOGRAPHIC_VQA:
        return MetricKind.ANLS
    if benchmark in (BenchmarkKind.CHARTMUSEUM, BenchmarkKind.CHARTQAPRO):
        strict = config is not None and config.strict_accuracy
        return MetricKind.EXACT if strict else MetricKind.RELAXED
    if benchmark == BenchmarkKind.HRBENCH:
        return MetricKind.LETTER
    return config.custom_metric if config is not None else MetricKind.EXACT


@dataclass
class AnswerScorer:
    """Scores answers of one benchmark"""
    metric: MetricKind
    anls_threshold: float = ANLS_THRESHOLD
    relaxed_tolerance: float = RELAXED_TOLERANCE

    @classmethod
    def for_benchmark(cls, benchmark: BenchmarkKind, config: Optional[RunConfig] = None) -> "AnswerScorer":
        if config is None:
            return cls(metric_for(benchmark))
        return cls(metric_for(benchmark, config), config.anls_threshold, config.relaxed_tolerance)

    def score(self, pred: Optional[str], golds: Sequence[str]) -> float:
        """Per-sample score in [0, 1]"""
        if self.metric == MetricKind.ANLS:
            return anls(pred, golds, self.anls_threshold)
        if self.metric == MetricKind.RELAXED:
            hit = any(relaxed_accuracy(pred, gold, self.relaxed_tolerance) for gold in golds)
        elif self.metric == MetricKind.LETTER:
            hit = any(letter_match(pred, gold) for gold in golds)
        else:
            hit = any(exact_match(pred, gold) for gold in golds)
        return 1.0 if hit else 0.0

    def correct(self, pred: Optional[str], golds: Sequence[str]) -> bool:
        """ANLS counts as correct at or above the threshold"""
        value = self.score(pred, golds)
        if self.metric == MetricKind.ANLS:
            return value >= self.anls_threshold
        return value == 1.0
