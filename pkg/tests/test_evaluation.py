"""
Metric, run report, recovery and cost tests.
"""
import functools
import random
from typing import List, Optional

import pytest

from conftest import pool_config

from src.core.exceptions import EmptyRun
from src.core.models import (
    BenchmarkKind,
    CandidateAnswer,
    FinishReason,
    GenerationRecord,
    MetricKind,
    OutcomeStatus,
    ReasoningPath,
    SampleOutcome,
    TokenUsage,
    VerdictResult,
)
from src.evaluation.costs import format_costs, report_costs
from src.evaluation.metrics import (
    AnswerScorer,
    anls,
    letter_match,
    levenshtein,
    metric_for,
    relaxed_accuracy,
    similarity,
)
from src.evaluation.recovery import (
    MAJORITY,
    MINORITY,
    SPLIT_ALL,
    SPLIT_UNKNOWN,
    SPLIT_VERDICT_CORRECT,
    SPLIT_VERDICT_WRONG,
    ZERO,
    bucket_for,
    format_recovery,
    recovery_analysis,
)
from src.evaluation.reports import (
    ROW_BEST_SINGLE,
    ROW_MAJORITY_K,
    ROW_MAJORITY_M,
    ROW_VERDICT,
    format_metrics,
    render_table,
    score_run,
)

POOL = ["draft-a", "draft-b", "draft-c", "draft-d", "draft-e"]


def make_outcome(
    sample_id: str,
    gold: str,
    candidates: List[Optional[str]],
    experts: List[Optional[str]],
    verdict: Optional[str],
    majority: Optional[str] = None,
    benchmark: BenchmarkKind = BenchmarkKind.CHARTQAPRO,
) -> SampleOutcome:
    outcome = SampleOutcome(sample_id=sample_id, benchmark=benchmark, gold_answers=[gold])
    outcome.candidates = [
        CandidateAnswer(i, f"\\boxed{{{a}}}" if a else "", a, POOL[i]) for i, a in enumerate(candidates)
    ]
    outcome.paths = [ReasoningPath(i, f"<answer>{a}</answer>", a, model=POOL[i]) for i, a in enumerate(experts)]
    outcome.majority_answer = majority
    outcome.verdict = VerdictResult(f"\\boxed{{{verdict}}}", verdict) if verdict else None
    return outcome


@pytest.fixture
def chart_outcomes():
    return [
        make_outcome("s1", "49%", ["49%", "52%", "49%", "45%", "30%"], ["49%", "52%", "52%"], "49%", "52%"),
        make_outcome("s2", "Portugal", ["Australia", "Spain", "Australia", "Italy", "Greece"],
                     ["Australia", "Spain", "Australia"], "Portugal", "australia"),
    ]


# Levenshtein and ANLS

@functools.lru_cache(maxsize=None)
def recursive_distance(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        recursive_distance(a[1:], b) + 1,
        recursive_distance(a, b[1:]) + 1,
        recursive_distance(a[1:], b[1:]) + (a[0] != b[0]),
    )


def random_word(rng: random.Random, alphabet: str = "abc%") -> str:
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 8)))


def test_levenshtein_matches_recursive_definition():
    rng = random.Random(11)
    for _ in range(10000):
        a, b = random_word(rng), random_word(rng)
        assert levenshtein(a, b) == recursive_distance(a, b)
        recursive_distance.cache_clear()


def test_levenshtein_is_a_metric():
    rng = random.Random(12)
    for _ in range(2000):
        a, b, c = (random_word(rng, "ab") for _ in range(3))
        assert (levenshtein(a, b) == 0) == (a == b)
        assert levenshtein(a, b) == levenshtein(b, a)
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_similarity_is_symmetric_and_exact_on_self():
    rng = random.Random(13)
    for _ in range(2000):
        a, b = random_word(rng, "aB %"), random_word(rng, "aB %")
        assert similarity(a, b) == similarity(b, a)
        assert 0.0 <= similarity(a, b) <= 1.0
        assert anls(a, [a]) == 1.0


def test_anls_examples():
    assert anls("49", ["49%"]) == pytest.approx(2 / 3)
    assert anls("picnic", ["nfl"]) == 0.0
    assert anls("Portugal", ["portugal"]) == 1.0
    assert anls(None, ["x"]) == 0.0


def test_anls_takes_best_gold():
    assert anls("spain", ["italy", "Spain"]) == 1.0


def test_anls_threshold_is_inclusive():
    assert anls("ab", ["ac"]) == pytest.approx(0.5)
    assert anls("abc", ["axy"]) == 0.0
    scorer = AnswerScorer(MetricKind.ANLS)
    assert scorer.correct("ab", ["ac"])


# Relaxed, exact and letter metrics

@pytest.mark.parametrize("pred, gold, expected", [
    ("51", "49%", True),
    ("52%", "49%", False),
    ("1,000", "1000", True),
    ("0", "0", True),
    ("0.1", "0", False),
    ("Portugal", "portugal", True),
    ("", "1", False),
])
def test_relaxed_accuracy(pred, gold, expected):
    assert relaxed_accuracy(pred, gold) is expected


@pytest.mark.parametrize("pred, gold, expected", [
    ("(c)", "C", True),
    ("C.", "c", True),
    ("The answer is B", "B", True),
    ("B", "C", False),
    (None, "A", False),
])
def test_letter_match(pred, gold, expected):
    assert letter_match(pred, gold) is expected


def test_metric_per_benchmark():
    assert metric_for(BenchmarkKind.INFOGRAPHIC_VQA) == MetricKind.ANLS
    assert metric_for(BenchmarkKind.CHARTMUSEUM) == MetricKind.RELAXED
    assert metric_for(BenchmarkKind.HRBENCH) == MetricKind.LETTER
    strict = pool_config("http://mock", strict_accuracy=True, custom_metric="anls")
    assert metric_for(BenchmarkKind.CHARTQAPRO, strict) == MetricKind.EXACT
    assert metric_for(BenchmarkKind.CUSTOM, strict) == MetricKind.ANLS


# Run reports

def test_score_run_rows(chart_outcomes):
    report = score_run(chart_outcomes, BenchmarkKind.CHARTQAPRO)
    assert report.metric == MetricKind.RELAXED
    assert report.primary_metric == 100.0
    assert report.comparison[ROW_VERDICT] == 100.0
    assert report.comparison[ROW_MAJORITY_M] == 0.0
    assert report.comparison[ROW_MAJORITY_K] == 50.0
    assert report.comparison[ROW_BEST_SINGLE] == 50.0
    assert report.per_model["draft-a"] == 50.0 and report.per_model["draft-b"] == 0.0
    assert [s.sample_id for s in report.per_sample] == ["s1", "s2"]


@pytest.mark.parametrize("benchmark", [BenchmarkKind.INFOGRAPHIC_VQA, BenchmarkKind.CHARTQAPRO])
def test_unanimous_experts_score_like_any_member(benchmark):
    rng = random.Random(17)
    outcomes = []
    for index in range(40):
        gold = rng.choice(["portugal", "49%", "12", "north america"])
        answer = rng.choice([gold, gold.upper(), "portuga", "51%", "13", "spain"])
        outcomes.append(make_outcome(f"u{index:02d}", gold, [answer] * 5, [answer] * 3, answer, answer,
                                     benchmark=benchmark))
    report = score_run(outcomes, benchmark)
    for name in POOL:
        assert report.comparison[ROW_MAJORITY_M] == pytest.approx(report.per_model[name])
        assert report.comparison[ROW_MAJORITY_K] == pytest.approx(report.per_model[name])
    for sample in report.per_sample:
        assert sample.majority_m == sample.majority_k == sample.per_model["draft-a"]


def test_failed_sample_scores_zero(chart_outcomes):
    failed = make_outcome("s3", "7", [None] * 5, [], None)
    failed.status = OutcomeStatus.FAILED
    report = score_run([*chart_outcomes, failed], BenchmarkKind.CHARTQAPRO)
    assert report.n_failed == 1
    assert report.primary_metric == pytest.approx(200 / 3)


def test_score_run_rejects_empty_and_mixed(chart_outcomes):
    with pytest.raises(EmptyRun):
        score_run([], BenchmarkKind.CHARTQAPRO)
    other = make_outcome("x", "A", ["A"], ["A"], "A", benchmark=BenchmarkKind.HRBENCH)
    with pytest.raises(ValueError):
        score_run([*chart_outcomes, other], BenchmarkKind.CHARTQAPRO)


def test_metrics_text_report(chart_outcomes):
    text = format_metrics(score_run(chart_outcomes, BenchmarkKind.CHARTQAPRO))
    assert text.startswith("ChartQAPro (relaxed), 2 samples, 0 failed")
    assert "majority_vote_m" in text and "model:draft-e" in text


def test_render_table_alignment():
    table = render_table(["row", "score"], [["verdict", 100.0], ["majority", 5.0]])
    lines = table.splitlines()
    assert lines[0] == "row" + " " * 8 + "score"
    assert lines[2] == "verdict" + " " * 3 + "100.00"
    assert lines[3] == "majority" + " " * 4 + "5.00"


# Recovery

@pytest.mark.parametrize("correct, m, bucket", [
    (2, 3, MAJORITY), (1, 3, MINORITY), (0, 3, ZERO), (1, 2, MINORITY), (2, 2, MAJORITY), (1, 1, MAJORITY),
])
def test_bucket_for(correct, m, bucket):
    assert bucket_for(correct, m) == bucket


def test_recovery_buckets(chart_outcomes):
    report = recovery_analysis(chart_outcomes, BenchmarkKind.CHARTQAPRO)
    assert report.bucket_of("s1").bucket == MINORITY
    assert report.bucket_of("s2").bucket == ZERO
    assert report.cell(SPLIT_ALL, MINORITY).rate == 1.0
    assert report.cell(SPLIT_ALL, ZERO).recovered == 1
    assert report.cell(SPLIT_ALL, MAJORITY).count == 0
    assert sum(stats.count for stats in report.cells[SPLIT_ALL].values()) == report.n_samples


def test_recovery_split_by_bare_verdict(chart_outcomes):
    report = recovery_analysis(chart_outcomes, BenchmarkKind.CHARTQAPRO, verdict_alone={"s1": False})
    assert report.bucket_of("s1").split == SPLIT_VERDICT_WRONG
    assert report.bucket_of("s2").split == SPLIT_UNKNOWN
    assert report.cell(SPLIT_VERDICT_WRONG, MINORITY).recovered == 1
    assert report.cell(SPLIT_VERDICT_CORRECT, ZERO).count == 0
    assert "verdict_unknown" in format_recovery(report)


# Costs

def record(model: str, usage: TokenUsage, stage: str) -> GenerationRecord:
    return GenerationRecord(model, "digest", "text", usage, FinishReason.STOP, stage)


def test_cost_ledger():
    config = pool_config("http://mock")
    first = make_outcome("s1", "1", ["1"] * 5, ["1"], "1")
    first.add_record(record("verdict", TokenUsage(2000, 50), "verdict"))
    first.add_record(record("draft-a", TokenUsage(1000, 100), "draft_answer"))
    second = make_outcome("s2", "1", ["1"] * 5, ["1"], "1")
    second.add_record(record("verdict", TokenUsage(2400, 80), "verdict"))
    second.add_record(record("mystery", TokenUsage(10, 10), "draft_answer"))

    report = report_costs([first, second], config)
    assert report.per_model["verdict"] == pytest.approx(0.0123)
    assert report.per_model["draft-a"] == 0.0
    assert report.per_model["mystery"] == 0.0
    assert report.verdict_mean_per_sample == pytest.approx(0.00615)
    assert report.total == pytest.approx(0.0123)
    assert report.usage["verdict"] == TokenUsage(4400, 130)
    assert "total $0.012300" in format_costs(report)


def test_cost_ledger_without_config_is_free():
    outcome = make_outcome("s1", "1", ["1"], ["1"], "1")
    outcome.add_record(record("verdict", TokenUsage(2000, 50), "verdict"))
    assert report_costs([outcome], None).total == 0.0
