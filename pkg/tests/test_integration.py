"""
End-to-end tests: the pipeline and the batch runner replayed against the
mock server.
"""
import json

import pytest

from conftest import (
    FIG3_ID,
    FIG8_ID,
    POOL,
    pool_config,
    synthetic_gold,
    synthetic_manifest,
    synthetic_question,
    synthetic_scenario,
)

from src.core.models import OutcomeStatus, SelectionStrategy
from src.core.pipeline import SpeculativeVerdictPipeline
from src.evaluation.recovery import MINORITY, SPLIT_VERDICT_CORRECT, SPLIT_VERDICT_WRONG, ZERO, recovery_analysis
from src.evaluation.reports import ROW_MAJORITY_M, ROW_VERDICT
from src.harness.runner import load_verdict_alone, run_ablation, run_baseline, run_batch
from src.harness.store import OUTCOMES, STAGES, RunStore
from src.mock.scenario import parse_scenario
from src.mock.server import serve_mock

REQUESTS_PER_SAMPLE = 24


async def run_into(manifest, config, run_dir, **kwargs):
    store = RunStore(run_dir)
    try:
        return await run_batch(manifest, config, store, progress=False, **kwargs)
    finally:
        store.close()


def stage_bytes(run_dir):
    return {stage: (run_dir / f"{stage}.jsonl").read_bytes() for stage in (*STAGES, OUTCOMES)}


def scenario_with(extra_rules, n=1, timeout_seconds=5.0):
    """Synthetic scenario with extra rules taking precedence"""
    rules = synthetic_scenario(n).model_dump(mode="json")["rules"]
    return parse_scenario({"timeout_seconds": timeout_seconds, "rules": [*extra_rules, *rules]})


# Demo run

async def test_demo_run_recovers_minority_and_zero_correct(demo_manifest, demo_config, tmp_path):
    summary = await run_into(demo_manifest, demo_config, tmp_path / "run")

    assert summary.n_failed == 0
    assert summary.metrics.comparison[ROW_VERDICT] == 100.0
    assert summary.metrics.comparison[ROW_MAJORITY_M] == 0.0
    assert summary.recovery.bucket_of(FIG3_ID).bucket == MINORITY
    assert summary.recovery.bucket_of(FIG8_ID).bucket == ZERO
    assert all(sample.recovered for sample in summary.recovery.samples)

    store = RunStore(tmp_path / "run")
    outcomes = {o.sample_id: o for o in store.load_outcomes()}
    fig3 = outcomes[FIG3_ID]
    assert fig3.selection.chosen == [1, 0, 2]
    assert fig3.expert_answers == ["52%", "49%", "52%"]
    assert fig3.verdict_answer == "49%"
    assert fig3.majority_answer == "52%"
    assert outcomes[FIG8_ID].verdict_answer == "Portugal"
    assert (tmp_path / "run" / "reports" / "metrics.json").exists()


async def test_demo_stage_files_follow_manifest_order(demo_manifest, demo_config, tmp_path):
    await run_into(demo_manifest, demo_config, tmp_path / "run")
    for stage in (*STAGES, OUTCOMES):
        lines = (tmp_path / "run" / f"{stage}.jsonl").read_text(encoding="utf-8").splitlines()
        assert [json.loads(line)["sample_id"] for line in lines] == [FIG3_ID, FIG8_ID]


# Resume and determinism

async def test_resume_matches_fresh_run(synthetic_server, tmp_path):
    manifest = synthetic_manifest(tmp_path, 4)
    config = pool_config(synthetic_server.url)

    start = synthetic_server.request_count
    partial = await run_into(manifest, config, tmp_path / "resumed", limit=2)
    assert partial.n_processed == 2
    after_partial = synthetic_server.request_count
    resumed = await run_into(manifest, config, tmp_path / "resumed")
    after_resume = synthetic_server.request_count
    assert resumed.n_processed == 2

    fresh = await run_into(manifest, config, tmp_path / "fresh")
    fresh_cost = synthetic_server.request_count - after_resume

    assert fresh_cost == 4 * REQUESTS_PER_SAMPLE
    assert (after_partial - start) + (after_resume - after_partial) == fresh_cost
    assert resumed.metrics.to_dict() == fresh.metrics.to_dict()
    assert stage_bytes(tmp_path / "resumed") == stage_bytes(tmp_path / "fresh")


async def test_completed_run_is_not_reprocessed(synthetic_server, tmp_path):
    manifest = synthetic_manifest(tmp_path, 2)
    config = pool_config(synthetic_server.url)
    await run_into(manifest, config, tmp_path / "run")
    before = synthetic_server.request_count
    again = await run_into(manifest, config, tmp_path / "run")
    assert again.n_processed == 0
    assert synthetic_server.request_count == before


async def test_identical_runs_write_identical_stage_files(synthetic_server, tmp_path):
    manifest = synthetic_manifest(tmp_path, 3)
    config = pool_config(synthetic_server.url, max_concurrency=2)
    await run_into(manifest, config, tmp_path / "one")
    await run_into(manifest, config, tmp_path / "two")
    assert stage_bytes(tmp_path / "one") == stage_bytes(tmp_path / "two")


async def test_synthetic_costs(synthetic_server, tmp_path):
    manifest = synthetic_manifest(tmp_path, 2)
    summary = await run_into(manifest, pool_config(synthetic_server.url), tmp_path / "run")
    assert summary.metrics.primary_metric == 100.0
    assert summary.costs.verdict_mean_per_sample == pytest.approx(0.0068)


async def test_timings_are_kept_out_of_stage_files(synthetic_server, tmp_path):
    manifest = synthetic_manifest(tmp_path, 1)
    await run_into(manifest, pool_config(synthetic_server.url), tmp_path / "run")
    lines = (tmp_path / "run" / "timings.jsonl").read_text(encoding="utf-8").splitlines()
    entries = [json.loads(line) for line in lines]
    assert len(entries) == REQUESTS_PER_SAMPLE
    assert {entry["model"] for entry in entries} == {*POOL, "verdict"}
    assert not any(entry["cached"] for entry in entries)
    for stage in (*STAGES, OUTCOMES):
        assert "latency_ms" not in (tmp_path / "run" / f"{stage}.jsonl").read_text(encoding="utf-8")


# Pipeline edge cases

async def test_timed_out_expert_is_left_out_of_the_verdict(tmp_path):
    question = synthetic_question(0)
    slow = {"model": "draft-c", "kind": "generate", "contains": [question, "<think>"], "failure_mode": "timeout"}
    manifest = synthetic_manifest(tmp_path, 1)
    with serve_mock(scenario_with([slow], timeout_seconds=1.0), port=0) as server:
        data = pool_config(server.url).model_dump(mode="json")
        data["pool"][2].update(request_timeout=0.3, max_retries=0)
        config = pool_config(server.url, pool=data["pool"])
        async with SpeculativeVerdictPipeline(config) as pipeline:
            outcome = await pipeline.run_sample(manifest.samples[0])

    assert outcome.status == OutcomeStatus.COMPLETED
    assert outcome.selection.chosen == [0, 1, 2]
    assert outcome.paths[2].error is not None
    assert not outcome.paths[2].ok
    assert outcome.verdict_answer == synthetic_gold(0)
    assert len([r for r in outcome.records if r.stage == "draft_reasoning"]) == 2


async def test_single_valid_candidate_skips_scoring(tmp_path):
    question = synthetic_question(0)
    broken = [
        {"model": name, "kind": "generate", "contains": [question, "Answer the question using"],
         "failure_mode": "server_error"}
        for name in POOL[1:]
    ]
    manifest = synthetic_manifest(tmp_path, 1)
    with serve_mock(scenario_with(broken), port=0) as server:
        async with SpeculativeVerdictPipeline(pool_config(server.url)) as pipeline:
            outcome = await pipeline.run_sample(manifest.samples[0])

    assert outcome.status == OutcomeStatus.COMPLETED
    assert outcome.scores == []
    assert outcome.selection.chosen == [0]
    assert outcome.selection.short
    assert [c.valid for c in outcome.candidates] == [True, False, False, False, False]
    assert outcome.candidates[1].error.startswith("EndpointUnavailable")
    assert outcome.verdict_answer == synthetic_gold(0)


async def test_all_drafts_failing_fails_the_sample(tmp_path):
    broken = [{"model": name, "kind": "generate", "failure_mode": "server_error"} for name in POOL]
    manifest = synthetic_manifest(tmp_path, 1)
    with serve_mock(scenario_with(broken), port=0) as server:
        async with SpeculativeVerdictPipeline(pool_config(server.url)) as pipeline:
            outcome = await pipeline.run_sample(manifest.samples[0])
    assert outcome.failed
    assert outcome.error.startswith("AllDraftsFailed")
    assert outcome.verdict is None


async def test_single_member_pool(tmp_path):
    manifest = synthetic_manifest(tmp_path, 1)
    with serve_mock(synthetic_scenario(1), port=0) as server:
        member = {"name": "draft-a", "base_url": server.url, "supports_scoring": "none", "retry_backoff": 0}
        config = pool_config(server.url, pool=[member], m=1)
        async with SpeculativeVerdictPipeline(config) as pipeline:
            outcome = await pipeline.run_sample(manifest.samples[0])
        assert server.request_count == 3
    assert outcome.selection.chosen == [0]
    assert not outcome.selection.short
    assert outcome.verdict_answer == synthetic_gold(0)


async def test_economy_mode_reuses_round_one_output(tmp_path):
    manifest = synthetic_manifest(tmp_path, 1)
    with serve_mock(synthetic_scenario(1), port=0) as server:
        async with SpeculativeVerdictPipeline(pool_config(server.url, economy_mode=True)) as pipeline:
            outcome = await pipeline.run_sample(manifest.samples[0])
        # five reasoning drafts, fifteen scores, one verdict
        assert server.request_count == 21
    assert not [r for r in outcome.records if r.stage == "draft_reasoning"]
    assert outcome.paths[0].cot_text.startswith("<think>")
    assert outcome.verdict_answer == synthetic_gold(0)


# Ablation and baseline

async def test_ablation_sweep(synthetic_server, tmp_path):
    manifest = synthetic_manifest(tmp_path, 20)
    report = await run_ablation(manifest, pool_config(synthetic_server.url), tmp_path / "ablation", progress=False)

    sweep = report.rows_of("m_sweep")
    assert [row.m for row in sweep] == [1, 2, 3, 4, 5]
    strategies = {row.strategy: row for row in report.rows_of("strategy")}
    assert set(strategies) == {s.value for s in SelectionStrategy}
    assert all(row.verdict == 100.0 for row in report.rows)
    assert strategies["divergent"].majority_m <= strategies["cross_all"].majority_m
    # divergent experts 3, 4 and 0 answer three different labels; the tie goes to model 0, which is right
    assert strategies["divergent"].majority_m == 100.0
    assert strategies["cross_all"].variant == sweep[2].variant
    assert (tmp_path / "ablation" / "ablation.json").exists()


async def test_baseline_feeds_the_verdict_split(synthetic_server, tmp_path):
    manifest = synthetic_manifest(tmp_path, 4)
    config = pool_config(synthetic_server.url)
    results = await run_baseline(manifest, config, tmp_path / "baseline", progress=False)
    assert [r.correct for r in results] == [True, False, True, False]

    verdict_alone = load_verdict_alone(tmp_path / "baseline")
    assert verdict_alone == {"s000": True, "s001": False, "s002": True, "s003": False}

    summary = await run_into(manifest, config, tmp_path / "run", verdict_alone=verdict_alone)
    assert summary.recovery.bucket_of("s001").split == SPLIT_VERDICT_WRONG
    report = recovery_analysis(RunStore(tmp_path / "run").load_outcomes(), manifest.benchmark, verdict_alone, config)
    assert report.cell(SPLIT_VERDICT_CORRECT, "majority_correct").count == 2
