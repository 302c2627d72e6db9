"""
Speculative Verdict Harness - Batch Runner

Runs a manifest through the pipeline under a worker budget, persists every
stage as it completes and summarizes the run into metrics, recovery and
cost reports. Also hosts the ablation sweep and the bare-verdict baseline.
"""

import asyncio
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from tqdm import tqdm

from ..core.config import RunConfig, apply_overrides
from ..core.exceptions import EmptyRun, SpeculativeVerdictError
from ..core.models import SampleOutcome, SelectionStrategy, VerdictInput, VerdictVisual
from ..core.pipeline import ConnectorFactory, SpeculativeVerdictPipeline
from ..evaluation.costs import CostReport, format_costs, report_costs
from ..evaluation.metrics import AnswerScorer
from ..evaluation.recovery import RecoveryReport, format_recovery, recovery_analysis
from ..evaluation.reports import (
    ROW_MAJORITY_M,
    SCHEMA_VERSION,
    MetricsReport,
    format_metrics,
    render_table,
    score_run,
)
from .manifest import Manifest
from .store import RunStore, dump_line

logger = logging.getLogger(__name__)

BASELINE_FILE = "baseline.jsonl"
ABLATION_FILE = "ablation"
MAX_SWEEP_M = 5


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunSummary:
    """Metrics, recovery and cost reports of one run"""
    metrics: MetricsReport
    recovery: RecoveryReport
    costs: CostReport
    n_samples: int
    n_failed: int
    n_processed: int = 0
    run_dir: Optional[Path] = None

    @property
    def exit_code(self) -> int:
        return 1 if self.n_failed else 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "n_processed": self.n_processed,
            "metrics": self.metrics.to_dict(),
            "recovery": self.recovery.to_dict(),
            "costs": self.costs.to_dict(),
        }

    def format(self) -> str:
        return "\n\n".join([format_metrics(self.metrics), format_recovery(self.recovery), format_costs(self.costs)])


def summarize(
    outcomes: Sequence[SampleOutcome],
    manifest_benchmark,
    config: Optional[RunConfig],
    verdict_alone: Optional[Mapping[str, bool]] = None,
) -> RunSummary:
    """Score stored outcomes"""
    if not outcomes:
        raise EmptyRun("no outcomes to summarize")
    metrics = score_run(outcomes, manifest_benchmark, config)
    return RunSummary(
        metrics=metrics,
        recovery=recovery_analysis(outcomes, manifest_benchmark, verdict_alone, config),
        costs=report_costs(outcomes, config),
        n_samples=len(outcomes),
        n_failed=metrics.n_failed,
    )


def write_summary(store: RunStore, summary: RunSummary):
    store.write_report("metrics", summary.metrics.to_dict(), format_metrics(summary.metrics))
    store.write_report("recovery", summary.recovery.to_dict(), format_recovery(summary.recovery))
    store.write_report("costs", summary.costs.to_dict(), format_costs(summary.costs))


async def run_batch(
    manifest: Manifest,
    config: RunConfig,
    store: RunStore,
    *,
    limit: Optional[int] = None,
    progress: bool = True,
    verdict_alone: Optional[Mapping[str, bool]] = None,
    connector_factory: Optional[ConnectorFactory] = None,
) -> RunSummary:
    """Process every sample not yet completed in the store and summarize the run"""
    if len(manifest) == 0:
        raise EmptyRun(f"manifest {manifest.path} has no samples")

    samples = manifest.samples[:limit] if limit else manifest.samples
    store.prepare()
    completed = store.completed_ids()
    todo = [sample for sample in samples if sample.id not in completed]
    if completed:
        logger.info(f"Resuming: {len(samples) - len(todo)} samples already complete, {len(todo)} to go")

    store.update_metadata(
        started_at=_now(),
        manifest=str(manifest.path) if manifest.path else None,
        benchmark=manifest.benchmark.value,
        config=config.model_dump(mode="json"),
    )

    pipeline = SpeculativeVerdictPipeline(
        config,
        cache=store.open_cache(),
        sink=store,
        timing_sink=store.record_timing,
        connector_factory=connector_factory,
    )
    budget = asyncio.Semaphore(config.max_concurrency)

    async with pipeline:
        with tqdm(total=len(todo), desc="samples", unit="sample", disable=not progress) as bar:
            async def _process(sample):
                async with budget:
                    outcome = await pipeline.run_sample(sample)
                await store.write_outcome(outcome)
                bar.update(1)

            await asyncio.gather(*(_process(sample) for sample in todo))

    store.flush_timings()
    order = [sample.id for sample in samples]
    store.finalize(manifest.ids)
    outcomes = store.load_outcomes(order)

    summary = summarize(outcomes, manifest.benchmark, config, verdict_alone)
    summary.n_processed = len(todo)
    summary.run_dir = store.run_dir
    write_summary(store, summary)
    store.update_metadata(finished_at=_now(), n_samples=summary.n_samples, n_failed=summary.n_failed)
    logger.info(f"Run finished: {manifest.benchmark.value} verdict {summary.metrics.primary_metric:.2f}, "
                f"{summary.n_failed} failed, {len(todo)} processed")
    return summary


# Bare-verdict baseline

@dataclass
class BaselineResult:
    sample_id: str
    model: str
    answer: Optional[str]
    correct: bool

    def to_dict(self) -> Dict[str, Any]:
        return {"sample_id": self.sample_id, "model": self.model, "answer": self.answer, "correct": self.correct}


async def run_baseline(
    manifest: Manifest,
    config: RunConfig,
    out_dir: Union[str, Path],
    *,
    model: Optional[str] = None,
    limit: Optional[int] = None,
    progress: bool = True,
    cache_dir: Optional[Union[str, Path]] = None,
    connector_factory: Optional[ConnectorFactory] = None,
) -> List[BaselineResult]:
    """Answer every sample with one model alone and record its correctness"""
    if len(manifest) == 0:
        raise EmptyRun(f"manifest {manifest.path} has no samples")
    if model is not None and model != config.verdict.name:
        spec = next((s for s in config.pool if s.name == model), None)
        if spec is None:
            raise ValueError(f"baseline model '{model}' is neither the verdict nor a pool member")
        config = config.model_copy(update={"verdict": spec})

    store = RunStore(out_dir, cache_dir=cache_dir)
    store.prepare()
    scorer = AnswerScorer.for_benchmark(manifest.benchmark, config)
    samples = manifest.samples[:limit] if limit else manifest.samples
    pipeline = SpeculativeVerdictPipeline(
        config, cache=store.open_cache(), timing_sink=store.record_timing, connector_factory=connector_factory
    )
    budget = asyncio.Semaphore(config.max_concurrency)

    async with pipeline:
        with tqdm(total=len(samples), desc="baseline", unit="sample", disable=not progress) as bar:
            async def _answer(sample) -> BaselineResult:
                async with budget:
                    try:
                        answer, _ = await pipeline.baseline_answer(sample)
                    except SpeculativeVerdictError as e:
                        logger.error(f"Baseline failed on sample {sample.id}: {e}")
                        answer = None
                bar.update(1)
                return BaselineResult(sample.id, config.verdict.name, answer, scorer.correct(answer, sample.gold_answers))

            results = await asyncio.gather(*(_answer(sample) for sample in samples))

    store.flush_timings()
    with open(Path(out_dir) / BASELINE_FILE, "w", encoding="utf-8") as f:
        f.writelines(dump_line(result.to_dict()) for result in results)
    store.close()
    accuracy = sum(r.correct for r in results) / len(results) * 100
    logger.info(f"Baseline {config.verdict.name}: {accuracy:.2f} on {len(results)} samples")
    return list(results)


def load_verdict_alone(path: Union[str, Path]) -> Dict[str, bool]:
    """Per-sample correctness from a baseline file or a baseline run directory"""
    path = Path(path)
    if path.is_dir():
        path = path / BASELINE_FILE
    results = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                results[record["sample_id"]] = bool(record["correct"])
    return results


# Ablation sweep

@dataclass
class AblationRow:
    kind: str
    variant: str
    m: int
    strategy: str
    verdict_input: str
    verdict_visual: str
    verdict: float
    majority_m: float
    n_failed: int

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class AblationReport:
    rows: List[AblationRow] = field(default_factory=list)

    def rows_of(self, kind: str) -> List[AblationRow]:
        return [row for row in self.rows if row.kind == kind]

    def to_dict(self) -> Dict[str, Any]:
        return {"schema_version": SCHEMA_VERSION, "rows": [row.to_dict() for row in self.rows]}

    def format(self) -> str:
        headers = ["kind", "variant", "m", "strategy", "input", "visual", "verdict", "majority_m", "failed"]
        rows = [
            [r.kind, r.variant, r.m, r.strategy, r.verdict_input, r.verdict_visual, r.verdict, r.majority_m, r.n_failed]
            for r in self.rows
        ]
        return render_table(headers, rows)


def variant_name(config: RunConfig) -> str:
    name = f"m{config.m}-{config.strategy.value}"
    if config.verdict_input != VerdictInput.REASONING_PATHS:
        name += f"-{config.verdict_input.value}"
    if config.verdict_visual != VerdictVisual.IMAGE_PLUS_AUX:
        name += f"-visual_{config.verdict_visual.value}"
    return name


async def run_ablation(
    manifest: Manifest,
    config: RunConfig,
    out_dir: Union[str, Path],
    *,
    m_values: Optional[Sequence[int]] = None,
    strategies: Sequence[SelectionStrategy] = tuple(SelectionStrategy),
    extra_variants: Sequence[Dict[str, Any]] = (),
    limit: Optional[int] = None,
    progress: bool = True,
    connector_factory: Optional[ConnectorFactory] = None,
) -> AblationReport:
    """Sweep m and the selection strategies over one shared request cache"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = out_dir / "cache"
    if m_values is None:
        m_values = range(1, min(MAX_SWEEP_M, config.k) + 1)

    results: Dict[str, RunSummary] = {}
    report = AblationReport()

    async def _variant(kind: str, variant: RunConfig):
        name = variant_name(variant)
        if name not in results:
            logger.info(f"Ablation variant {name}")
            store = RunStore(out_dir / name, cache_dir=cache_dir)
            try:
                results[name] = await run_batch(
                    manifest, variant, store, limit=limit, progress=progress, connector_factory=connector_factory
                )
            finally:
                store.close()
        summary = results[name]
        report.rows.append(AblationRow(
            kind=kind,
            variant=name,
            m=variant.m,
            strategy=variant.strategy.value,
            verdict_input=variant.verdict_input.value,
            verdict_visual=variant.verdict_visual.value,
            verdict=summary.metrics.primary_metric,
            majority_m=summary.metrics.comparison[ROW_MAJORITY_M],
            n_failed=summary.n_failed,
        ))
        return summary

    base = apply_overrides(config, strategy=SelectionStrategy.CROSS_ALL)
    first: Optional[RunSummary] = None
    for m in m_values:
        summary = await _variant("m_sweep", apply_overrides(base, m=m))
        first = first or summary

    for strategy in strategies:
        overrides: Dict[str, Any] = {"strategy": strategy}
        if strategy == SelectionStrategy.BEST_REFERENCE and config.reference is None:
            overrides["reference"] = _top_performer(first, config)
        await _variant("strategy", apply_overrides(config, **overrides))

    for extra in extra_variants:
        await _variant("variant", apply_overrides(config, **extra))

    (out_dir / f"{ABLATION_FILE}.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    (out_dir / f"{ABLATION_FILE}.txt").write_text(report.format() + "\n", encoding="utf-8")
    return report


def _top_performer(summary: Optional[RunSummary], config: RunConfig) -> int:
    """Pool index of the best single expert, the default best_reference anchor"""
    if summary is None or not summary.metrics.per_model:
        return 0
    names = [spec.name for spec in config.pool]
    ranked = sorted(
        (name for name in summary.metrics.per_model if name in names),
        key=lambda name: (-summary.metrics.per_model[name], names.index(name)),
    )
    return names.index(ranked[0]) if ranked else 0
