#!/usr/bin/env python3
"""
Speculative Verdict Harness - Main Entry Point

Command line surface for running the protocol over a manifest, re-scoring
and reporting stored runs, sweeping ablations, running the bare-verdict
baseline and serving the scenario-driven mock model server.
"""
import argparse
import asyncio
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.core.config import RunConfig, Settings, apply_overrides, dump_run_config, load_run_config, reload_settings
from src.core.exceptions import ConfigError, SpeculativeVerdictError, StoreCorrupted
from src.core.models import BenchmarkKind, SelectionStrategy, VerdictInput, VerdictVisual
from src.harness.manifest import ingest_manifest
from src.harness.runner import (
    RunSummary,
    load_verdict_alone,
    run_ablation,
    run_baseline,
    run_batch,
    summarize,
    write_summary,
)
from src.harness.store import METADATA_FILE, RunStore
from src.mock.scenario import load_scenario
from src.mock.server import serve_mock

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SAMPLE_FAILURES = 1
EXIT_FATAL = 2

STRATEGY_CHOICES = {
    "cross-all": SelectionStrategy.CROSS_ALL,
    "best-reference": SelectionStrategy.BEST_REFERENCE,
    "divergent": SelectionStrategy.DIVERGENT,
}
VERDICT_INPUT_CHOICES = {
    "paths": VerdictInput.REASONING_PATHS,
    "answers": VerdictInput.ANSWERS_ONLY,
}
VERDICT_VISUAL_CHOICES = {
    "aux": VerdictVisual.IMAGE_PLUS_AUX,
    "image": VerdictVisual.IMAGE_ONLY,
    "none": VerdictVisual.NONE,
}
CONFIG_SNAPSHOT = "config.yaml"


class UsageError(Exception):
    """Raised by the parser instead of exiting"""


class HarnessArgumentParser(argparse.ArgumentParser):
    """Argument parser that prints help and reports usage errors as exit code 2"""

    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def configure_logging(settings: Settings, quiet: bool = False):
    """Configure root logging from process settings"""
    level = logging.WARNING if quiet else getattr(logging, settings.log_level.upper(), logging.INFO)
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file, encoding="utf-8"))
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _add_overrides(parser: argparse.ArgumentParser):
    parser.add_argument("--max-concurrency", type=int, help="Worker budget for samples and calls")
    parser.add_argument("--strategy", choices=sorted(STRATEGY_CHOICES), help="Expert selection strategy")
    parser.add_argument("--m", type=int, help="Number of experts kept for the reasoning round")
    parser.add_argument("--verdict-input", choices=sorted(VERDICT_INPUT_CHOICES), help="What the verdict sees")
    parser.add_argument("--verdict-visual", choices=sorted(VERDICT_VISUAL_CHOICES), help="Images given to the verdict")


def _add_run_inputs(parser: argparse.ArgumentParser):
    parser.add_argument("--config", required=True, help="Run configuration YAML")
    parser.add_argument("--manifest", required=True, help="Benchmark manifest (JSON lines)")
    parser.add_argument("--out", help="Output directory (default: <output_dir>/<manifest name>)")
    parser.add_argument("--benchmark", choices=[kind.value for kind in BenchmarkKind],
                        help="Benchmark when the manifest declares none")
    parser.add_argument("--limit", type=int, help="Only process the first N samples")
    parser.add_argument("--quiet", action="store_true", help="Hide progress and info logging")


def build_parser() -> HarnessArgumentParser:
    parser = HarnessArgumentParser(
        prog="sverdict",
        description="Speculative Verdict orchestration and evaluation harness",
    )
    commands = parser.add_subparsers(dest="command", required=True, parser_class=HarnessArgumentParser)

    run = commands.add_parser("run", help="Run the protocol over a manifest")
    _add_run_inputs(run)
    _add_overrides(run)
    run.add_argument("--resume", action="store_true", help="Continue a non-empty run directory")
    run.add_argument("--verdict-alone", help="Baseline file for the verdict-correct split")

    score = commands.add_parser("score", help="Re-score a stored run and rewrite its reports")
    score.add_argument("run_dir", help="Run directory")
    score.add_argument("--config", help="Run configuration to score with instead of the stored one")
    score.add_argument("--verdict-alone", help="Baseline file for the verdict-correct split")

    report = commands.add_parser("report", help="Print metric, recovery and cost tables of a stored run")
    report.add_argument("run_dir", help="Run directory")
    report.add_argument("--config", help="Run configuration to score with instead of the stored one")
    report.add_argument("--verdict-alone", help="Baseline file for the verdict-correct split")
    report.add_argument("--json", action="store_true", help="Print the reports as JSON")

    mock = commands.add_parser("mock", help="Serve a scenario on the mock model server")
    mock.add_argument("--scenario", required=True, help="Scenario JSON file")
    mock.add_argument("--host", help="Bind address")
    mock.add_argument("--port", type=int, help="Port, 0 picks a free one")

    ablate = commands.add_parser("ablate", help="Sweep m and the selection strategies")
    _add_run_inputs(ablate)
    _add_overrides(ablate)
    ablate.add_argument("--m-values", type=int, nargs="+", help="m values of the sweep (default 1..min(5, k))")
    ablate.add_argument("--resume", action="store_true", help="Continue a non-empty ablation directory")

    baseline = commands.add_parser("baseline", help="Answer every sample with one model alone")
    _add_run_inputs(baseline)
    baseline.add_argument("--model", help="Pool member to use instead of the verdict model")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "max_concurrency": getattr(args, "max_concurrency", None),
        "m": getattr(args, "m", None),
        "strategy": STRATEGY_CHOICES.get(getattr(args, "strategy", None) or ""),
        "verdict_input": VERDICT_INPUT_CHOICES.get(getattr(args, "verdict_input", None) or ""),
        "verdict_visual": VERDICT_VISUAL_CHOICES.get(getattr(args, "verdict_visual", None) or ""),
    }


def _benchmark(args: argparse.Namespace) -> Optional[BenchmarkKind]:
    return BenchmarkKind(args.benchmark) if args.benchmark else None


def _out_dir(args: argparse.Namespace, settings: Settings, suffix: str = "") -> Path:
    if args.out:
        return Path(args.out)
    return Path(settings.output_dir) / f"{Path(args.manifest).stem}{suffix}"


def _check_out_dir(out: Path, resume: bool):
    if out.exists() and any(out.iterdir()) and not resume:
        raise ConfigError(f"output directory {out} is not empty; pass --resume to continue it")


async def cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    config = apply_overrides(load_run_config(args.config, settings.default_max_concurrency), **_overrides(args))
    manifest = ingest_manifest(args.manifest, _benchmark(args))
    out = _out_dir(args, settings)
    _check_out_dir(out, args.resume)
    verdict_alone = load_verdict_alone(args.verdict_alone) if args.verdict_alone else None

    store = RunStore(out)
    store.prepare()
    (out / CONFIG_SNAPSHOT).write_text(dump_run_config(config), encoding="utf-8")
    try:
        summary = await run_batch(
            manifest,
            config,
            store,
            limit=args.limit,
            progress=settings.progress and not args.quiet,
            verdict_alone=verdict_alone,
        )
    finally:
        store.close()
    print(summary.format())
    return summary.exit_code


def _stored_summary(args: argparse.Namespace) -> RunSummary:
    store = RunStore(args.run_dir)
    metadata = store.read_metadata()
    if not metadata:
        raise StoreCorrupted(f"{Path(args.run_dir) / METADATA_FILE} is missing")
    if args.config:
        config = load_run_config(args.config)
    else:
        try:
            config = RunConfig.model_validate(metadata["config"])
        except (KeyError, ValueError) as e:
            raise StoreCorrupted(f"stored config of {args.run_dir} is unreadable: {e}") from e
    benchmark = BenchmarkKind(metadata["benchmark"])
    verdict_alone = load_verdict_alone(args.verdict_alone) if args.verdict_alone else None
    summary = summarize(store.load_outcomes(), benchmark, config, verdict_alone)
    summary.run_dir = store.run_dir
    return summary


def cmd_score(args: argparse.Namespace) -> int:
    summary = _stored_summary(args)
    write_summary(RunStore(args.run_dir), summary)
    print(f"{summary.metrics.benchmark.value}: verdict {summary.metrics.primary_metric:.2f} "
          f"over {summary.n_samples} samples ({summary.n_failed} failed)")
    return summary.exit_code


def cmd_report(args: argparse.Namespace) -> int:
    summary = _stored_summary(args)
    if args.json:
        print(json.dumps(summary.to_dict(), indent=2))
    else:
        print(summary.format())
    return summary.exit_code


def cmd_mock(args: argparse.Namespace, settings: Settings) -> int:
    scenario = load_scenario(args.scenario)
    host = args.host or settings.mock_host
    port = settings.mock_port if args.port is None else args.port
    handle = serve_mock(scenario, port=port, host=host)
    print(f"Mock server listening on {handle.url} ({len(scenario.rules)} rules)")
    print("Press Ctrl+C to stop the server")
    try:
        handle.wait()
    except KeyboardInterrupt:
        pass
    finally:
        handle.stop()
    return EXIT_OK


async def cmd_ablate(args: argparse.Namespace, settings: Settings) -> int:
    overrides = _overrides(args)
    variant_overrides = {
        key: overrides.pop(key) for key in ("verdict_input", "verdict_visual") if overrides.get(key) is not None
    }
    config = apply_overrides(load_run_config(args.config, settings.default_max_concurrency), **overrides)
    manifest = ingest_manifest(args.manifest, _benchmark(args))
    out = _out_dir(args, settings, "-ablation")
    _check_out_dir(out, args.resume)

    report = await run_ablation(
        manifest,
        config,
        out,
        m_values=args.m_values,
        extra_variants=[variant_overrides] if variant_overrides else (),
        limit=args.limit,
        progress=settings.progress and not args.quiet,
    )
    print(report.format())
    return EXIT_SAMPLE_FAILURES if any(row.n_failed for row in report.rows) else EXIT_OK


async def cmd_baseline(args: argparse.Namespace, settings: Settings) -> int:
    config = load_run_config(args.config, settings.default_max_concurrency)
    manifest = ingest_manifest(args.manifest, _benchmark(args))
    results = await run_baseline(
        manifest,
        config,
        _out_dir(args, settings, "-baseline"),
        model=args.model,
        limit=args.limit,
        progress=settings.progress and not args.quiet,
    )
    correct = sum(result.correct for result in results)
    print(f"baseline {results[0].model}: {correct}/{len(results)} correct")
    return EXIT_SAMPLE_FAILURES if any(result.answer is None for result in results) else EXIT_OK


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_FATAL
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_OK

    load_dotenv()
    settings = reload_settings()
    configure_logging(settings, quiet=getattr(args, "quiet", False))

    try:
        if args.command == "run":
            return asyncio.run(cmd_run(args, settings))
        if args.command == "score":
            return cmd_score(args)
        if args.command == "report":
            return cmd_report(args)
        if args.command == "mock":
            return cmd_mock(args, settings)
        if args.command == "ablate":
            return asyncio.run(cmd_ablate(args, settings))
        if args.command == "baseline":
            return asyncio.run(cmd_baseline(args, settings))
    except SpeculativeVerdictError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FATAL
    except (OSError, ValueError) as e:
        logger.error(f"Fatal error: {e}")
        return EXIT_FATAL
    return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(cli())
