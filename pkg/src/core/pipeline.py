"""
Speculative Verdict Harness - Pipeline

This module contains the orchestrator that runs the two-stage protocol for
one sample: candidate answers from every pool member, consensus selection
over answer log-likelihoods, reasoning paths from the selected experts and
a single verdict call that synthesizes them.
"""

import asyncio
import logging
from enum import Enum
from typing import Any, Awaitable, Callable, Dict, List, Optional, Protocol, Tuple

from .answers import extract_answer
from .config import ModelSpec, RunConfig
from .exceptions import (
    AllDraftsFailed,
    AllExpertsFailed,
    NoValidCandidates,
    SpeculativeVerdictError,
)
from .models import (
    CandidateAnswer,
    ConsensusMatrix,
    GenerationRecord,
    NllScore,
    OutcomeStatus,
    ReasoningPath,
    Sample,
    SampleOutcome,
    SelectionResult,
    TokenUsage,
    VerdictResult,
)
from ..connectors.base import BaseModelConnector, GenerationParams, PromptParts
from ..connectors.images import ImagePayload, load_image
from ..connectors.openai_connector import OpenAIConnector
from ..consensus.scoring import build_matrix, majority_vote, select_experts
from ..workflows.prompts import (
    answer_prompt,
    answer_prompt_format,
    assemble_verdict_prompt,
    reasoning_prompt,
)

logger = logging.getLogger(__name__)


class PipelineStatus(Enum):
    """Pipeline status enumeration"""
    INITIALIZING = "initializing"
    READY = "ready"
    ERROR = "error"
    SHUTDOWN = "shutdown"


class StageSink(Protocol):
    async def write_stage(self, stage: str, sample_id: str, payload: Dict[str, Any]) -> None: ...


ConnectorFactory = Callable[[ModelSpec], BaseModelConnector]


def describe_error(error: BaseException) -> str:
    return f"{type(error).__name__}: {error}"


class SpeculativeVerdictPipeline:
    """
    Runs draft answers, consensus selection, expert reasoning and the verdict
    """

    def __init__(
        self,
        config: RunConfig,
        cache: Optional[Any] = None,
        sink: Optional[StageSink] = None,
        timing_sink: Optional[Callable[[Dict[str, Any]], None]] = None,
        connector_factory: Optional[ConnectorFactory] = None,
    ):
        self.status = PipelineStatus.INITIALIZING
        self.config = config
        self.cache = cache
        self.sink = sink
        self.timing_sink = timing_sink
        self.connector_factory = connector_factory or self._default_connector
        self.pool: List[BaseModelConnector] = []
        self.verdict: Optional[BaseModelConnector] = None
        self._calls = asyncio.Semaphore(config.max_concurrency)

    def _default_connector(self, spec: ModelSpec) -> BaseModelConnector:
        return OpenAIConnector(
            spec,
            cache=self.cache,
            default_concurrency=self.config.max_concurrency,
            timing_sink=self.timing_sink,
        )

    async def initialize(self):
        """Create and connect one connector per endpoint"""
        try:
            self.pool = [self.connector_factory(spec) for spec in self.config.pool]
            self.verdict = self.connector_factory(self.config.verdict)
            for connector in [*self.pool, self.verdict]:
                await connector.connect()
            self.status = PipelineStatus.READY
            logger.info(f"Pipeline ready: k={self.config.k}, m={self.config.m}, "
                        f"strategy={self.config.strategy.value}, verdict={self.config.verdict.name}")
        except Exception as e:
            self.status = PipelineStatus.ERROR
            logger.error(f"Failed to initialize pipeline: {e}")
            raise

    async def shutdown(self):
        """Close every connector"""
        for connector in [*self.pool, *([self.verdict] if self.verdict else [])]:
            status = connector.get_status()
            if status["last_error"]:
                logger.info(f"Endpoint {status['name']} last error: {status['last_error']}")
            await connector.close()
        self.status = PipelineStatus.SHUTDOWN
        logger.debug("Pipeline shutdown complete")

    async def __aenter__(self) -> "SpeculativeVerdictPipeline":
        await self.initialize()
        return self

    async def __aexit__(self, *exc_info):
        await self.shutdown()

    async def _bounded(self, call: Awaitable):
        async with self._calls:
            return await call

    async def _emit(self, stage: str, sample_id: str, payload: Dict[str, Any]):
        if self.sink is not None:
            await self.sink.write_stage(stage, sample_id, payload)

    async def _image(self, ref: str) -> ImagePayload:
        return await load_image(ref, self.config.max_image_side)

    def _params(self, max_tokens: int) -> GenerationParams:
        return GenerationParams(max_tokens=max_tokens, temperature=self.config.temperature)

    # Stage 1: candidate answers

    async def draft_answers(self, sample: Sample, outcome: Optional[SampleOutcome] = None) -> List[CandidateAnswer]:
        """One short answer per pool member; failures become invalid candidates"""
        image = await self._image(sample.image)
        if self.config.economy_mode:
            text = reasoning_prompt(sample, self.config)
            answer_format = self.config.answer_format_for(sample.benchmark)
            params = self._params(self.config.max_tokens.reasoning)
        else:
            text = answer_prompt(sample)
            answer_format = answer_prompt_format(sample)
            params = self._params(self.config.max_tokens.answer)
        prompt = PromptParts(user=text, images=[image])

        async def _draft(index: int, connector: BaseModelConnector) -> Tuple[CandidateAnswer, Optional[GenerationRecord]]:
            try:
                record = await self._bounded(connector.generate(prompt, params, stage="draft_answer"))
            except SpeculativeVerdictError as e:
                logger.warning(f"Sample {sample.id}: draft {connector.name} failed: {e}")
                return CandidateAnswer(index, "", None, model=connector.name, error=describe_error(e)), None
            extracted = extract_answer(record.output_text, answer_format)
            if extracted is None:
                logger.warning(f"Sample {sample.id}: no answer marker in output of {connector.name}")
            return CandidateAnswer(index, record.output_text, extracted, model=connector.name), record

        results = await asyncio.gather(*(_draft(i, c) for i, c in enumerate(self.pool)))
        candidates = [candidate for candidate, _ in results]
        if outcome is not None:
            outcome.candidates = candidates
            for _, record in results:
                if record is not None:
                    outcome.add_record(record)

        if not any(candidate.valid for candidate in candidates):
            raise AllDraftsFailed(f"every draft candidate is invalid for sample {sample.id}")
        return candidates

    # Stage 2: consensus selection

    async def consensus_select(
        self, sample: Sample, candidates: List[CandidateAnswer]
    ) -> Tuple[ConsensusMatrix, SelectionResult, List[NllScore]]:
        """Score every valid answer under every valid scorer and select experts"""
        valid = [c for c in candidates if c.valid]
        if not valid:
            raise NoValidCandidates(f"no valid candidates for sample {sample.id}")

        scores: List[NllScore] = []
        if len(valid) > 1:
            image = await self._image(sample.image)
            # identical answer texts are scored once per scorer
            by_text: Dict[str, List[int]] = {}
            for candidate in valid:
                by_text.setdefault(candidate.extracted, []).append(candidate.model_index)

            async def _score(j: int, text: str) -> List[NllScore]:
                connector = self.pool[j]
                first = by_text[text][0]
                score = await self._bounded(connector.score_answer_nll(
                    image, sample.question, text, scorer_index=j, candidate_index=first,
                ))
                return [
                    NllScore(j, i, score.mean_nll, score.token_count) for i in by_text[text]
                ]

            jobs = [_score(c.model_index, text) for c in valid for text in by_text]
            for group in await asyncio.gather(*jobs):
                scores.extend(group)
            scores.sort(key=lambda s: (s.scorer_index, s.candidate_index))

        matrix = build_matrix(scores, candidates)
        selection = select_experts(matrix, self.config.strategy, self.config.m, self.config.reference_index())
        logger.info(f"Sample {sample.id}: selected experts {selection.chosen} ({selection.strategy.value})")
        return matrix, selection, scores

    # Stage 3: expert reasoning

    async def draft_reasoning(
        self,
        sample: Sample,
        selection: SelectionResult,
        outcome: Optional[SampleOutcome] = None,
        candidates: Optional[List[CandidateAnswer]] = None,
    ) -> List[ReasoningPath]:
        """One reasoning path per selected expert, in selection order"""
        if self.config.economy_mode and candidates is not None:
            paths = [self._reuse_candidate(candidates[i], outcome) for i in selection.chosen]
        else:
            image = await self._image(sample.image)
            prompt = PromptParts(user=reasoning_prompt(sample, self.config), images=[image])
            params = self._params(self.config.max_tokens.reasoning)
            answer_format = self.config.answer_format_for(sample.benchmark)

            async def _reason(index: int) -> Tuple[ReasoningPath, Optional[GenerationRecord]]:
                connector = self.pool[index]
                try:
                    record = await self._bounded(connector.generate(prompt, params, stage="draft_reasoning"))
                except SpeculativeVerdictError as e:
                    logger.warning(f"Sample {sample.id}: expert {connector.name} failed: {e}")
                    return ReasoningPath(index, "", None, model=connector.name, error=describe_error(e)), None
                if not record.output_text.strip():
                    logger.warning(f"Sample {sample.id}: expert {connector.name} returned an empty path")
                    return ReasoningPath(index, "", None, record.usage, connector.name, "empty reasoning output"), record
                extracted = extract_answer(record.output_text, answer_format)
                return ReasoningPath(index, record.output_text, extracted, record.usage, connector.name), record

            results = await asyncio.gather(*(_reason(i) for i in selection.chosen))
            paths = [path for path, _ in results]
            if outcome is not None:
                for _, record in results:
                    if record is not None:
                        outcome.add_record(record)

        if outcome is not None:
            outcome.paths = paths
        if not any(path.ok for path in paths):
            raise AllExpertsFailed(f"no selected expert produced a reasoning path for sample {sample.id}")
        return paths

    def _reuse_candidate(self, candidate: CandidateAnswer, outcome: Optional[SampleOutcome]) -> ReasoningPath:
        usage = TokenUsage()
        if outcome is not None:
            for record in outcome.records:
                if record.stage == "draft_answer" and record.model == candidate.model:
                    usage = record.usage
        return ReasoningPath(candidate.model_index, candidate.raw_text, candidate.extracted, usage, candidate.model)

    # Stage 4: verdict

    async def run_verdict(
        self, sample: Sample, paths: List[ReasoningPath], outcome: Optional[SampleOutcome] = None
    ) -> VerdictResult:
        """The single verdict call of a sample"""
        prompt = assemble_verdict_prompt(sample, paths, self.config)
        images = [await self._image(ref) for ref in prompt.images]
        parts = PromptParts(user=prompt.user, system=prompt.system, images=images)
        record = await self._bounded(
            self.verdict.generate(parts, self._params(self.config.max_tokens.verdict), stage="verdict")
        )
        if outcome is not None:
            outcome.add_record(record)
        extracted = extract_answer(record.output_text, answer_prompt_format(sample))
        return VerdictResult(raw_text=record.output_text, extracted=extracted, usage=record.usage)

    async def run_sample(self, sample: Sample) -> SampleOutcome:
        """Run every stage in order; stage errors mark the sample failed"""
        outcome = SampleOutcome(
            sample_id=sample.id,
            benchmark=sample.benchmark,
            gold_answers=list(sample.gold_answers),
            question_type=sample.question_type,
        )
        try:
            candidates = await self.draft_answers(sample, outcome)
            await self._emit("candidates", sample.id, {"candidates": [c.to_dict() for c in candidates]})

            matrix, selection, scores = await self.consensus_select(sample, candidates)
            outcome.matrix, outcome.selection, outcome.scores = matrix, selection, scores
            await self._emit("scores", sample.id, {
                "scores": [s.to_dict() for s in scores],
                "matrix": matrix.to_dict(),
            })
            await self._emit("selection", sample.id, {"selection": selection.to_dict()})

            paths = await self.draft_reasoning(sample, selection, outcome, candidates)
            await self._emit("paths", sample.id, {"paths": [p.to_dict() for p in paths]})

            try:
                outcome.majority_answer = majority_vote(outcome.expert_answers, outcome.expert_indices)
            except NoValidCandidates:
                outcome.majority_answer = None

            outcome.verdict = await self.run_verdict(sample, paths, outcome)
            await self._emit("verdict", sample.id, {
                "verdict": outcome.verdict.to_dict(),
                "majority_answer": outcome.majority_answer,
            })
            logger.info(f"Sample {sample.id}: verdict '{outcome.verdict_answer}', "
                        f"majority '{outcome.majority_answer}'")

        except SpeculativeVerdictError as e:
            outcome.status = OutcomeStatus.FAILED
            outcome.error = describe_error(e)
            logger.error(f"Sample {sample.id} failed: {outcome.error}")
        except Exception as e:
            outcome.status = OutcomeStatus.FAILED
            outcome.error = describe_error(e)
            logger.exception(f"Sample {sample.id} failed unexpectedly: {e}")

        return outcome

    async def baseline_answer(self, sample: Sample) -> Tuple[Optional[str], GenerationRecord]:
        """Answer a sample with the verdict model alone, using the reasoning template"""
        image = await self._image(sample.image)
        prompt = PromptParts(user=reasoning_prompt(sample, self.config), images=[image])
        record = await self._bounded(
            self.verdict.generate(prompt, self._params(self.config.max_tokens.reasoning), stage="baseline")
        )
        return extract_answer(record.output_text, self.config.answer_format_for(sample.benchmark)), record
