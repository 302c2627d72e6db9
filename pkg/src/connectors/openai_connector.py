"""
OpenAI-compatible Model Connector

Speaks /v1/chat/completions and /v1/completions for generation, and either
/v1/completions with echo+logprobs or /v1/score for answer-span scoring.
Transient failures are retried with exponential backoff; completed calls
are stored in an optional content-addressed request cache.
"""

import asyncio
import logging
import math
import time
import uuid
from typing import Any, Callable, Dict, List, Optional, Protocol

import aiohttp
import backoff

from ..core.answers import params_digest, prompt_digest
from ..core.config import ApiStyle, ModelSpec, ScoringBackend
from ..core.exceptions import (
    EmptyAnswer,
    EndpointUnavailable,
    MalformedResponse,
    RequestRejected,
    ScoringUnsupported,
)
from ..core.models import FinishReason, GenerationRecord, NllScore, TokenUsage
from .base import BaseModelConnector, ConnectorStatus, GenerationParams, PromptParts
from .images import ImagePayload

logger = logging.getLogger(__name__)

REQUEST_ID_HEADER = "X-Request-ID"


class RequestCache(Protocol):
    def get(self, key: str) -> Optional[Dict[str, Any]]: ...

    def set(self, key: str, value: Dict[str, Any]) -> None: ...


class TransientError(Exception):
    """Retryable transport failure"""


def wire_text(prompt: PromptParts, merge_system: bool) -> tuple:
    """(system, user) exactly as sent; merged prompts carry the system text on top"""
    if prompt.system is None:
        return None, prompt.user
    if merge_system:
        return None, f"{prompt.system}\n{prompt.user}"
    return prompt.system, prompt.user


def echo_prefix(question: str) -> str:
    return f"{question}\n"


class OpenAIConnector(BaseModelConnector):
    """Connector for one OpenAI-compatible endpoint"""

    def __init__(
        self,
        spec: ModelSpec,
        cache: Optional[RequestCache] = None,
        default_concurrency: int = 8,
        timing_sink: Optional[Callable[[Dict[str, Any]], None]] = None,
    ):
        super().__init__(spec.name)
        self.spec = spec
        self.cache = cache
        self.timing_sink = timing_sink
        self._semaphore = asyncio.Semaphore(spec.max_concurrency or default_concurrency)
        self._session: Optional[aiohttp.ClientSession] = None
        self.request_count = 0

    @property
    def merge_system(self) -> bool:
        return self.spec.api_style == ApiStyle.COMPLETIONS or not self.spec.system_role

    async def connect(self, **kwargs) -> bool:
        """Open the HTTP session"""
        if self._session is not None and not self._session.closed:
            return True
        self.status = ConnectorStatus.CONNECTING
        headers = {"Content-Type": "application/json"}
        api_key = self.spec.api_key()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        timeout = aiohttp.ClientTimeout(total=self.spec.request_timeout)
        self._session = aiohttp.ClientSession(timeout=timeout, headers=headers)
        self.status = ConnectorStatus.CONNECTED
        logger.debug(f"Connector {self.name} ready for {self.spec.base_url}")
        return True

    async def disconnect(self) -> bool:
        """Close the HTTP session"""
        if self._session is not None:
            await self._session.close()
            self._session = None
        self.status = ConnectorStatus.DISCONNECTED
        return True

    async def is_connected(self) -> bool:
        return self._session is not None and not self._session.closed

    # Wire payloads

    def build_generation_payload(self, prompt: PromptParts, params: GenerationParams) -> tuple:
        """(route, payload, digest) for a generation request"""
        system, user = wire_text(prompt, self.merge_system)
        digest = prompt_digest(system, user, [image.digest for image in prompt.images])

        if self.spec.api_style == ApiStyle.COMPLETIONS:
            payload: Dict[str, Any] = {
                "model": self.spec.served_model,
                "prompt": user,
                "images": [image.url for image in prompt.images],
            }
            route = "/v1/completions"
        else:
            content: List[Dict[str, Any]] = [{"type": "text", "text": user}]
            content.extend({"type": "image_url", "image_url": {"url": image.url}} for image in prompt.images)
            messages: List[Dict[str, Any]] = []
            if system is not None:
                messages.append({"role": "system", "content": system})
            messages.append({"role": "user", "content": content})
            payload = {"model": self.spec.served_model, "messages": messages}
            route = "/v1/chat/completions"

        payload.update(params.to_dict())
        return route, payload, digest

    def build_score_payload(self, image: ImagePayload, question: str, answer_text: str) -> tuple:
        """(route, payload) for a scoring request"""
        if self.spec.supports_scoring == ScoringBackend.ECHO_LOGPROBS:
            payload = {
                "model": self.spec.served_model,
                "prompt": echo_prefix(question) + answer_text,
                "echo": True,
                "logprobs": 1,
                "max_tokens": 0,
                "images": [image.url],
            }
            return "/v1/completions", payload

        payload = {"model": self.spec.served_model, "question": question, "answer": answer_text}
        if image.inline:
            payload["image_b64"] = image.b64
        else:
            payload["image_url"] = image.url
        return "/v1/score", payload

    # Transport

    async def _post(self, route: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        """POST with retries; the correlation id is fixed across attempts"""
        if not await self.is_connected():
            await self.connect()
        request_id = uuid.uuid4().hex
        url = f"{self.spec.base_url}{route}"

        def _log_retry(details: Dict[str, Any]):
            logger.warning(
                f"Retrying {self.name} {route} (attempt {details['tries']}) "
                f"after {details['wait']:.2f}s: {details['exception']}"
            )

        @backoff.on_exception(
            backoff.expo,
            TransientError,
            max_tries=self.spec.max_retries + 1,
            factor=self.spec.retry_backoff,
            jitter=None,
            on_backoff=_log_retry,
        )
        async def _attempt() -> Dict[str, Any]:
            self.request_count += 1
            try:
                async with self._session.post(url, json=payload, headers={REQUEST_ID_HEADER: request_id}) as response:
                    if response.status == 429 or response.status >= 500:
                        raise TransientError(f"HTTP {response.status}")
                    try:
                        body = await response.json(content_type=None)
                    except ValueError as e:
                        raise MalformedResponse(f"{self.name}: response is not JSON", self.name) from e
                    if response.status >= 400:
                        raise self._rejection(response.status, body)
                    echoed = response.headers.get(REQUEST_ID_HEADER)
                    if echoed is not None and echoed != request_id:
                        raise MalformedResponse(
                            f"{self.name}: response correlation id {echoed} does not match {request_id}", self.name
                        )
                    return body
            except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                raise TransientError(f"{type(e).__name__}: {e}") from e

        try:
            async with self._semaphore:
                return await _attempt()
        except TransientError as e:
            self.set_error(str(e))
            raise EndpointUnavailable(
                f"{self.name} unavailable after {self.spec.max_retries + 1} attempts: {e}", self.name
            ) from e

    def _rejection(self, status: int, body: Any) -> RequestRejected:
        error = body.get("error", {}) if isinstance(body, dict) else {}
        message = error.get("message", str(body)) if isinstance(error, dict) else str(error)
        digest = error.get("digest") if isinstance(error, dict) else None
        suffix = f" (digest {digest})" if digest else ""
        return RequestRejected(f"{self.name} rejected request with HTTP {status}: {message}{suffix}", self.name, status)

    def _emit_timing(self, kind: str, key: str, started: float, cached: bool):
        if self.timing_sink is None:
            return
        self.timing_sink({
            "model": self.name,
            "kind": kind,
            "key": key,
            "latency_ms": round((time.perf_counter() - started) * 1000, 3),
            "cached": cached,
        })

    # Operations

    async def generate(self, prompt: PromptParts, params: GenerationParams, stage: str = "") -> GenerationRecord:
        """Run one generation, serving it from the request cache when possible"""
        if params.max_tokens <= 0:
            raise RequestRejected(f"{self.name}: max_tokens must be positive, got {params.max_tokens}", self.name)

        route, payload, digest = self.build_generation_payload(prompt, params)
        cache_key = f"gen:{self.name}:{digest}:{params_digest(**params.to_dict())}"
        started = time.perf_counter()

        cached = self.cache.get(cache_key) if self.cache is not None else None
        if cached is not None:
            logger.debug(f"Cache hit for {self.name} generation {digest[:12]}")
            self._emit_timing("generate", digest, started, cached=True)
            return GenerationRecord(
                model=self.name,
                prompt_digest=digest,
                output_text=cached["output_text"],
                usage=TokenUsage.from_dict(cached["usage"]),
                finish_reason=FinishReason(cached["finish_reason"]),
                stage=stage,
                cached=True,
            )

        body = await self._post(route, payload)
        text, usage, finish_reason = self._parse_generation(body)
        latency_ms = (time.perf_counter() - started) * 1000

        if self.cache is not None:
            self.cache.set(cache_key, {
                "output_text": text,
                "usage": usage.to_dict(),
                "finish_reason": finish_reason.value,
            })
        self._emit_timing("generate", digest, started, cached=False)
        logger.debug(f"{self.name} generated {usage.completion_tokens} tokens in {latency_ms:.0f}ms")

        return GenerationRecord(
            model=self.name,
            prompt_digest=digest,
            output_text=text,
            usage=usage,
            finish_reason=finish_reason,
            stage=stage,
            latency_ms=latency_ms,
        )

    def _parse_generation(self, body: Dict[str, Any]) -> tuple:
        try:
            choice = body["choices"][0]
            if self.spec.api_style == ApiStyle.COMPLETIONS:
                text = choice["text"]
            else:
                text = choice["message"]["content"]
            usage = body["usage"]
            token_usage = TokenUsage(
                prompt_tokens=int(usage["prompt_tokens"]),
                completion_tokens=int(usage["completion_tokens"]),
            )
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise MalformedResponse(f"{self.name}: response missing choices or usage ({e})", self.name) from e
        if text is None:
            text = ""
        finish = choice.get("finish_reason")
        finish_reason = FinishReason.LENGTH if finish == "length" else FinishReason.STOP
        return text, token_usage, finish_reason

    async def score_answer_nll(
        self,
        image: ImagePayload,
        question: str,
        answer_text: str,
        *,
        scorer_index: int,
        candidate_index: int,
    ) -> NllScore:
        """Mean negative log-probability over the answer tokens only"""
        if self.spec.supports_scoring == ScoringBackend.NONE:
            raise ScoringUnsupported(f"{self.name} has no scoring backend", self.name)
        if not answer_text or not answer_text.strip():
            raise EmptyAnswer(f"{self.name}: cannot score an empty answer", self.name)

        key_digest = prompt_digest(None, f"{question}\n{answer_text}", [image.digest])
        cache_key = f"score:{self.name}:{self.spec.supports_scoring.value}:{key_digest}"
        started = time.perf_counter()

        logprobs = None
        cached = self.cache.get(cache_key) if self.cache is not None else None
        if cached is not None:
            logprobs = cached["token_logprobs"]
            logger.debug(f"Cache hit for {self.name} score {key_digest[:12]}")
        else:
            route, payload = self.build_score_payload(image, question, answer_text)
            body = await self._post(route, payload)
            logprobs = self._parse_logprobs(body, question)
            if self.cache is not None:
                self.cache.set(cache_key, {"token_logprobs": logprobs})
        self._emit_timing("score", key_digest, started, cached=cached is not None)

        return NllScore(
            scorer_index=scorer_index,
            candidate_index=candidate_index,
            mean_nll=mean_nll(logprobs),
            token_count=len(logprobs),
        )

    def _parse_logprobs(self, body: Dict[str, Any], question: str) -> List[float]:
        try:
            if self.spec.supports_scoring == ScoringBackend.ECHO_LOGPROBS:
                logprobs = body["choices"][0]["logprobs"]
                boundary = len(echo_prefix(question))
                offsets = logprobs["text_offset"]
                # a token ends where the next begins; keep every token that reaches past the boundary
                ends = [*offsets[1:], math.inf]
                values = [lp for lp, end in zip(logprobs["token_logprobs"], ends) if end > boundary]
            else:
                values = list(body["token_logprobs"])
            values = [float(v) for v in values]
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise MalformedResponse(f"{self.name}: scoring response missing token logprobs ({e})", self.name) from e
        if not values or not all(math.isfinite(v) for v in values):
            raise MalformedResponse(f"{self.name}: answer span has no finite token logprobs", self.name)
        return values


def mean_nll(token_logprobs: List[float]) -> float:
    """Average negated natural-log probability, clamped at zero"""
    return max(0.0, -sum(token_logprobs) / len(token_logprobs))
