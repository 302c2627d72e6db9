"""
Speculative Verdict Harness - Mock Model Server

A FastAPI app that answers the OpenAI-compatible generation routes and the
scoring routes from a scenario file, so the whole protocol can be replayed
offline. ``serve_mock`` runs it in-process on a background thread.
"""

import asyncio
import base64
import errno
import logging
import socket
import threading
import time
from typing import Any, Dict, List, Optional, Tuple

import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from ..connectors.images import decode_data_url, is_remote
from ..core.answers import image_digest, prompt_digest
from ..core.exceptions import PortInUse
from .scenario import FailureMode, MockRequest, RuleKind, Scenario, ScenarioRule

logger = logging.getLogger(__name__)

REQUEST_ID_HEADER = "X-Request-ID"
STARTUP_TIMEOUT = 10.0


# Request models

class ChatRequest(BaseModel):
    model_config = ConfigDict(extra="allow")
    model: str
    messages: List[Dict[str, Any]]
    max_tokens: Optional[int] = None
    temperature: float = 0.0


class CompletionRequest(BaseModel):
    model_config = ConfigDict(extra="allow")
    model: str
    prompt: str
    images: List[str] = []
    echo: bool = False
    logprobs: Optional[int] = None
    max_tokens: Optional[int] = None
    temperature: float = 0.0


class ScoreRequest(BaseModel):
    model: str
    question: str
    answer: str
    image_b64: Optional[str] = None
    image_url: Optional[str] = None


class MockState:
    """Scenario plus the counters shared by every request"""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self._lock = threading.Lock()
        self.request_count = 0
        self.failures_served: Dict[int, int] = {}

    def count_request(self) -> int:
        with self._lock:
            self.request_count += 1
            return self.request_count

    def should_fail(self, index: int, rule: ScenarioRule) -> bool:
        """Failure rules fail forever, or only their first `failures` matches"""
        if rule.failure_mode is None:
            return False
        with self._lock:
            served = self.failures_served.get(index, 0)
            if rule.failures is not None and served >= rule.failures:
                return False
            self.failures_served[index] = served + 1
            return True


def _digest_of_image(url: str) -> str:
    if is_remote(url):
        return image_digest(url.encode("utf-8"))
    return image_digest(decode_data_url(url))


def chat_prompt(request: ChatRequest) -> Tuple[Optional[str], str, List[str]]:
    """(system, user, image urls) of a chat request"""
    system = None
    texts: List[str] = []
    images: List[str] = []
    for message in request.messages:
        content = message.get("content")
        if message.get("role") == "system":
            system = content if isinstance(content, str) else "".join(
                part.get("text", "") for part in content if part.get("type") == "text"
            )
            continue
        if isinstance(content, str):
            texts.append(content)
            continue
        for part in content or []:
            if part.get("type") == "text":
                texts.append(part.get("text", ""))
            elif part.get("type") == "image_url":
                images.append(part["image_url"]["url"])
    return system, "".join(texts), images


def _error(status: int, message: str, **extra: Any) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"message": message, **extra}})


def _usage(rule: ScenarioRule) -> Dict[str, int]:
    usage = rule.usage
    return {
        "prompt_tokens": usage.prompt_tokens,
        "completion_tokens": usage.completion_tokens,
        "total_tokens": usage.prompt_tokens + usage.completion_tokens,
    }


def split_tokens(text: str, count: int) -> List[Tuple[str, int]]:
    """Cut text into `count` pieces with their character offsets"""
    pieces = []
    step = max(1, -(-len(text) // count)) if text else 1
    for index in range(count):
        start = min(index * step, len(text))
        end = len(text) if index == count - 1 else min(start + step, len(text))
        pieces.append((text[start:end], start))
    return pieces


def create_app(scenario: Scenario) -> FastAPI:
    """Mock server app for one scenario"""
    app = FastAPI(
        title="Speculative Verdict Mock Server",
        description="Scenario-driven OpenAI-compatible endpoints for offline replay",
        version="1.0.0",
    )
    state = MockState(scenario)
    app.state.mock = state

    @app.middleware("http")
    async def correlation_id(request: Request, call_next):
        response = await call_next(request)
        request_id = request.headers.get(REQUEST_ID_HEADER)
        if request_id:
            response.headers[REQUEST_ID_HEADER] = request_id
        return response

    async def resolve(mock_request: MockRequest) -> Tuple[Optional[ScenarioRule], Optional[JSONResponse]]:
        """Matching rule, or the response that replaces it"""
        state.count_request()
        found = scenario.match(mock_request)
        if found is None:
            logger.warning(f"No rule for {mock_request.kind.value} request to {mock_request.model} "
                           f"(digest {mock_request.digest})")
            return None, _error(404, "no scenario rule matches the request",
                                digest=mock_request.digest, model=mock_request.model)
        index, rule = found
        if rule.latency_ms:
            await asyncio.sleep(rule.latency_ms / 1000)
        if state.should_fail(index, rule):
            if rule.failure_mode == FailureMode.TIMEOUT:
                await asyncio.sleep(scenario.timeout_seconds)
                return None, _error(504, "injected timeout")
            if rule.failure_mode == FailureMode.RATE_LIMIT:
                return None, _error(429, "injected rate limit")
            return None, _error(503, "injected server error")
        return rule, None

    @app.get("/health")
    async def health_check():
        return {
            "status": "healthy",
            "service": "speculative-verdict-mock",
            "rules": len(scenario.rules),
            "request_count": state.request_count,
        }

    @app.post("/v1/chat/completions")
    async def chat_completions(request: ChatRequest):
        """Scripted chat completion"""
        system, user, images = chat_prompt(request)
        digest = prompt_digest(system, user, [_digest_of_image(url) for url in images])
        if request.max_tokens is not None and request.max_tokens <= 0:
            state.count_request()
            return _error(400, "max_tokens must be positive", digest=digest)

        text = user if system is None else f"{system}\n{user}"
        rule, failure = await resolve(MockRequest(RuleKind.GENERATE, request.model, digest, text))
        if failure is not None:
            return failure
        return {
            "id": f"chatcmpl-{state.request_count}",
            "object": "chat.completion",
            "model": request.model,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": rule.response_text},
                "finish_reason": rule.finish_reason,
            }],
            "usage": _usage(rule),
        }

    @app.post("/v1/completions")
    async def completions(request: CompletionRequest):
        """Scripted completion, or answer-span scoring when echo is set"""
        image_digests = [_digest_of_image(url) for url in request.images]
        if request.echo:
            question, _, answer = request.prompt.rpartition("\n")
            digest = prompt_digest(None, request.prompt, image_digests)
            rule, failure = await resolve(MockRequest(RuleKind.SCORE, request.model, digest, question, answer))
            if failure is not None:
                return failure
            prefix = f"{question}\n"
            pieces = split_tokens(answer, len(rule.token_logprobs))
            tokens = [prefix] + [piece for piece, _ in pieces]
            offsets = [0] + [len(prefix) + offset for _, offset in pieces]
            return {
                "id": f"cmpl-{state.request_count}",
                "object": "text_completion",
                "model": request.model,
                "choices": [{
                    "index": 0,
                    "text": request.prompt,
                    "logprobs": {
                        "tokens": tokens,
                        "token_logprobs": [None] + list(rule.token_logprobs),
                        "text_offset": offsets,
                    },
                    "finish_reason": "length",
                }],
                "usage": {"prompt_tokens": len(tokens), "completion_tokens": 0, "total_tokens": len(tokens)},
            }

        digest = prompt_digest(None, request.prompt, image_digests)
        if request.max_tokens is not None and request.max_tokens <= 0:
            state.count_request()
            return _error(400, "max_tokens must be positive", digest=digest)
        rule, failure = await resolve(MockRequest(RuleKind.GENERATE, request.model, digest, request.prompt))
        if failure is not None:
            return failure
        return {
            "id": f"cmpl-{state.request_count}",
            "object": "text_completion",
            "model": request.model,
            "choices": [{"index": 0, "text": rule.response_text, "finish_reason": rule.finish_reason}],
            "usage": _usage(rule),
        }

    @app.post("/v1/score")
    async def score(request: ScoreRequest):
        """Scripted answer-span log-probabilities"""
        if request.image_b64 is not None:
            image = image_digest(base64.b64decode(request.image_b64))
        elif request.image_url is not None:
            image = image_digest(request.image_url.encode("utf-8"))
        else:
            state.count_request()
            return _error(400, "score requests need image_b64 or image_url")
        digest = prompt_digest(None, f"{request.question}\n{request.answer}", [image])
        rule, failure = await resolve(
            MockRequest(RuleKind.SCORE, request.model, digest, request.question, request.answer)
        )
        if failure is not None:
            return failure
        return {"model": request.model, "token_logprobs": list(rule.token_logprobs)}

    return app


class MockServerHandle:
    """In-process mock server running on a daemon thread"""

    def __init__(self, server: uvicorn.Server, thread: threading.Thread, state: MockState, host: str, port: int):
        self.server = server
        self.thread = thread
        self.state = state
        self.host = host
        self.port = port

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    @property
    def request_count(self) -> int:
        return self.state.request_count

    def wait(self):
        """Block until the server stops"""
        while self.thread.is_alive():
            self.thread.join(timeout=0.5)

    def stop(self):
        self.server.should_exit = True
        self.thread.join(timeout=5)
        logger.info(f"Mock server on {self.url} stopped after {self.request_count} requests")

    def __enter__(self) -> "MockServerHandle":
        return self

    def __exit__(self, *exc_info):
        self.stop()


def serve_mock(scenario: Scenario, port: int = 0, host: str = "127.0.0.1") -> MockServerHandle:
    """Start the mock server; port 0 picks a free port"""
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        sock.bind((host, port))
    except OSError as e:
        sock.close()
        if e.errno == errno.EADDRINUSE:
            raise PortInUse(f"port {port} on {host} is already in use") from e
        raise
    bound_port = sock.getsockname()[1]

    app = create_app(scenario)
    config = uvicorn.Config(app, log_level="warning", lifespan="off", timeout_graceful_shutdown=1)
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]}, daemon=True)
    thread.start()

    deadline = time.monotonic() + STARTUP_TIMEOUT
    while not server.started:
        if not thread.is_alive() or time.monotonic() > deadline:
            server.should_exit = True
            raise RuntimeError(f"mock server failed to start on {host}:{bound_port}")
        time.sleep(0.01)

    logger.info(f"Mock server listening on http://{host}:{bound_port} with {len(scenario.rules)} rules")
    return MockServerHandle(server, thread, app.state.mock, host, bound_port)
