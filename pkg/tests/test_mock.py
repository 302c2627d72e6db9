"""
Mock server tests through the FastAPI test client.
"""
import base64
import socket

import pytest
from fastapi.testclient import TestClient

from conftest import PIXEL_PNG

from src.core.answers import prompt_digest
from src.core.exceptions import PortInUse, ScenarioError
from src.mock.scenario import parse_scenario
from src.mock.server import REQUEST_ID_HEADER, create_app, serve_mock, split_tokens

RULES = [
    {"kind": "score", "contains": "How many bars?", "answer": "12", "token_logprobs": [-0.5, -1.5, -1.0]},
    {"model": "draft-a", "kind": "generate", "contains": "Describe", "response_text": "\\boxed{12}",
     "usage": {"prompt_tokens": 30, "completion_tokens": 4}},
    {"model": "draft-b", "kind": "generate", "failure_mode": "server_error"},
]


@pytest.fixture
def client():
    return TestClient(create_app(parse_scenario(RULES)))


def chat(model: str, text: str, **fields):
    return {"model": model, "messages": [{"role": "user", "content": [{"type": "text", "text": text}]}], **fields}


def test_health(client):
    client.post("/v1/chat/completions", json=chat("draft-a", "Describe it"))
    body = client.get("/health").json()
    assert body["status"] == "healthy"
    assert body["rules"] == 3
    assert body["request_count"] == 1


def test_chat_completion_from_rule(client):
    response = client.post("/v1/chat/completions", json=chat("draft-a", "Describe the chart"))
    assert response.status_code == 200
    body = response.json()
    assert body["choices"][0]["message"]["content"] == "\\boxed{12}"
    assert body["choices"][0]["finish_reason"] == "stop"
    assert body["usage"] == {"prompt_tokens": 30, "completion_tokens": 4, "total_tokens": 34}


def test_unmatched_request_returns_digest(client):
    response = client.post("/v1/chat/completions", json=chat("draft-z", "Describe the chart"))
    assert response.status_code == 404
    error = response.json()["error"]
    assert error["digest"] == prompt_digest(None, "Describe the chart", [])
    assert error["model"] == "draft-z"


def test_injected_server_error(client):
    assert client.post("/v1/chat/completions", json=chat("draft-b", "anything")).status_code == 503


def test_non_positive_max_tokens_is_bad_request(client):
    response = client.post("/v1/chat/completions", json=chat("draft-a", "Describe", max_tokens=0))
    assert response.status_code == 400


def test_request_id_is_echoed(client):
    response = client.get("/health", headers={REQUEST_ID_HEADER: "abc-123"})
    assert response.headers[REQUEST_ID_HEADER] == "abc-123"


def test_score_route_returns_logprobs_verbatim(client):
    payload = {
        "model": "draft-c",
        "question": "How many bars?",
        "answer": "12",
        "image_b64": base64.b64encode(PIXEL_PNG).decode("ascii"),
    }
    response = client.post("/v1/score", json=payload)
    assert response.json() == {"model": "draft-c", "token_logprobs": [-0.5, -1.5, -1.0]}
    payload.pop("image_b64")
    assert client.post("/v1/score", json=payload).status_code == 400


def test_echo_completion_marks_answer_span(client):
    response = client.post("/v1/completions", json={
        "model": "draft-d", "prompt": "How many bars?\n12", "echo": True, "logprobs": 1, "max_tokens": 0,
    })
    logprobs = response.json()["choices"][0]["logprobs"]
    assert logprobs["tokens"][0] == "How many bars?\n"
    assert "".join(logprobs["tokens"][1:]) == "12"
    assert logprobs["token_logprobs"] == [None, -0.5, -1.5, -1.0]
    assert logprobs["text_offset"][1] == len("How many bars?\n")


def test_split_tokens_covers_text():
    pieces = split_tokens("Portugal", 3)
    assert "".join(piece for piece, _ in pieces) == "Portugal"
    assert [offset for _, offset in pieces] == [0, 3, 6]


def test_invalid_scenario():
    with pytest.raises(ScenarioError):
        parse_scenario([{"kind": "score", "contains": "q"}])


def test_port_in_use():
    blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    blocker.bind(("127.0.0.1", 0))
    blocker.listen()
    try:
        with pytest.raises(PortInUse):
            serve_mock(parse_scenario(RULES), port=blocker.getsockname()[1])
    finally:
        blocker.close()


def test_served_on_a_real_port():
    with serve_mock(parse_scenario(RULES), port=0) as handle:
        assert handle.port > 0
        assert handle.url.startswith("http://127.0.0.1:")
