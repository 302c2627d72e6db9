"""
Shared fixtures: the bundled demo scenario, a synthetic agreement scenario
and in-process mock servers to replay them against.
"""
import base64
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, List

import pytest

# Add the project root to the Python path
ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from src.core.config import RunConfig, parse_run_config
from src.harness.manifest import Manifest, ingest_manifest
from src.mock.scenario import Scenario, load_scenario, parse_scenario
from src.mock.server import serve_mock

DEMO_DIR = ROOT / "demo"
PIXEL_PNG = base64.b64decode(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAQAAAC1HAwCAAAAC0lEQVR42mNkYAAAAAYAAjCB0C8AAAAASUVORK5CYII="
)
POOL = ["draft-a", "draft-b", "draft-c", "draft-d", "draft-e"]

FIG3_ID = "survey-online-share"
FIG8_ID = "renewables-leader"


def write_image(path: Path, payload: bytes = PIXEL_PNG) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return path


def write_manifest(path: Path, entries: List[Dict[str, Any]], benchmark: str = "ChartQAPro") -> Path:
    lines = [json.dumps({"benchmark": benchmark})] + [json.dumps(entry) for entry in entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def pool_config(url: str, **overrides: Any) -> RunConfig:
    """Five score-route drafts plus a chat verdict, all on one mock server"""
    data: Dict[str, Any] = {
        "pool": [
            {"name": name, "base_url": url, "max_retries": 2, "retry_backoff": 0, "request_timeout": 5}
            for name in POOL
        ],
        "verdict": {"name": "verdict", "base_url": url, "supports_scoring": "none",
                    "pricing": {"input_per_million": 2.5, "output_per_million": 10.0}},
        "m": 3,
        "max_concurrency": 4,
    }
    data.update(overrides)
    return RunConfig.model_validate(data)


# Synthetic scenario: three members always agree on the gold answer, two
# give distinct wrong answers, and the verdict is right whenever a gold
# answer reaches it. Each sample costs 24 requests.

def synthetic_question(index: int) -> str:
    return f"Synthetic question {index}: which label is highlighted?"


def synthetic_gold(index: int) -> str:
    return f"gold{index}"


def synthetic_answers(index: int) -> List[str]:
    gold = synthetic_gold(index)
    return [gold, gold, gold, f"wrong{index}d", f"wrong{index}e"]


def synthetic_scenario(n: int) -> Scenario:
    rules: List[Dict[str, Any]] = []
    for index in range(n):
        question = synthetic_question(index)
        gold = synthetic_gold(index)
        rules.append({"kind": "score", "contains": question, "answer": gold, "token_logprobs": [-0.2]})
        rules.append({"kind": "score", "contains": question, "token_logprobs": [-2.0]})
        for name, answer in zip(POOL, synthetic_answers(index)):
            rules.append({
                "model": name, "kind": "generate", "contains": [question, "Answer the question using"],
                "response_text": f"\\boxed{{{answer}}}", "usage": {"prompt_tokens": 100, "completion_tokens": 5},
            })
            rules.append({
                "model": name, "kind": "generate", "contains": [question, "<think>"],
                "response_text": f"<think>\nThe highlighted label reads {answer}.\n</think>\n<answer>{answer}</answer>",
                "usage": {"prompt_tokens": 150, "completion_tokens": 20},
            })
        rules.append({
            "model": "verdict", "kind": "generate", "contains": [question, f"Proposed Answer: {gold}\n"],
            "response_text": f"\\boxed{{{gold}}}", "usage": {"prompt_tokens": 2400, "completion_tokens": 80},
        })
        # bare verdict, answering from the reasoning prompt: right on even samples only
        bare = gold if index % 2 == 0 else f"wrong{index}d"
        rules.append({
            "model": "verdict", "kind": "generate",
            "contains": [question, "Please answer the question using the chart image."],
            "response_text": f"<think>\nLooking at the chart.\n</think>\n<answer>{bare}</answer>",
            "usage": {"prompt_tokens": 900, "completion_tokens": 40},
        })
        rules.append({
            "model": "verdict", "kind": "generate", "contains": question,
            "response_text": f"\\boxed{{wrong{index}d}}", "usage": {"prompt_tokens": 2400, "completion_tokens": 80},
        })
    return parse_scenario({"rules": rules})


def synthetic_manifest(tmp_path: Path, n: int) -> Manifest:
    data_dir = tmp_path / "data"
    write_image(data_dir / "chart.png")
    entries = [
        {"id": f"s{index:03d}", "question": synthetic_question(index), "image_path": "chart.png",
         "gold_answers": [synthetic_gold(index)], "question_type": "Factoid"}
        for index in range(n)
    ]
    return ingest_manifest(write_manifest(data_dir / "manifest.jsonl", entries))


@pytest.fixture
def demo_scenario() -> Scenario:
    return load_scenario(DEMO_DIR / "scenario.json")


@pytest.fixture
def demo_manifest() -> Manifest:
    return ingest_manifest(DEMO_DIR / "manifest.jsonl")


@pytest.fixture
def demo_server(demo_scenario):
    handle = serve_mock(demo_scenario, port=0)
    yield handle
    handle.stop()


@pytest.fixture
def demo_config(demo_server) -> RunConfig:
    text = (DEMO_DIR / "config.yaml").read_text(encoding="utf-8")
    return parse_run_config(text, environ={**os.environ, "SVERDICT_MOCK_URL": demo_server.url})


@pytest.fixture
def synthetic_server():
    handle = serve_mock(synthetic_scenario(20), port=0)
    yield handle
    handle.stop()


@pytest.fixture
def image_file(tmp_path) -> Path:
    return write_image(tmp_path / "img.png")
