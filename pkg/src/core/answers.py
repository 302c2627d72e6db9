"""
Answer extraction and normalization for free-form model output.
"""

import hashlib
import json
import re
from typing import Optional, Sequence

from .models import AnswerFormat

BOXED_MARKER = "\\boxed{"
TEXT_MARKER = "\\text{"

_TAGGED_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_LETTER_RE = re.compile(r"(?<![A-Za-z0-9])\(?([A-H])\)?\.?(?![A-Za-z0-9])")
_WRAPPED_LETTER_RE = re.compile(r"\(\s*([A-H])\s*\)")
_STATED_LETTER_RE = re.compile(r"(?:\bis|:)\s*([A-H])(?![A-Za-z0-9])")
_ARTICLE_FOLLOWS_RE = re.compile(r"\s+[a-z]")
_QUOTE_PAIRS = {'"': '"', "'": "'", "“": "”", "‘": "’", "`": "`"}


def _balanced_content(text: str, start: int) -> Optional[str]:
    """Content between the brace opened just before `start` and its partner"""
    depth = 1
    for pos in range(start, len(text)):
        char = text[pos]
        if char == "{":
            depth += 1
        elif char == "}":
            depth -= 1
            if depth == 0:
                return text[start:pos]
    return None


def _unwrap(content: str) -> str:
    content = content.strip()
    while True:
        for marker in (BOXED_MARKER, TEXT_MARKER):
            if content.startswith(marker):
                inner = _balanced_content(content, len(marker))
                if inner is not None and len(inner) + len(marker) + 1 == len(content):
                    content = inner.strip()
                    break
        else:
            return content


def extract_boxed(raw_text: str) -> Optional[str]:
    """Innermost content of the last closed \\boxed{...}"""
    pos = raw_text.rfind(BOXED_MARKER)
    while pos != -1:
        content = _balanced_content(raw_text, pos + len(BOXED_MARKER))
        if content is not None:
            answer = _unwrap(content).replace("\\%", "%").strip()
            return answer or None
        pos = raw_text.rfind(BOXED_MARKER, 0, pos)
    return None


def extract_tagged(raw_text: str) -> Optional[str]:
    """Content of the last closed <answer>...</answer> block"""
    matches = _TAGGED_RE.findall(raw_text)
    if not matches:
        return None
    return matches[-1].strip() or None


def _line_letter(line: str) -> Optional[str]:
    """Option letter committed on one line, None when the line names none"""
    for pattern in (_WRAPPED_LETTER_RE, _STATED_LETTER_RE):
        matches = pattern.findall(line)
        if matches:
            return matches[-1]
    for match in _LETTER_RE.finditer(line):
        # the article "A" opening a phrase is not an option
        if match.group(0) == "A" and _ARTICLE_FOLLOWS_RE.match(line, match.end()):
            continue
        return match.group(1)
    return None


def extract_letter(raw_text: str) -> Optional[str]:
    """Option letter on the last line that has one

    Within a line a parenthesised letter wins over "is X" / "answer: X",
    which wins over the first bare capital.
    """
    # a boxed answer is the explicit commitment, scan it first
    boxed = extract_boxed(raw_text)
    scan = boxed if boxed is not None else raw_text
    for line in reversed(scan.splitlines()):
        letter = _line_letter(line)
        if letter:
            return letter
    return None


def extract_answer(raw_text: str, answer_format: AnswerFormat) -> Optional[str]:
    """Pull the committed answer out of model output, None when no marker is present"""
    if not raw_text:
        return None
    if answer_format == AnswerFormat.BOXED:
        return extract_boxed(raw_text)
    if answer_format == AnswerFormat.TAGGED:
        return extract_tagged(raw_text)
    return extract_letter(raw_text)


def _strip_quotes(text: str) -> str:
    if len(text) >= 2 and _QUOTE_PAIRS.get(text[0]) == text[-1]:
        return text[1:-1]
    return text


def normalize_answer(raw: str) -> str:
    """Case-fold, collapse whitespace and strip surrounding quotes until stable"""
    current = raw
    while True:
        collapsed = _strip_quotes(" ".join(current.split()))
        if collapsed == current:
            return current.casefold()
        current = collapsed


def image_digest(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def prompt_digest(system: Optional[str], user: str, image_digests: Sequence[str] = ()) -> str:
    """Content hash of a prompt exactly as it goes on the wire"""
    canonical = json.dumps(
        {"system": system, "user": user, "images": list(image_digests)},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def params_digest(**params) -> str:
    canonical = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
