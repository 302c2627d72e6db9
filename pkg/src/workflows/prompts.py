"""
Speculative Verdict Harness - Prompt Templates

Reasoning and verdict templates are kept as format strings in their
published form, so ``\\\\boxed{{}}`` renders as ``\\boxed{}``. Verdict
prompts enumerate the experts in selection order and compact the
numbering when an expert failed.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from ..core.config import ApiStyle, RunConfig
from ..core.exceptions import NoPaths
from ..core.models import AnswerFormat, BenchmarkKind, ReasoningPath, Sample, VerdictInput, VerdictVisual

logger = logging.getLogger(__name__)


STEP_BY_STEP_TEMPLATE = (
    "Question: {QUESTION} Please think step-by-step about the image to answer the question "
    "using a single word or phrase enclosed within \\boxed{{}}."
)

REASONING_FORMAT_BLOCK = (
    "Please first generate your reasoning process and then provide the user with the answer. "
    "Use the following format:\n"
    "\n"
    "<think>\n"
    "... your thinking process here ... \n"
    "</think> \n"
    "<answer> \n"
    "... your final answer (entity(s) or number) ...\n"
    "</answer>"
)

CHARTMUSEUM_TEMPLATE = (
    "Please answer the question using the chart image.\n"
    "\n"
    "Question: {QUESTION}\n"
    "\n"
) + REASONING_FORMAT_BLOCK

CHARTQAPRO_TYPE_TEMPLATES = {
    "Factoid": "Please answer the question using the chart image.\n\nQuestion: {QUESTION}",
    "Multi Choice": (
        "Please answer the multiple-choice question using the chart image. "
        "Select the correct option.\n\nQuestion: {QUESTION}"
    ),
    "Conversational": (
        "Please answer the last question of the conversation using the chart image.\n\n"
        "Conversation: {QUESTION}"
    ),
    "Fact Checking": (
        "Please check the claim using the chart image. Answer with True or False.\n\nClaim: {QUESTION}"
    ),
    "Hypothetical": "Please answer the hypothetical question using the chart image.\n\nQuestion: {QUESTION}",
}
DEFAULT_CHARTQAPRO_TYPE = "Factoid"

DIRECT_ANSWER_TEMPLATE = (
    "Question: {QUESTION} Answer the question using a single word or phrase enclosed within \\boxed{{}}."
)
DIRECT_LETTER_TEMPLATE = (
    "Question: {QUESTION} Answer with the option's letter enclosed within \\boxed{{}}."
)

VERDICT_SYSTEM_PROMPT = "You are a vision-and-language judge. Follow the instructions strictly."

VERDICT_QUESTION_TEMPLATE = "Question: \n{QUESTION}\n"
VERDICT_PATH_BLOCK = "--- Model {INDEX} ---\nReasoning: \n{REASONING}\nProposed Answer: {ANSWER}\n"
VERDICT_ANSWER_BLOCK = "--- Model {INDEX} ---\nProposed Answer: {ANSWER}\n"

VERDICT_INSTRUCTIONS = {
    BenchmarkKind.INFOGRAPHIC_VQA: "please give the final answer using a single word or phrase enclosed within \\boxed{{}}.",
    BenchmarkKind.CHARTMUSEUM: "please give the final answer using a single word or phrase enclosed within \\boxed{{}}.",
    BenchmarkKind.CHARTQAPRO: "please directly give the final answer enclosed within \\boxed{{}}.",
    BenchmarkKind.HRBENCH: "please directly give the final answer with the option's letter enclosed within \\boxed{{}}.",
    BenchmarkKind.CUSTOM: "please give the final answer using a single word or phrase enclosed within \\boxed{{}}.",
}

_COUNT_WORDS = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"]


@dataclass
class VerdictPrompt:
    """Everything the single verdict call receives"""
    system: Optional[str]
    user: str
    images: List[str] = field(default_factory=list)


def count_word(n: int) -> str:
    return _COUNT_WORDS[n] if 0 <= n < len(_COUNT_WORDS) else str(n)


def chartqapro_type_prompt(sample: Sample, config: RunConfig) -> str:
    templates = {**CHARTQAPRO_TYPE_TEMPLATES, **config.chartqapro_templates}
    question_type = sample.question_type or DEFAULT_CHARTQAPRO_TYPE
    if question_type not in templates:
        logger.warning(f"No ChartQAPro template for type '{question_type}', using {DEFAULT_CHARTQAPRO_TYPE}")
        question_type = DEFAULT_CHARTQAPRO_TYPE
    return templates[question_type].format(QUESTION=sample.question)


def reasoning_prompt(sample: Sample, config: RunConfig) -> str:
    """Chain-of-thought prompt for a draft expert"""
    if sample.benchmark == BenchmarkKind.CHARTMUSEUM:
        return CHARTMUSEUM_TEMPLATE.format(QUESTION=sample.question)
    if sample.benchmark == BenchmarkKind.CHARTQAPRO:
        return f"{chartqapro_type_prompt(sample, config)}\n\n{REASONING_FORMAT_BLOCK}"
    return STEP_BY_STEP_TEMPLATE.format(QUESTION=sample.question)


def answer_prompt(sample: Sample) -> str:
    """Short-answer prompt of the candidate round"""
    if sample.benchmark == BenchmarkKind.HRBENCH:
        return DIRECT_LETTER_TEMPLATE.format(QUESTION=sample.question)
    return DIRECT_ANSWER_TEMPLATE.format(QUESTION=sample.question)


def answer_prompt_format(sample: Sample) -> AnswerFormat:
    return AnswerFormat.LETTER if sample.benchmark == BenchmarkKind.HRBENCH else AnswerFormat.BOXED


def _evidence_clause(n_images: int, n_models: int, verdict_input: VerdictInput) -> str:
    items = []
    if n_images >= 2:
        items.extend(["the raw image", "the layout-annotated image"])
    elif n_images == 1:
        items.append("the image")
    items.append("the question")
    evidence = "reasoning" if verdict_input == VerdictInput.REASONING_PATHS else "answers"
    noun = "model" if n_models == 1 else "models"
    items.append(f"the {evidence} from {count_word(n_models)} {noun}")
    if len(items) == 2:
        return " and ".join(items)
    return ", ".join(items[:-1]) + ", and " + items[-1]


def verdict_instruction(benchmark: BenchmarkKind, n_images: int, n_models: int, verdict_input: VerdictInput) -> str:
    """Closing sentence of the verdict user prompt"""
    clause = _evidence_clause(n_images, n_models, verdict_input)
    return f"Given {clause}, {VERDICT_INSTRUCTIONS[benchmark].format()}"


def verdict_user_prompt(
    question: str,
    entries: Sequence[Tuple[str, Optional[str]]],
    benchmark: BenchmarkKind,
    verdict_input: VerdictInput,
    n_images: int,
) -> str:
    """User prompt over (reasoning, answer) entries, numbered 1..n"""
    parts = [VERDICT_QUESTION_TEMPLATE.format(QUESTION=question)]
    for index, (reasoning, answer) in enumerate(entries, start=1):
        if verdict_input == VerdictInput.ANSWERS_ONLY:
            parts.append(VERDICT_ANSWER_BLOCK.format(INDEX=index, ANSWER=answer or ""))
        else:
            parts.append(VERDICT_PATH_BLOCK.format(INDEX=index, REASONING=reasoning.strip(), ANSWER=answer or ""))
    parts.append(verdict_instruction(benchmark, n_images, len(entries), verdict_input))
    return "".join(parts)


def verdict_images(sample: Sample, visual: VerdictVisual) -> List[str]:
    if visual == VerdictVisual.NONE:
        return []
    if visual == VerdictVisual.IMAGE_PLUS_AUX and sample.aux_image:
        return [sample.image, sample.aux_image]
    return [sample.image]


def assemble_verdict_prompt(sample: Sample, paths: Sequence[ReasoningPath], config: RunConfig) -> VerdictPrompt:
    """System text, user text and image references for the verdict call"""
    usable = [path for path in paths if path.ok]
    if config.verdict_input == VerdictInput.ANSWERS_ONLY:
        usable = [path for path in paths if path.extracted]
    if not usable:
        raise NoPaths(f"no reasoning paths to forward to the verdict for sample {sample.id}")

    images = verdict_images(sample, config.verdict_visual)
    entries = [(path.cot_text, path.extracted) for path in usable]
    user = verdict_user_prompt(sample.question, entries, sample.benchmark, config.verdict_input, len(images))

    verdict = config.verdict
    if verdict.api_style == ApiStyle.COMPLETIONS or not verdict.system_role:
        return VerdictPrompt(system=None, user=f"{VERDICT_SYSTEM_PROMPT}\n{user}", images=images)
    return VerdictPrompt(system=VERDICT_SYSTEM_PROMPT, user=user, images=images)
