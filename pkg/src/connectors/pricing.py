"""
Token pricing.
"""

from ..core.config import Pricing
from ..core.models import TokenUsage

COST_DECIMALS = 6


def raw_cost(usage: TokenUsage, pricing: Pricing) -> float:
    return (
        usage.prompt_tokens * pricing.input_per_million / 1e6
        + usage.completion_tokens * pricing.output_per_million / 1e6
    )


def estimate_cost(usage: TokenUsage, pricing: Pricing) -> float:
    """Dollar cost of one usage record, rounded for reporting"""
    return round(raw_cost(usage, pricing), COST_DECIMALS)
