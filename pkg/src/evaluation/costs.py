"""
Dollar cost ledger over the generation records of a run.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

from ..connectors.pricing import COST_DECIMALS, estimate_cost
from ..core.config import Pricing, RunConfig
from ..core.models import SampleOutcome, TokenUsage
from .reports import SCHEMA_VERSION, render_table

logger = logging.getLogger(__name__)

VERDICT_STAGE = "verdict"


@dataclass
class CostReport:
    """Per-model totals and mean verdict cost per sample"""
    per_model: Dict[str, float] = field(default_factory=dict)
    usage: Dict[str, TokenUsage] = field(default_factory=dict)
    total: float = 0.0
    verdict_mean_per_sample: float = 0.0
    n_samples: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_samples": self.n_samples,
            "total": self.total,
            "verdict_mean_per_sample": self.verdict_mean_per_sample,
            "per_model": dict(self.per_model),
            "usage": {name: u.to_dict() for name, u in self.usage.items()},
        }


def pricing_table(config: Optional[RunConfig]) -> Dict[str, Pricing]:
    if config is None:
        return {}
    table = {spec.name: spec.pricing for spec in config.pool}
    table[config.verdict.name] = config.verdict.pricing
    return table


def report_costs(outcomes: Sequence[SampleOutcome], config: Optional[RunConfig]) -> CostReport:
    """Aggregate estimate_cost over every record of every outcome"""
    prices = pricing_table(config)
    report = CostReport(n_samples=len(outcomes))
    verdict_costs = []
    unpriced = set()

    for outcome in sorted(outcomes, key=lambda o: o.sample_id):
        for record in outcome.records:
            pricing = prices.get(record.model)
            if pricing is None:
                unpriced.add(record.model)
                pricing = Pricing()
            cost = estimate_cost(record.usage, pricing)
            report.per_model[record.model] = report.per_model.get(record.model, 0.0) + cost
            report.usage[record.model] = report.usage.get(record.model, TokenUsage()) + record.usage
            if record.stage == VERDICT_STAGE:
                verdict_costs.append(cost)

    for name in unpriced:
        logger.warning(f"No pricing configured for model {name}, counted as free")

    report.per_model = {name: round(cost, COST_DECIMALS) for name, cost in sorted(report.per_model.items())}
    report.usage = dict(sorted(report.usage.items()))
    report.total = round(sum(report.per_model.values()), COST_DECIMALS)
    if verdict_costs:
        report.verdict_mean_per_sample = round(sum(verdict_costs) / len(verdict_costs), COST_DECIMALS)
    return report


def format_costs(report: CostReport) -> str:
    rows = [
        [name, report.usage[name].prompt_tokens, report.usage[name].completion_tokens, f"{cost:.6f}"]
        for name, cost in report.per_model.items()
    ]
    table = render_table(["model", "prompt_tokens", "completion_tokens", "usd"], rows)
    return (f"Costs, {report.n_samples} samples\n{table}\n"
            f"total ${report.total:.6f}, verdict mean per sample ${report.verdict_mean_per_sample:.6f}")
