"""Declarative threshold rules over metric values.

A rule is data, not code: ``<metric> <op> <number>``. The comparator holding
on (observed, threshold) means the rule is violated and the paired remedy
should run. Comparisons are exact: thresholds like ``> 0`` are strict
triggers with no epsilon.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

from .errors import MetricMismatch, RuleSyntaxError
from .metrics import MetricValue

_COMPARATORS: dict[str, Callable[[float, float], bool]] = {
    ">": lambda v, t: v > t,
    ">=": lambda v, t: v >= t,
    "<": lambda v, t: v < t,
    "<=": lambda v, t: v <= t,
    "==": lambda v, t: v == t,
    "!=": lambda v, t: v != t,
}

_RULE_RE = re.compile(
    r"^\s*([A-Za-z_][A-Za-z0-9_.]*)\s*(>=|<=|==|!=|>|<)\s*"
    r"([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*$"
)


@dataclass(frozen=True)
class Rule:
    """Violation predicate: ``comparator(observed, threshold)`` holds."""

    metric_name: str
    comparator: str
    threshold: float

    def __post_init__(self) -> None:
        if self.comparator not in _COMPARATORS:
            raise RuleSyntaxError(f"unknown comparator {self.comparator!r}")
        object.__setattr__(self, "threshold", float(self.threshold))
        if not math.isfinite(self.threshold):
            raise RuleSyntaxError("threshold must be finite")


@dataclass(frozen=True)
class RuleVerdict:
    rule: Rule
    observed: float
    violated: bool


def evaluate_rule(rule: Rule, metric: MetricValue) -> RuleVerdict:
    """Check a metric value against a rule; names must match."""
    if metric.name != rule.metric_name:
        raise MetricMismatch(
            f"rule is for {rule.metric_name!r}, metric is {metric.name!r}"
        )
    violated = _COMPARATORS[rule.comparator](metric.value, rule.threshold)
    return RuleVerdict(rule, metric.value, violated)


def parse_rule(expr: str) -> Rule:
    """Parse ``<metric> <op> <number>`` into a Rule."""
    m = _RULE_RE.match(expr)
    if m is None:
        raise RuleSyntaxError(f"cannot parse rule expression {expr!r}")
    name, op, threshold = m.groups()
    return Rule(name, op, float(threshold))


def render_rule(rule: Rule) -> str:
    """Canonical text form; ``parse_rule(render_rule(r)) == r``."""
    t = rule.threshold
    text = repr(int(t)) if t == int(t) and abs(t) < 1e15 else repr(t)
    return f"{rule.metric_name} {rule.comparator} {text}"


def rule_to_json(rule: Rule) -> dict:
    return {"metric": rule.metric_name, "op": rule.comparator, "threshold": rule.threshold}


def rule_from_json(obj: dict) -> Rule:
    try:
        return Rule(obj["metric"], obj["op"], float(obj["threshold"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise RuleSyntaxError(f"bad rule object: {exc}") from None
