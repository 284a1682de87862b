"""Readiness modules and the iterative evaluate -> check -> remediate loop.

A module binds one metric, one rule and one remedy. The loop evaluates the
metric, and while the rule is violated applies the remedy and re-evaluates,
stopping on compliance, an ineffective (changed=False) remedy, an emptied
table, or the iteration cap. The full trace is recorded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ConfigError, DuplicateName, EmptyPipeline, UnknownModule
from .metrics import MetricSpec, MetricValue, evaluate_metric
from .remedies import RemedySpec, STOCHASTIC_REMEDIES, apply_remedy
from .rules import Rule, RuleVerdict, evaluate_rule, parse_rule
from .table import DataTable

DEFAULT_MAX_ITERATIONS = 5

READY = "ready"
FLAGGED = "flagged"
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class ReadinessModule:
    """A bound (metric, rule, remedy) triple: the unit of customization."""

    module_id: str
    metric: MetricSpec
    rule: Rule
    remedy: RemedySpec
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self) -> None:
        if self.rule.metric_name != self.metric.kind:
            raise ConfigError(
                f"module {self.module_id!r}: rule targets {self.rule.metric_name!r} "
                f"but metric is {self.metric.kind!r}"
            )
        if self.max_iterations < 1:
            raise ConfigError(f"module {self.module_id!r}: max_iterations must be >= 1")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    metric_value: MetricValue
    verdict: RuleVerdict
    remedy_summary: dict[str, Any] | None = None


@dataclass(frozen=True)
class ReadinessOutcome:
    """Per-client record of one module's loop: trace, final verdict, and the
    remediated table (local only, never transmitted)."""

    module_id: str
    client_id: str
    trace: tuple[TraceEntry, ...]
    final_status: str
    table_after: DataTable


def run_readiness_loop(table: DataTable, module: ReadinessModule) -> ReadinessOutcome:
    """Run one module's loop on a table. Deterministic given remedy seeds."""
    client_id = table.meta.client_id
    trace: list[TraceEntry] = []
    current = table
    status = FLAGGED
    for iteration in range(1, module.max_iterations + 1):
        mv = evaluate_metric(current, module.metric)
        verdict = evaluate_rule(module.rule, mv)
        if not verdict.violated:
            trace.append(TraceEntry(iteration, mv, verdict))
            status = READY
            break
        if iteration == module.max_iterations:
            trace.append(TraceEntry(iteration, mv, verdict))
            status = FLAGGED
            break
        result = apply_remedy(current, module.remedy)
        trace.append(TraceEntry(iteration, mv, verdict, dict(result.summary)))
        current = result.table
        if result.summary.get("empty_result") or current.n_rows == 0:
            status = DEGENERATE
            break
        if not result.changed:
            status = FLAGGED
            break
    return ReadinessOutcome(module.module_id, client_id, tuple(trace), status, current)


def run_all_modules(table: DataTable, modules: list[ReadinessModule]) -> list[ReadinessOutcome]:
    """Run modules sequentially, each on the previous module's output table."""
    if not modules:
        raise EmptyPipeline("no modules to run")
    outcomes = []
    current = table
    for m in modules:
        outcome = run_readiness_loop(current, m)
        outcomes.append(outcome)
        current = outcome.table_after
    return outcomes


# -- registry -----------------------------------------------------------------

ModuleCtor = Callable[..., ReadinessModule]


@dataclass
class ModuleRegistry:
    """Named module constructors; the administrator extension surface."""

    ctors: dict[str, ModuleCtor] = field(default_factory=dict)

    def construct(
        self,
        name: str,
        module_id: str | None = None,
        rule: str | None = None,
        metric_args: dict[str, Any] | None = None,
        remedy_args: dict[str, Any] | None = None,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
    ) -> ReadinessModule:
        try:
            ctor = self.ctors[name]
        except KeyError:
            raise UnknownModule(f"no module named {name!r}") from None
        return ctor(
            module_id=module_id or name,
            rule=parse_rule(rule) if rule else None,
            metric_args=dict(metric_args or {}),
            remedy_args=dict(remedy_args or {}),
            max_iterations=max_iterations,
        )


def register_module(reg: ModuleRegistry, name: str, ctor: ModuleCtor) -> ModuleRegistry:
    if name in reg.ctors:
        raise DuplicateName(f"module {name!r} already registered")
    reg.ctors[name] = ctor
    return reg


def _builtin(
    metric_kind: str,
    remedy_kind: str,
    default_rule: str,
    default_remedy_args: dict[str, Any] | None = None,
    link_threshold_arg: str | None = None,
) -> ModuleCtor:
    def ctor(module_id, rule, metric_args, remedy_args, max_iterations) -> ReadinessModule:
        r = rule or parse_rule(default_rule)
        args = dict(default_remedy_args or {})
        args.update(remedy_args)
        if link_threshold_arg and link_threshold_arg not in args:
            args[link_threshold_arg] = r.threshold
        if remedy_kind in STOCHASTIC_REMEDIES:
            args.setdefault("rng_seed", 0)
        return ReadinessModule(
            module_id=module_id,
            metric=MetricSpec(metric_kind, metric_args),
            rule=r,
            remedy=RemedySpec(remedy_kind, args),
            max_iterations=max_iterations,
        )

    return ctor


def builtin_registry() -> ModuleRegistry:
    """Registry preloaded with the seven stock readiness modules."""
    reg = ModuleRegistry()
    register_module(reg, "noise_management",
                    _builtin("mean_magnitude", "remove_noisy_rows",
                             "mean_magnitude > 0.37",
                             link_threshold_arg="row_mean_threshold"))
    register_module(reg, "class_imbalance",
                    _builtin("imbalance_degree", "smote_oversample",
                             "imbalance_degree > 0", {"k_neighbors": 5}))
    register_module(reg, "duplicate_management",
                    _builtin("duplicate_proportion", "deduplicate",
                             "duplicate_proportion > 0"))
    register_module(reg, "memory_optimization",
                    _builtin("memory_usage_mb", "optimize_memory",
                             "memory_usage_mb > 1"))
    register_module(reg, "bias_statistical_parity",
                    _builtin("statistical_parity_diff", "stratified_resample",
                             "statistical_parity_diff > 0"))
    register_module(reg, "bias_representation",
                    _builtin("representation_rate_diff", "stratified_resample",
                             "representation_rate_diff > 0"))
    register_module(reg, "outlier_management",
                    _builtin("outlier_proportion_iqr", "clip_outliers_iqr",
                             "outlier_proportion_iqr > 0"))
    register_module(reg, "k_anonymity",
                    _builtin("k_anonymity_level", "suppress_low_anonymity",
                             "k_anonymity_level <= 1", {"target_k": 2}))
    return reg
