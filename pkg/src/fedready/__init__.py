"""Customizable data-readiness engine for federated settings.

Clients evaluate administrator-defined metrics locally, apply threshold rules
and remedies until their data meets the configured standards, and a server
aggregates privacy-preserving readiness reports.
"""

from .engine import (
    ModuleRegistry,
    ReadinessModule,
    ReadinessOutcome,
    builtin_registry,
    register_module,
    run_all_modules,
    run_readiness_loop,
)
from .metrics import MetricSpec, MetricValue, evaluate_metric, register_metric
from .remedies import RemedyResult, RemedySpec, apply_remedy, register_remedy
from .rules import Rule, RuleVerdict, evaluate_rule, parse_rule, render_rule
from .table import Column, ColumnKind, DataTable, DatasetMeta, load_table, save_table

__version__ = "0.1.0"

__all__ = [
    "Column",
    "ColumnKind",
    "DataTable",
    "DatasetMeta",
    "MetricSpec",
    "MetricValue",
    "ModuleRegistry",
    "ReadinessModule",
    "ReadinessOutcome",
    "RemedyResult",
    "RemedySpec",
    "Rule",
    "RuleVerdict",
    "apply_remedy",
    "builtin_registry",
    "evaluate_metric",
    "evaluate_rule",
    "load_table",
    "parse_rule",
    "register_metric",
    "register_module",
    "register_remedy",
    "render_rule",
    "run_all_modules",
    "run_readiness_loop",
    "save_table",
]
