"""Data-readiness metrics: pure functions DataTable -> MetricValue.

Each metric is deterministic in (table, args) and returns a finite scalar plus
auxiliary detail (per-class counts, per-group rates, IQR bounds, ...). Degenerate
inputs produce the documented sentinel values rather than NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import DuplicateName, EmptyInput, SchemaError
from .table import Column, DataTable, numeric_values


@dataclass(frozen=True)
class MetricValue:
    """A named scalar measurement with auxiliary detail."""

    name: str
    value: float
    detail: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", float(self.value))
        if not math.isfinite(self.value):
            raise ValueError(f"metric {self.name!r} produced non-finite value")


@dataclass(frozen=True)
class MetricSpec:
    """A metric kind plus its evaluation arguments, as configured."""

    kind: str
    args: dict[str, Any] = field(default_factory=dict)


def _selected_numeric(t: DataTable, args: dict[str, Any]) -> list[Column]:
    names = args.get("columns")
    if names is None:
        return t.numeric_columns()
    cols = [t.column(n) for n in names]
    for c in cols:
        if not c.kind.is_numeric:
            raise SchemaError(f"column {c.name!r} is not numeric")
    return cols


def mean_magnitude(t: DataTable, args: dict[str, Any] | None = None) -> MetricValue:
    """Mean of |x| over all non-missing numeric cells.

    Detail carries per-row means of |x| (the statistic the noisy-row remedy
    thresholds on) and the total cell count.
    """
    args = args or {}
    cols = _selected_numeric(t, args)
    if not cols or t.n_rows == 0:
        raise EmptyInput("mean_magnitude needs at least one numeric cell")
    total = 0.0
    count = 0
    row_sums = np.zeros(t.n_rows)
    row_counts = np.zeros(t.n_rows)
    for c in cols:
        arr = np.array([np.nan if v is None else v for v in c.values], dtype=np.float64)
        present = ~np.isnan(arr)
        mags = np.abs(np.where(present, arr, 0.0))
        row_sums += mags
        row_counts += present
        total += float(mags.sum())
        count += int(present.sum())
    if count == 0:
        raise EmptyInput("mean_magnitude needs at least one numeric cell")
    row_means = np.where(row_counts > 0, row_sums / np.maximum(row_counts, 1), 0.0)
    return MetricValue(
        "mean_magnitude",
        total / count,
        {"row_means": [float(v) for v in row_means], "cell_count": count},
    )


def imbalance_degree(t: DataTable, args: dict[str, Any] | None = None) -> MetricValue:
    """Half the L1 distance between the empirical class distribution and
    uniform over the observed classes. Zero iff perfectly balanced."""
    if t.meta.label_column is None:
        raise SchemaError("imbalance_degree requires meta.label_column")
    labels = [v for v in t.column(t.meta.label_column).values if v is not None]
    if not labels:
        raise EmptyInput("no observed labels")
    counts: dict[str, int] = {}
    for v in labels:
        counts[str(v)] = counts.get(str(v), 0) + 1
    c = len(counts)
    n = len(labels)
    value = 0.5 * sum(abs(k / n - 1.0 / c) for k in counts.values())
    detail: dict[str, Any] = {"class_counts": dict(sorted(counts.items())), "n_classes": c}
    if c == 1:
        detail["single_class"] = True
    return MetricValue("imbalance_degree", value, detail)


def duplicate_proportion(t: DataTable, args: dict[str, Any] | None = None) -> MetricValue:
    """(n_rows - n_distinct_rows) / n_rows under full-row equality."""
    if t.n_rows == 0:
        raise EmptyInput("duplicate_proportion needs at least one row")
    seen: dict[tuple, list[int]] = {}
    for i, row in enumerate(t.iter_rows()):
        seen.setdefault(row, []).append(i)
    n_distinct = len(seen)
    groups = sorted(idx for idx in seen.values() if len(idx) > 1)
    return MetricValue(
        "duplicate_proportion",
        (t.n_rows - n_distinct) / t.n_rows,
        {"n_distinct": n_distinct, "duplicate_groups": groups},
    )


def memory_usage_mb(t: DataTable, args: dict[str, Any] | None = None) -> MetricValue:
    """Payload bytes to store the table, in MiB: n_rows x byte-width per
    numeric column plus total UTF-8 length per categorical column."""
    per_column: dict[str, int] = {}
    for c in t.columns:
        if c.kind.is_numeric:
            per_column[c.name] = t.n_rows * c.kind.byte_width
        else:
            per_column[c.name] = sum(
                len(v.encode("utf-8")) for v in c.values if v is not None
            )
    total = sum(per_column.values())
    return MetricValue(
        "memory_usage_mb",
        total / 2**20,
        {"column_bytes": per_column, "total_bytes": total},
    )


def _group_rows(t: DataTable) -> dict[str, list[int]]:
    col = t.column(t.meta.sensitive_feature)  # type: ignore[arg-type]
    groups: dict[str, list[int]] = {}
    for i, v in enumerate(col.values):
        if v is None:
            continue
        groups.setdefault(str(v), []).append(i)
    return groups


def statistical_parity_diff(t: DataTable, args: dict[str, Any] | None = None) -> MetricValue:
    """Spread of positive-label rates across sensitive groups:
    max_g P(Y=pos | A=g) - min_g P(Y=pos | A=g)."""
    m = t.meta
    if m.sensitive_feature is None or m.label_column is None or m.positive_label is None:
        raise SchemaError(
            "statistical_parity_diff requires sensitive_feature, label_column "
            "and positive_label in meta"
        )
    groups = _group_rows(t)
    if not groups:
        raise EmptyInput("no observed sensitive groups")
    labels = t.column(m.label_column).values
    rates: dict[str, float] = {}
    counts: dict[str, int] = {}
    for g, idx in groups.items():
        pos = sum(1 for i in idx if labels[i] == m.positive_label)
        rates[g] = pos / len(idx)
        counts[g] = len(idx)
    detail: dict[str, Any] = {
        "group_positive_rate": dict(sorted(rates.items())),
        "group_counts": dict(sorted(counts.items())),
    }
    if len(groups) == 1:
        detail["single_group"] = True
        return MetricValue("statistical_parity_diff", 0.0, detail)
    value = max(rates.values()) - min(rates.values())
    return MetricValue("statistical_parity_diff", value, detail)


def representation_rate_diff(t: DataTable, args: dict[str, Any] | None = None) -> MetricValue:
    """Spread of group membership proportions across observed sensitive groups.

    With a single observed group the value is 1.0 when ``declared_groups``
    (metric args) names at least two expected groups (the absent group is
    maximally under-represented) and 0.0 otherwise.
    """
    args = args or {}
    if t.meta.sensitive_feature is None:
        raise SchemaError("representation_rate_diff requires meta.sensitive_feature")
    groups = _group_rows(t)
    if not groups:
        raise EmptyInput("no observed sensitive groups")
    total = sum(len(idx) for idx in groups.values())
    rates = {g: len(idx) / total for g, idx in groups.items()}
    detail: dict[str, Any] = {
        "group_rate": dict(sorted(rates.items())),
        "group_counts": {g: len(idx) for g, idx in sorted(groups.items())},
    }
    declared = args.get("declared_groups")
    if declared is not None:
        detail["declared_groups"] = [str(g) for g in declared]
    if len(groups) == 1:
        detail["single_group"] = True
        value = 1.0 if declared is not None and len(declared) >= 2 else 0.0
        return MetricValue("representation_rate_diff", value, detail)
    value = max(rates.values()) - min(rates.values())
    return MetricValue("representation_rate_diff", value, detail)


def quantile_linear(sorted_vals: np.ndarray, q: float) -> float:
    """Linear-interpolation quantile between order statistics (the fixed
    method; IQR outlier counts depend on it)."""
    n = sorted_vals.size
    if n == 1:
        return float(sorted_vals[0])
    h = (n - 1) * q
    lo = int(math.floor(h))
    hi = min(lo + 1, n - 1)
    frac = h - lo
    return float(sorted_vals[lo] + frac * (sorted_vals[hi] - sorted_vals[lo]))


def iqr_bounds(vals: np.ndarray) -> tuple[float, float]:
    """[Q1 - 1.5*IQR, Q3 + 1.5*IQR] with linear-interpolation quartiles."""
    s = np.sort(vals)
    q1 = quantile_linear(s, 0.25)
    q3 = quantile_linear(s, 0.75)
    iqr = q3 - q1
    return q1 - 1.5 * iqr, q3 + 1.5 * iqr


def outlier_proportion_iqr(t: DataTable, args: dict[str, Any] | None = None) -> MetricValue:
    """Fraction of numeric cells lying strictly outside their column's IQR
    fences. Columns with fewer than 4 non-missing values do not participate."""
    args = args or {}
    bounds: dict[str, list[float]] = {}
    outliers = 0
    cells = 0
    for c in _selected_numeric(t, args):
        vals = numeric_values(c)
        if vals.size < 4:
            continue
        lo, hi = iqr_bounds(vals)
        bounds[c.name] = [lo, hi]
        outliers += int(np.sum((vals < lo) | (vals > hi)))
        cells += vals.size
    if cells == 0:
        raise EmptyInput("outlier_proportion_iqr needs a numeric column with >= 4 values")
    return MetricValue(
        "outlier_proportion_iqr",
        outliers / cells,
        {"column_bounds": bounds, "outlier_cells": outliers, "total_cells": cells},
    )


def qi_tuples(t: DataTable) -> list[tuple]:
    qi_cols = [t.column(name) for name in t.meta.quasi_identifiers]
    return [tuple(c.values[i] for c in qi_cols) for i in range(t.n_rows)]


def k_anonymity_level(t: DataTable, args: dict[str, Any] | None = None) -> MetricValue:
    """Size of the smallest quasi-identifier equivalence class."""
    if not t.meta.quasi_identifiers:
        raise SchemaError("k_anonymity_level requires meta.quasi_identifiers")
    if t.n_rows == 0:
        raise EmptyInput("k_anonymity_level needs at least one row")
    sizes: dict[tuple, int] = {}
    for key in qi_tuples(t):
        sizes[key] = sizes.get(key, 0) + 1
    histogram: dict[str, int] = {}
    for s in sizes.values():
        histogram[str(s)] = histogram.get(str(s), 0) + 1
    return MetricValue(
        "k_anonymity_level",
        float(min(sizes.values())),
        {"group_size_histogram": dict(sorted(histogram.items(), key=lambda kv: int(kv[0]))),
         "n_groups": len(sizes)},
    )


def standard_metrics(t: DataTable) -> list[MetricValue]:
    """Baseline measurements for any table: sample size, overall missing
    fraction, and mean/median/std dev per numeric column."""
    out = [MetricValue("sample_size", float(t.n_rows))]
    total_cells = t.n_rows * len(t.columns)
    missing = sum(c.missing_count() for c in t.columns)
    out.append(
        MetricValue("missing_fraction", missing / total_cells if total_cells else 0.0)
    )
    for c in t.numeric_columns():
        vals = numeric_values(c)
        if vals.size == 0:
            continue
        out.append(MetricValue(f"{c.name}.mean", float(np.mean(vals))))
        out.append(MetricValue(f"{c.name}.median", float(np.median(vals))))
        out.append(MetricValue(f"{c.name}.std_dev", float(np.std(vals))))
    return out


MetricFn = Callable[[DataTable, dict[str, Any]], MetricValue]

_METRICS: dict[str, MetricFn] = {
    "mean_magnitude": mean_magnitude,
    "imbalance_degree": imbalance_degree,
    "duplicate_proportion": duplicate_proportion,
    "memory_usage_mb": memory_usage_mb,
    "statistical_parity_diff": statistical_parity_diff,
    "representation_rate_diff": representation_rate_diff,
    "outlier_proportion_iqr": outlier_proportion_iqr,
    "k_anonymity_level": k_anonymity_level,
}


def metric_names() -> list[str]:
    return sorted(_METRICS)


def register_metric(name: str, fn: MetricFn) -> None:
    """Extension point: add an administrator-defined metric kind."""
    if name in _METRICS:
        raise DuplicateName(f"metric {name!r} already registered")
    _METRICS[name] = fn


def evaluate_metric(t: DataTable, spec: MetricSpec) -> MetricValue:
    try:
        fn = _METRICS[spec.kind]
    except KeyError:
        raise SchemaError(f"unknown metric kind {spec.kind!r}") from None
    return fn(t, spec.args)
