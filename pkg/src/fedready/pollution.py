"""Synthetic data generation, reproducible pollution recipes, and non-IID
partitioning for the evaluation harness.

Every operation is a pure function of its inputs and rng seed. Generated
feature values are quantized to multiples of 1/1024 so that cross-client
moment aggregation is exact in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import SchemaError, TooFewRows
from .table import (
    CATEGORICAL_KIND,
    Column,
    ColumnKind,
    DataTable,
    DatasetMeta,
    DOUBLE,
    NUMERIC,
    SINGLE,
)

QUANTUM = 1.0 / 1024.0


def _quantize(a: np.ndarray) -> np.ndarray:
    return np.round(a / QUANTUM) * QUANTUM


@dataclass(frozen=True)
class PollutionSpec:
    """One pollution step; ``params`` depend on the kind."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    rng_seed: int = 0


@dataclass(frozen=True)
class PartitionSpec:
    strategy: str  # dirichlet_label_skew | by_categorical_column
    n_clients: int = 2
    alpha: float = 0.5
    column: str | None = None
    rng_seed: int = 0


# -- synthesis ----------------------------------------------------------------

@dataclass(frozen=True)
class TabularProfile:
    n_rows: int
    n_features: int = 4
    n_groups: int = 2
    n_classes: int = 2


@dataclass(frozen=True)
class ImageLikeProfile:
    n_rows: int
    n_pixels: int = 16


def synth_table(
    profile: TabularProfile | ImageLikeProfile,
    rng_seed: int,
    client_id: str = "client",
) -> DataTable:
    """Generate a seeded synthetic table.

    Tabular: small-magnitude Gaussian features, two fixed categorical columns
    usable as quasi-identifiers, a categorical sensitive group, and labels
    whose positive rate depends on the group (inherent parity difference).
    ImageLike: single-precision pixel columns in [0,1] with class-dependent
    means below 0.3, so a clean table sits under the 0.37 noise threshold.
    """
    rng = np.random.default_rng(rng_seed)
    if isinstance(profile, TabularProfile):
        return _synth_tabular(profile, rng, client_id)
    return _synth_image_like(profile, rng, client_id)


def _synth_tabular(p: TabularProfile, rng: np.random.Generator, client_id: str) -> DataTable:
    if p.n_rows < 1 or p.n_features < 1 or p.n_groups < 1 or p.n_classes < 1:
        raise SchemaError("profile dimensions must be >= 1")
    n = p.n_rows
    cols: list[Column] = []
    for j in range(p.n_features):
        vals = _quantize(rng.normal(0.0, 0.16, size=n))
        cols.append(Column.of(f"f{j}", ColumnKind(NUMERIC, DOUBLE), vals.tolist()))
    cols.append(Column.of("cat_a", CATEGORICAL_KIND,
                          [f"a{int(v)}" for v in rng.integers(0, 4, size=n)]))
    cols.append(Column.of("cat_b", CATEGORICAL_KIND,
                          [f"b{int(v)}" for v in rng.integers(0, 3, size=n)]))
    groups = rng.integers(0, p.n_groups, size=n)
    cols.append(Column.of("group", CATEGORICAL_KIND, [f"g{int(g)}" for g in groups]))
    if p.n_classes == 2:
        span = max(1, p.n_groups - 1)
        pos_rate = 0.25 + 0.5 * (groups / span)
        labels = np.where(rng.random(size=n) < pos_rate, "c1", "c0")
    else:
        tilt = np.ones((n, p.n_classes))
        tilt[np.arange(n), groups % p.n_classes] += 0.5
        probs = tilt / tilt.sum(axis=1, keepdims=True)
        draws = [int(rng.choice(p.n_classes, p=probs[i])) for i in range(n)]
        labels = np.array([f"c{d}" for d in draws])
    cols.append(Column.of("label", CATEGORICAL_KIND, labels.tolist()))
    meta = DatasetMeta(
        client_id=client_id,
        label_column="label",
        sensitive_feature="group",
        quasi_identifiers=("cat_a", "cat_b"),
        positive_label="c1",
    )
    return DataTable(tuple(cols), meta)


def _synth_image_like(p: ImageLikeProfile, rng: np.random.Generator, client_id: str) -> DataTable:
    if p.n_rows < 1 or p.n_pixels < 1:
        raise SchemaError("profile dimensions must be >= 1")
    n = p.n_rows
    labels = rng.integers(0, 2, size=n)
    class_mean = np.where(labels == 0, 0.10, 0.25)
    pixel_jitter = rng.uniform(-0.05, 0.05, size=p.n_pixels)
    cols: list[Column] = []
    for j in range(p.n_pixels):
        vals = rng.normal(class_mean + pixel_jitter[j], 0.1, size=n)
        vals = _quantize(np.clip(vals, 0.0, 1.0))
        cols.append(Column.of(f"p{j}", ColumnKind(NUMERIC, SINGLE), vals.tolist()))
    cols.append(Column.of("label", CATEGORICAL_KIND, [f"c{int(v)}" for v in labels]))
    meta = DatasetMeta(client_id=client_id, label_column="label", positive_label="c1")
    return DataTable(tuple(cols), meta)


# -- pollution ----------------------------------------------------------------

def _noise_rows(t: DataTable, fraction: float, std_dev: float, rng_seed: int) -> DataTable:
    if not t.numeric_columns():
        raise SchemaError("gaussian noise needs numeric columns")
    if not 0.0 < fraction <= 1.0 or std_dev <= 0:
        raise SchemaError("need fraction in (0,1] and std_dev > 0")
    rng = np.random.default_rng(rng_seed)
    n = t.n_rows
    m = int(np.ceil(fraction * n))
    chosen = set(int(i) for i in rng.choice(n, size=m, replace=False))
    new_cols = []
    for c in t.columns:
        if not c.kind.is_numeric:
            new_cols.append(c)
            continue
        vals = list(c.values)
        for i in sorted(chosen):
            if vals[i] is not None:
                vals[i] = vals[i] + float(rng.normal(0.0, std_dev))
        new_cols.append(Column.of(c.name, c.kind, vals))
    return t.with_columns(new_cols)


def _duplicate_rows(t: DataTable, fraction: float, rng_seed: int) -> DataTable:
    if not 0.0 < fraction <= 1.0:
        raise SchemaError("need fraction in (0,1]")
    rng = np.random.default_rng(rng_seed)
    n = t.n_rows
    m = int(np.ceil(fraction * n))
    replace = m > n
    sources = sorted(int(i) for i in rng.choice(n, size=m, replace=replace))
    return t.append_rows([t.row(i) for i in sources])


def _upcast_precision(t: DataTable) -> DataTable:
    new_cols = [
        Column.of(c.name, ColumnKind(NUMERIC, DOUBLE), c.values)
        if c.kind.is_numeric and c.kind.precision == SINGLE else c
        for c in t.columns
    ]
    return t.with_columns(new_cols)


def _skew_groups(t: DataTable, rates: dict[str, float], rng_seed: int) -> DataTable:
    """Seeded subsample hitting target group rates over observed groups.
    No-op when fewer than two declared groups are observed."""
    if t.meta.sensitive_feature is None:
        raise SchemaError("skew_sensitive_groups requires meta.sensitive_feature")
    col = t.column(t.meta.sensitive_feature)
    by_group: dict[str, list[int]] = {}
    for i, v in enumerate(col.values):
        if v is not None:
            by_group.setdefault(str(v), []).append(i)
    observed = {g: idx for g, idx in by_group.items() if g in rates and rates[g] > 0}
    if len(observed) < 2:
        return t
    total_rate = sum(rates[g] for g in observed)
    norm = {g: rates[g] / total_rate for g in observed}
    n_target = min(int(len(idx) / norm[g]) for g, idx in observed.items())
    rng = np.random.default_rng(rng_seed)
    keep: list[int] = []
    for g in sorted(observed):
        idx = observed[g]
        take = max(1, int(round(norm[g] * n_target)))
        take = min(take, len(idx))
        chosen = rng.choice(len(idx), size=take, replace=False)
        keep.extend(idx[int(j)] for j in chosen)
    return t.subset_rows(keep)


def _degrade_anonymity(t: DataTable, singleton_fraction: float, rng_seed: int) -> DataTable:
    """Remap the first quasi-identifier of a seeded row subset to fresh unique
    categories, manufacturing QI singletons."""
    if not t.meta.quasi_identifiers:
        raise SchemaError("degrade_anonymity requires meta.quasi_identifiers")
    if not 0.0 < singleton_fraction <= 1.0:
        raise SchemaError("need singleton_fraction in (0,1]")
    first_qi = t.meta.quasi_identifiers[0]
    col = t.column(first_qi)
    if col.kind.is_numeric:
        raise SchemaError("degrade_anonymity expects a categorical quasi-identifier")
    rng = np.random.default_rng(rng_seed)
    n = t.n_rows
    m = int(np.ceil(singleton_fraction * n))
    chosen = sorted(int(i) for i in rng.choice(n, size=m, replace=False))
    vals = list(col.values)
    for i in chosen:
        vals[i] = f"anon{i}"
    new_cols = [Column.of(c.name, c.kind, vals) if c.name == first_qi else c
                for c in t.columns]
    return t.with_columns(new_cols)


def pollute(t: DataTable, spec: PollutionSpec) -> DataTable:
    """Apply one pollution step; deterministic per seed."""
    kind, p, seed = spec.kind, spec.params, spec.rng_seed
    if kind == "gaussian_noise":
        return _noise_rows(t, p.get("fraction", 0.9), p.get("std_dev", 2.0), seed)
    if kind == "duplicate_rows":
        return _duplicate_rows(t, p.get("fraction", 0.2), seed)
    if kind == "upcast_precision":
        return _upcast_precision(t)
    if kind == "inject_outliers":
        # same mechanism as gaussian_noise, typically on a smaller row fraction
        return _noise_rows(t, p.get("fraction", 0.1), p.get("std_dev", 2.0), seed)
    if kind == "skew_sensitive_groups":
        return _skew_groups(t, {str(k): float(v) for k, v in p.get("rates", {}).items()}, seed)
    if kind == "degrade_anonymity":
        return _degrade_anonymity(t, p.get("singleton_fraction", 0.1), seed)
    raise SchemaError(f"unknown pollution kind {kind!r}")


# -- partitioning -------------------------------------------------------------

def partition(t: DataTable, spec: PartitionSpec) -> list[DataTable]:
    """Split a table into disjoint client shards covering every row."""
    if spec.strategy == "dirichlet_label_skew":
        return _partition_dirichlet(t, spec)
    if spec.strategy == "by_categorical_column":
        return _partition_by_column(t, spec)
    raise SchemaError(f"unknown partition strategy {spec.strategy!r}")


def _partition_dirichlet(t: DataTable, spec: PartitionSpec) -> list[DataTable]:
    if t.meta.label_column is None:
        raise SchemaError("dirichlet_label_skew requires meta.label_column")
    if spec.n_clients < 2 or spec.alpha <= 0:
        raise SchemaError("need n_clients >= 2 and alpha > 0")
    rng = np.random.default_rng(spec.rng_seed)
    labels = t.column(t.meta.label_column).values
    classes = sorted({str(v) for v in labels if v is not None} | ({"__missing__"} if any(v is None for v in labels) else set()))
    assignments: list[list[int]] = [[] for _ in range(spec.n_clients)]
    for cls in classes:
        idx = [i for i, v in enumerate(labels)
               if (v is None and cls == "__missing__") or (v is not None and str(v) == cls)]
        perm = rng.permutation(len(idx))
        idx = [idx[int(j)] for j in perm]
        props = rng.dirichlet(np.full(spec.n_clients, spec.alpha))
        cuts = (np.cumsum(props)[:-1] * len(idx)).astype(int)
        parts = np.split(np.array(idx, dtype=int), cuts)
        for k in range(spec.n_clients):
            assignments[k].extend(int(i) for i in parts[k])
    # desk-scale guard: no client may end up empty
    for k in range(spec.n_clients):
        if not assignments[k]:
            donor = max(range(spec.n_clients), key=lambda j: len(assignments[j]))
            assignments[k].append(assignments[donor].pop())
    shards = []
    for k in range(spec.n_clients):
        shard = t.subset_rows(assignments[k])
        shards.append(shard.with_meta(
            DatasetMeta(
                client_id=f"{t.meta.client_id}_{k}",
                label_column=t.meta.label_column,
                sensitive_feature=t.meta.sensitive_feature,
                quasi_identifiers=t.meta.quasi_identifiers,
                positive_label=t.meta.positive_label,
            )
        ))
    return shards


def _partition_by_column(t: DataTable, spec: PartitionSpec) -> list[DataTable]:
    if spec.column is None:
        raise SchemaError("by_categorical_column requires a column name")
    col = t.column(spec.column)
    if any(v is None for v in col.values):
        raise TooFewRows(f"column {spec.column!r} has missing values; shards undefined")
    by_value: dict[str, list[int]] = {}
    for i, v in enumerate(col.values):
        by_value.setdefault(str(v), []).append(i)
    shards = []
    for value in sorted(by_value):
        shard = t.subset_rows(by_value[value])
        shards.append(shard.with_meta(
            DatasetMeta(
                client_id=f"{t.meta.client_id}_{value}",
                label_column=t.meta.label_column,
                sensitive_feature=t.meta.sensitive_feature,
                quasi_identifiers=t.meta.quasi_identifiers,
                positive_label=t.meta.positive_label,
            )
        ))
    return shards
