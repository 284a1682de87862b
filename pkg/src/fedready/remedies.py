"""Data-transforming remedies: each maps DataTable -> RemedyResult.

Row-removing remedies never alter retained cells; cell-altering remedies never
change the row count. Stochastic remedies (SMOTE, stratified resampling) are
deterministic given their rng seed. ``changed=False`` results return the input
table object unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import DuplicateName, InsufficientMinority, SchemaError
from .metrics import iqr_bounds, mean_magnitude, qi_tuples
from .table import Column, ColumnKind, DataTable, DOUBLE, NUMERIC, SINGLE, numeric_values


@dataclass(frozen=True)
class RemedySpec:
    """A remedy kind plus its arguments (rng_seed required when stochastic)."""

    kind: str
    args: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class RemedyResult:
    table: DataTable
    changed: bool
    summary: dict[str, Any] = field(default_factory=dict)


def _unchanged(t: DataTable, **summary: Any) -> RemedyResult:
    return RemedyResult(t, False, summary)


def remove_noisy_rows(t: DataTable, row_mean_threshold: float) -> RemedyResult:
    """Drop every row whose mean absolute value over non-missing numeric
    cells exceeds the threshold."""
    if not t.numeric_columns():
        raise SchemaError("remove_noisy_rows needs numeric columns")
    row_means = mean_magnitude(t).detail["row_means"]
    keep = [i for i, m in enumerate(row_means) if m <= row_mean_threshold]
    removed = t.n_rows - len(keep)
    if removed == 0:
        return _unchanged(t, rows_removed=0)
    summary: dict[str, Any] = {"rows_removed": removed}
    if not keep:
        summary["empty_result"] = True
    return RemedyResult(t.subset_rows(keep), True, summary)


def _numeric_feature_columns(t: DataTable) -> list[Column]:
    label = t.meta.label_column
    return [c for c in t.numeric_columns() if c.name != label]


def smote_oversample(
    t: DataTable,
    k_neighbors: int = 5,
    rng_seed: int = 0,
    rng: Any = None,
) -> RemedyResult:
    """Equalize binary class counts by interpolating synthetic minority rows.

    x_new = x + u * (x_nn - x) with u ~ Uniform(0,1) and x_nn one of the k
    nearest minority neighbors by Euclidean distance over numeric features
    (ties broken by row index). Categorical cells are copied from x. ``rng``
    overrides the seeded generator (testing hook).
    """
    if t.meta.label_column is None:
        raise SchemaError("smote_oversample requires meta.label_column")
    labels = t.column(t.meta.label_column).values
    counts: dict[Any, int] = {}
    for v in labels:
        if v is not None:
            counts[v] = counts.get(v, 0) + 1
    if len(counts) != 2:
        raise SchemaError(f"smote_oversample expects binary labels, found {len(counts)} classes")
    (maj_label, maj_n), (min_label, min_n) = sorted(
        counts.items(), key=lambda kv: (-kv[1], str(kv[0]))
    )
    if maj_n == min_n:
        return _unchanged(t, rows_added=0)
    if min_n < 2:
        raise InsufficientMinority("minority class has fewer than 2 rows")

    minority_idx = [i for i, v in enumerate(labels) if v == min_label]
    feat_cols = _numeric_feature_columns(t)
    if not feat_cols:
        raise SchemaError("smote_oversample needs numeric feature columns")
    # missing feature cells contribute 0 to distances; interpolation keeps
    # the base row's cell when either endpoint is missing
    feats = np.array(
        [[0.0 if c.values[i] is None else c.values[i] for c in feat_cols]
         for i in minority_idx],
        dtype=np.float64,
    )
    k = min(k_neighbors, min_n - 1)
    diffs = feats[:, None, :] - feats[None, :, :]
    dist = np.sqrt((diffs**2).sum(axis=2))
    neighbor_lists = []
    for a in range(min_n):
        order = sorted((dist[a, b], b) for b in range(min_n) if b != a)
        neighbor_lists.append([b for _, b in order[:k]])

    if rng is None:
        rng = np.random.default_rng(rng_seed)
    col_pos = {c.name: j for j, c in enumerate(t.columns)}
    feat_pos = [col_pos[c.name] for c in feat_cols]
    new_rows: list[list[Any]] = []
    for _ in range(maj_n - min_n):
        a = int(rng.integers(0, min_n))
        b = neighbor_lists[a][int(rng.integers(0, len(neighbor_lists[a])))]
        u = float(rng.random())
        base = list(t.row(minority_idx[a]))
        nn = t.row(minority_idx[b])
        for j, p in enumerate(feat_pos):
            x, y = base[p], nn[p]
            if x is None or y is None:
                continue
            base[p] = x + u * (y - x)
        new_rows.append(base)
    return RemedyResult(
        t.append_rows(new_rows),
        True,
        {"rows_added": len(new_rows), "minority_label": str(min_label)},
    )


def deduplicate(t: DataTable) -> RemedyResult:
    """Keep the first occurrence of each distinct full row."""
    seen: set[tuple] = set()
    keep = []
    for i, row in enumerate(t.iter_rows()):
        if row not in seen:
            seen.add(row)
            keep.append(i)
    removed = t.n_rows - len(keep)
    if removed == 0:
        return _unchanged(t, rows_removed=0)
    return RemedyResult(t.subset_rows(keep), True, {"rows_removed": removed})


_F32_REL_TOL = 1e-6


def _downcastable(col: Column) -> bool:
    for v in col.values:
        if v is None:
            continue
        f = float(np.float32(v))
        err = abs(f - v)
        if v != 0.0:
            err /= abs(v)
        if err > _F32_REL_TOL:
            return False
    return True


def optimize_memory(t: DataTable) -> RemedyResult:
    """Deduplicate, then downcast double columns whose values round-trip
    through single precision within 1e-6 relative error."""
    dedup = deduplicate(t)
    table = dedup.table
    downcast: list[str] = []
    new_cols = []
    for c in table.columns:
        if c.kind.is_numeric and c.kind.precision == DOUBLE and _downcastable(c):
            new_cols.append(Column.of(c.name, ColumnKind(NUMERIC, SINGLE), c.values))
            downcast.append(c.name)
        else:
            new_cols.append(c)
    summary = {"rows_removed": dedup.summary.get("rows_removed", 0),
               "columns_downcast": downcast}
    if not downcast and not dedup.changed:
        return _unchanged(t, **summary)
    return RemedyResult(table.with_columns(new_cols), True, summary)


def stratified_resample(t: DataTable, rng_seed: int = 0) -> RemedyResult:
    """Resample every (sensitive group x label) cell to the median non-empty
    cell size: seeded subsample when shrinking, bootstrap copies when growing.
    With a single observed group the remedy cannot act (changed=False)."""
    m = t.meta
    if m.sensitive_feature is None or m.label_column is None:
        raise SchemaError("stratified_resample requires sensitive_feature and label_column")
    group_vals = t.column(m.sensitive_feature).values
    label_vals = t.column(m.label_column).values
    cells: dict[tuple[str, str], list[int]] = {}
    passthrough: list[int] = []
    for i in range(t.n_rows):
        g, y = group_vals[i], label_vals[i]
        if g is None or y is None:
            passthrough.append(i)
            continue
        cells.setdefault((str(g), str(y)), []).append(i)
    groups = {g for g, _ in cells}
    if len(groups) < 2:
        return _unchanged(t, single_group=True)
    sizes = sorted(len(v) for v in cells.values())
    mid = len(sizes) // 2
    median = sizes[mid] if len(sizes) % 2 else (sizes[mid - 1] + sizes[mid]) / 2
    target = max(1, int(round(median)))
    if all(len(v) == target for v in cells.values()):
        return _unchanged(t, target_cell_size=target)

    rng = np.random.default_rng(rng_seed)
    keep: set[int] = set(passthrough)
    extra: list[int] = []
    for key in sorted(cells):
        idx = cells[key]
        if len(idx) > target:
            chosen = rng.choice(len(idx), size=target, replace=False)
            keep.update(idx[j] for j in sorted(chosen))
        else:
            keep.update(idx)
            grow = target - len(idx)
            if grow:
                extra.extend(idx[int(j)] for j in rng.integers(0, len(idx), size=grow))
    order = sorted(keep) + extra
    return RemedyResult(
        t.gather_rows(order),
        True,
        {"target_cell_size": target, "rows_resampled": len(order)},
    )


def _storable_bounds(lo: float, hi: float, kind: ColumnKind) -> tuple[float, float]:
    # single-precision cells must land inside [lo, hi] after rounding, so the
    # clamp targets are the tightest float32 values within the fences
    if kind.precision != SINGLE:
        return lo, hi
    lo32 = np.float32(lo)
    if float(lo32) < lo:
        lo32 = np.nextafter(lo32, np.float32(np.inf))
    hi32 = np.float32(hi)
    if float(hi32) > hi:
        hi32 = np.nextafter(hi32, np.float32(-np.inf))
    return float(lo32), float(hi32)


def clip_outliers_iqr(t: DataTable) -> RemedyResult:
    """Clamp numeric cells outside [Q1-1.5*IQR, Q3+1.5*IQR] (bounds from the
    input table) to the nearest bound. Idempotent."""
    clipped = 0
    new_cols = []
    for c in t.columns:
        if not c.kind.is_numeric:
            new_cols.append(c)
            continue
        vals = numeric_values(c)
        if vals.size < 4:
            new_cols.append(c)
            continue
        lo, hi = iqr_bounds(vals)
        lo_store, hi_store = _storable_bounds(lo, hi, c.kind)
        out_vals = []
        col_clipped = 0
        for v in c.values:
            if v is not None and v < lo:
                out_vals.append(lo_store)
                col_clipped += 1
            elif v is not None and v > hi:
                out_vals.append(hi_store)
                col_clipped += 1
            else:
                out_vals.append(v)
        clipped += col_clipped
        new_cols.append(Column.of(c.name, c.kind, out_vals) if col_clipped else c)
    if clipped == 0:
        return _unchanged(t, cells_clipped=0)
    return RemedyResult(t.with_columns(new_cols), True, {"cells_clipped": clipped})


def suppress_low_anonymity(t: DataTable, target_k: int = 2) -> RemedyResult:
    """Remove every row whose quasi-identifier equivalence class is smaller
    than target_k; the result is target_k-anonymous or empty."""
    if not t.meta.quasi_identifiers:
        raise SchemaError("suppress_low_anonymity requires meta.quasi_identifiers")
    if target_k < 2:
        raise SchemaError("target_k must be >= 2")
    keys = qi_tuples(t)
    sizes: dict[tuple, int] = {}
    for key in keys:
        sizes[key] = sizes.get(key, 0) + 1
    keep = [i for i, key in enumerate(keys) if sizes[key] >= target_k]
    removed = t.n_rows - len(keep)
    if removed == 0:
        return _unchanged(t, rows_removed=0)
    summary: dict[str, Any] = {"rows_removed": removed}
    if not keep:
        summary["empty_result"] = True
    return RemedyResult(t.subset_rows(keep), True, summary)


RemedyFn = Callable[..., RemedyResult]

_REMEDIES: dict[str, RemedyFn] = {
    "remove_noisy_rows": remove_noisy_rows,
    "smote_oversample": smote_oversample,
    "deduplicate": deduplicate,
    "optimize_memory": optimize_memory,
    "stratified_resample": stratified_resample,
    "clip_outliers_iqr": clip_outliers_iqr,
    "suppress_low_anonymity": suppress_low_anonymity,
}

STOCHASTIC_REMEDIES = frozenset({"smote_oversample", "stratified_resample"})


def remedy_names() -> list[str]:
    return sorted(_REMEDIES)


def register_remedy(name: str, fn: RemedyFn) -> None:
    """Extension point: add an administrator-defined remedy kind."""
    if name in _REMEDIES:
        raise DuplicateName(f"remedy {name!r} already registered")
    _REMEDIES[name] = fn


def apply_remedy(t: DataTable, spec: RemedySpec) -> RemedyResult:
    try:
        fn = _REMEDIES[spec.kind]
    except KeyError:
        raise SchemaError(f"unknown remedy kind {spec.kind!r}") from None
    if spec.kind in STOCHASTIC_REMEDIES and "rng_seed" not in spec.args:
        raise SchemaError(f"remedy {spec.kind!r} requires rng_seed")
    try:
        return fn(t, **spec.args)
    except TypeError as exc:
        raise SchemaError(f"bad arguments for remedy {spec.kind!r}: {exc}") from None
