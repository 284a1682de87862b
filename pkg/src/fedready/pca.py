"""Two-round privacy-preserving PCA for the combined report scatter.

Clients ship O(d^2) sufficient statistics (count, sum vector, sum of outer
products) instead of rows; the server pools them, fits the top-2 principal
components by cyclic Jacobi rotations, and broadcasts the model; clients
return only 2-D projections of a bounded sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCovariance, SchemaError
from .table import DataTable


@dataclass(frozen=True)
class Moments:
    """Pooled-covariance sufficient statistics for a fixed feature order."""

    feature_columns: tuple[str, ...]
    count: int
    sum_vector: tuple[float, ...]
    sum_outer: tuple[tuple[float, ...], ...]

    def to_json(self) -> dict:
        return {
            "feature_columns": list(self.feature_columns),
            "count": self.count,
            "sum": list(self.sum_vector),
            "outer": [list(row) for row in self.sum_outer],
        }

    @staticmethod
    def from_json(obj: dict) -> Moments:
        return Moments(
            tuple(obj["feature_columns"]),
            int(obj["count"]),
            tuple(float(v) for v in obj["sum"]),
            tuple(tuple(float(v) for v in row) for row in obj["outer"]),
        )


@dataclass(frozen=True)
class PcaModel:
    """Feature means plus the top-2 orthonormal components of the global
    covariance; sign convention: each component's largest-magnitude entry is
    positive."""

    feature_columns: tuple[str, ...]
    mean_vector: tuple[float, ...]
    components: tuple[tuple[float, ...], ...]
    explained_variance: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "feature_columns": list(self.feature_columns),
            "mean": list(self.mean_vector),
            "components": [list(c) for c in self.components],
            "explained_variance": list(self.explained_variance),
        }

    @staticmethod
    def from_json(obj: dict) -> PcaModel:
        return PcaModel(
            tuple(obj["feature_columns"]),
            tuple(float(v) for v in obj["mean"]),
            tuple(tuple(float(v) for v in c) for c in obj["components"]),
            tuple(float(v) for v in obj["explained_variance"]),
        )


def _feature_matrix(t: DataTable, feature_cols: list[str]) -> np.ndarray:
    """Rows x features array over rows with no missing feature cell."""
    cols = []
    for name in feature_cols:
        c = t.column(name)
        if not c.kind.is_numeric:
            raise SchemaError(f"PCA feature column {name!r} is not numeric")
        cols.append(c.values)
    rows = [
        [cols[j][i] for j in range(len(cols))]
        for i in range(t.n_rows)
        if all(cols[j][i] is not None for j in range(len(cols)))
    ]
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_cols))


def local_moments(t: DataTable, feature_cols: list[str]) -> Moments:
    """Client-side sufficient statistics; payload is O(d^2), independent of
    the row count. Rows with missing feature cells are skipped."""
    x = _feature_matrix(t, feature_cols)
    if x.shape[0] == 0:
        d = len(feature_cols)
        return Moments(tuple(feature_cols), 0,
                       tuple([0.0] * d), tuple(tuple([0.0] * d) for _ in range(d)))
    s = x.sum(axis=0)
    outer = x.T @ x
    return Moments(
        tuple(feature_cols),
        int(x.shape[0]),
        tuple(float(v) for v in s),
        tuple(tuple(float(v) for v in row) for row in outer),
    )


def add_moments(a: Moments, b: Moments) -> Moments:
    if a.feature_columns != b.feature_columns:
        raise SchemaError("cannot add moments over different feature columns")
    sa, sb = np.array(a.sum_vector), np.array(b.sum_vector)
    oa, ob = np.array(a.sum_outer), np.array(b.sum_outer)
    s = sa + sb
    o = oa + ob
    return Moments(
        a.feature_columns,
        a.count + b.count,
        tuple(float(v) for v in s),
        tuple(tuple(float(v) for v in row) for row in o),
    )


def jacobi_eigh(a: np.ndarray, tol: float = 1e-13, max_sweeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues descending, eigenvectors as columns in the same
    order). Deterministic: fixed sweep order, no pivoting randomness.
    """
    n = a.shape[0]
    A = np.array(a, dtype=np.float64, copy=True)
    V = np.eye(n)
    scale = max(float(np.max(np.abs(A))), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.square(A - np.diag(np.diag(A)))))
        if off <= tol * scale * n:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= tol * scale:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if t == 0.0:
                    t = 1.0  # theta == 0: 45-degree rotation
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                rot_p = c * A[p, :] - s * A[q, :]
                rot_q = s * A[p, :] + c * A[q, :]
                A[p, :], A[q, :] = rot_p, rot_q
                rot_p = c * V[:, p] - s * V[:, q]
                rot_q = s * V[:, p] + c * V[:, q]
                V[:, p], V[:, q] = rot_p, rot_q
    eigvals = np.diag(A).copy()
    order = np.argsort(-eigvals, kind="stable")
    return eigvals[order], V[:, order]


def fit_pca(moments: Moments) -> PcaModel:
    """Fit the top-2 components from pooled moments.

    covariance = outer/count - mean mean^T (population form). Raises
    DegenerateCovariance for rank-0 covariance or too little data.
    """
    d = len(moments.feature_columns)
    if moments.count < 2 or d < 2:
        raise DegenerateCovariance(
            f"need count >= 2 and d >= 2, got count={moments.count}, d={d}"
        )
    mean = np.array(moments.sum_vector) / moments.count
    outer = np.array(moments.sum_outer) / moments.count
    cov = outer - np.outer(mean, mean)
    cov = (cov + cov.T) / 2.0
    scale = max(float(np.max(np.abs(outer))), 1e-300)
    if float(np.max(np.abs(cov))) <= 1e-12 * scale:
        raise DegenerateCovariance("covariance is (numerically) rank zero")
    eigvals, eigvecs = jacobi_eigh(cov)
    comps = []
    for j in range(2):
        v = eigvecs[:, j].copy()
        lead = int(np.argmax(np.abs(v)))
        if v[lead] < 0:
            v = -v
        comps.append(tuple(float(x) for x in v))
    variances = tuple(max(float(eigvals[j]), 0.0) for j in range(2))
    return PcaModel(
        moments.feature_columns,
        tuple(float(v) for v in mean),
        tuple(comps),
        variances,
    )


def project_sample(
    t: DataTable,
    model: PcaModel,
    sample_size: int = 200,
    rng_seed: int = 0,
) -> list[tuple[float, float]]:
    """Seeded uniform sample (without replacement) of rows, centered by the
    model mean and projected onto the two components."""
    x = _feature_matrix(t, list(model.feature_columns))
    n = x.shape[0]
    if n == 0:
        return []
    take = min(sample_size, n)
    rng = np.random.default_rng(rng_seed)
    idx = np.sort(rng.choice(n, size=take, replace=False))
    centered = x[idx] - np.array(model.mean_vector)
    basis = np.array(model.components).T
    proj = centered @ basis
    return [(float(p[0]), float(p[1])) for p in proj]
