"""Preparation of the project-by-metric analysis matrix.

Order of operations is fixed: exclusions, then mean imputation of absent
cells, then reverse scoring of the flagged columns.  Reverse scoring uses
the order-reversing, range-preserving affine map ``x' = max + min - x``,
which is an involution and leaves correlation magnitudes intact.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .metrics import EFA_COLUMNS, METRICS_COLUMNS, ProjectMetrics
from .projects import RepoResolution, ResolutionStatus

#: Columns where a larger raw value means "less healthy"; flipped so that
#: larger always has a positive association.
REVERSE_SCORED_COLUMNS = frozenset(
    {
        "months_since_update",
        "cmc_rank",
        "geo_rmse",
        "alexa_rank",
        "median_response_days",
        "average_response_days",
    }
)


@dataclass
class ColumnMeta:
    name: str
    reverse_scored: bool = False
    imputed_rows: set[int] = field(default_factory=set)


@dataclass
class MetricMatrix:
    """n-by-p numeric dataset with per-column metadata; NaN marks absent."""

    row_labels: list[str]
    columns: list[ColumnMeta]
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.row_labels), len(self.columns)):
            raise ValueError("values shape does not match labels/columns")

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise KeyError(f"unknown column {name!r}") from None

    def copy(self) -> "MetricMatrix":
        return MetricMatrix(
            row_labels=list(self.row_labels),
            columns=[replace(c, imputed_rows=set(c.imputed_rows)) for c in self.columns],
            values=self.values.copy(),
        )

    def select(self, names: Sequence[str]) -> "MetricMatrix":
        idx = [self.column_index(n) for n in names]
        return MetricMatrix(
            row_labels=list(self.row_labels),
            columns=[replace(self.columns[i], imputed_rows=set(self.columns[i].imputed_rows)) for i in idx],
            values=self.values[:, idx].copy(),
        )


def matrix_from_metrics(
    rows: Sequence[ProjectMetrics], column_names: Sequence[str] = EFA_COLUMNS
) -> MetricMatrix:
    """Build a matrix from metrics rows; missing optional fields become NaN."""
    values = np.full((len(rows), len(column_names)), np.nan)
    for i, row in enumerate(rows):
        for j, name in enumerate(column_names):
            value = getattr(row, name)
            if value is not None:
                values[i, j] = float(value)
    columns = [
        ColumnMeta(name=n, reverse_scored=n in REVERSE_SCORED_COLUMNS) for n in column_names
    ]
    return MetricMatrix([r.repo_id for r in rows], columns, values)


# ---------------------------------------------------------------------------
# exclusions


@dataclass
class ExclusionReport:
    missing_404: int = 0
    private_listed: int = 0
    not_listed: int = 0
    foreign_host: int = 0
    duplicates: int = 0
    dead_no_history: int = 0
    retained: int = 0

    def total(self) -> int:
        return (
            self.missing_404
            + self.private_listed
            + self.not_listed
            + self.foreign_host
            + self.duplicates
            + self.dead_no_history
            + self.retained
        )

    def as_dict(self) -> dict:
        return dict(vars(self))


_STATUS_BUCKETS = {
    ResolutionStatus.MISSING_404: "missing_404",
    ResolutionStatus.PRIVATE_LISTED: "private_listed",
    ResolutionStatus.NOT_LISTED: "not_listed",
    ResolutionStatus.FOREIGN_HOST: "foreign_host",
    ResolutionStatus.DUPLICATE: "duplicates",
}


def apply_exclusions(
    resolutions: Iterable[RepoResolution], histories: Mapping[str, bool]
) -> tuple[list[str], ExclusionReport]:
    """Drop unusable projects; every input lands in exactly one bucket.

    Resolved repositories with no contribution history are dead and
    dropped last.  Returns the retained repo ids in input order.
    """
    report = ExclusionReport()
    retained: list[str] = []
    for res in resolutions:
        bucket = _STATUS_BUCKETS.get(res.status)
        if bucket is not None:
            setattr(report, bucket, getattr(report, bucket) + 1)
            continue
        assert res.repo_id is not None
        if not histories.get(res.repo_id, False):
            report.dead_no_history += 1
            continue
        retained.append(res.repo_id)
        report.retained += 1
    return retained, report


# ---------------------------------------------------------------------------
# transforms


def reverse_score(values: np.ndarray) -> np.ndarray:
    """Order-reversing, range-preserving affine map; constants unchanged."""
    values = np.asarray(values, dtype=float)
    present = values[~np.isnan(values)]
    if present.size == 0 or np.nanmax(values) == np.nanmin(values):
        return values.copy()
    return np.nanmax(values) + np.nanmin(values) - values


def impute_mean(matrix: MetricMatrix, column: str) -> MetricMatrix:
    """Replace absent cells in one column by the mean of present cells."""
    out = matrix.copy()
    j = out.column_index(column)
    col = out.values[:, j]
    missing = np.isnan(col)
    if missing.all():
        raise ValueError(f"column {column!r} has no present values to impute from")
    if missing.any():
        col[missing] = col[~missing].mean()
        out.columns[j].imputed_rows |= set(np.flatnonzero(missing).tolist())
    return out


def prepare(matrix: MetricMatrix) -> MetricMatrix:
    """Impute every column, then reverse-score the flagged columns."""
    out = matrix
    for meta in matrix.columns:
        out = impute_mean(out, meta.name)
    for j, meta in enumerate(out.columns):
        if meta.reverse_scored:
            out.values[:, j] = reverse_score(out.values[:, j])
    return out


# ---------------------------------------------------------------------------
# description and splitting


def describe(matrix: MetricMatrix) -> dict[str, dict[str, float]]:
    """Per-column mean, sd (n-1), min, Q1, median, Q3, max.

    Quartiles use linear interpolation between order statistics.
    """
    if len(matrix.row_labels) < 2:
        raise ValueError("describe requires at least two rows for the sd")
    stats: dict[str, dict[str, float]] = {}
    for j, meta in enumerate(matrix.columns):
        col = matrix.values[:, j]
        q1, q2, q3 = np.quantile(col, [0.25, 0.5, 0.75])
        stats[meta.name] = {
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)),
            "min": float(col.min()),
            "q1": float(q1),
            "median": float(q2),
            "q3": float(q3),
            "max": float(col.max()),
        }
    return stats


def split(
    matrix: MetricMatrix, fraction: float, seed: int
) -> tuple[MetricMatrix, MetricMatrix]:
    """Seeded disjoint row partition with |train| = round-half-up(fraction*n)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    n = len(matrix.row_labels)
    n_train = int(np.floor(fraction * n + 0.5))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} rows at fraction {fraction} empties one side")
    order = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])

    def take(idx: np.ndarray) -> MetricMatrix:
        pos = {int(r): k for k, r in enumerate(idx)}
        return MetricMatrix(
            row_labels=[matrix.row_labels[i] for i in idx],
            columns=[
                ColumnMeta(
                    c.name,
                    c.reverse_scored,
                    {pos[r] for r in c.imputed_rows if r in pos},
                )
                for c in matrix.columns
            ],
            values=matrix.values[idx].copy(),
        )

    return take(train_idx), take(test_idx)


# ---------------------------------------------------------------------------
# persistence


def write_matrix_csv(matrix: MetricMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["project"] + matrix.column_names)
        for label, row in zip(matrix.row_labels, matrix.values):
            writer.writerow([label] + ["" if np.isnan(v) else repr(float(v)) for v in row])


def read_matrix_csv(path: str | Path) -> MetricMatrix:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        names = header[1:]
        labels: list[str] = []
        rows: list[list[float]] = []
        for line in reader:
            labels.append(line[0])
            rows.append([float(v) if v != "" else np.nan for v in line[1:]])
    columns = [ColumnMeta(n, n in REVERSE_SCORED_COLUMNS) for n in names]
    values = np.array(rows) if rows else np.empty((0, len(names)))
    return MetricMatrix(labels, columns, values)


def write_audit_sidecar(
    path: str | Path,
    matrix: MetricMatrix,
    report: ExclusionReport | None = None,
) -> None:
    """JSON-Lines audit: one line per imputed cell, one for exclusions."""
    with open(path, "w", encoding="utf-8") as handle:
        if report is not None:
            handle.write(
                json.dumps({"kind": "exclusions", **report.as_dict()}, sort_keys=True) + "\n"
            )
        for meta in matrix.columns:
            for row in sorted(meta.imputed_rows):
                handle.write(
                    json.dumps(
                        {
                            "kind": "imputed",
                            "column": meta.name,
                            "row": matrix.row_labels[row],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
