"""Accuracy bookkeeping, continual-learning metrics, and footprint accounting.

The accuracy matrix holds a_{k,j}: accuracy on test split j measured at
evaluation point k. In class-incremental runs row k covers exactly the
first k tasks, making the matrix lower-triangular; task-free runs may
produce ragged rows (a row covers every original task whose data has
arrived by that evaluation point).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StateError

DGC_METHODS = ("DGC", "DGC-combined")


class AccuracyMatrix:
    """Rows of per-task accuracies appended as evaluation points complete."""

    def __init__(self, expected_rows: int | None = None):
        self._rows: list[list[float]] = []
        self.expected_rows = expected_rows

    @classmethod
    def from_rows(cls, rows, expected_rows: int | None = None) -> "AccuracyMatrix":
        m = cls(expected_rows=expected_rows if expected_rows is not None else len(rows))
        for row in rows:
            m.add_row(row)
        return m

    def add_row(self, accs) -> None:
        row = [float(a) for a in accs]
        if not row:
            raise ValueError("an evaluation row needs at least one entry")
        if any(not (0.0 <= a <= 1.0) for a in row):
            raise ValueError(f"accuracies must lie in [0,1], got {row}")
        if self._rows and len(row) < len(self._rows[-1]):
            raise ValueError("row widths must be non-decreasing")
        self._rows.append(row)

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    def row(self, i: int) -> list[float]:
        """1-based row access; raises if the row has not been recorded yet."""
        if not (1 <= i <= self.n_rows):
            raise StateError(f"row {i} is not complete ({self.n_rows} rows recorded)")
        return list(self._rows[i - 1])

    def entry(self, k: int, j: int) -> float:
        row = self.row(k)
        if not (1 <= j <= len(row)):
            raise StateError(f"row {k} has no column {j}")
        return row[j - 1]

    def is_complete(self) -> bool:
        return self.expected_rows is None or self.n_rows >= self.expected_rows

    def to_lists(self) -> list[list[float]]:
        return [list(r) for r in self._rows]

    def __eq__(self, other) -> bool:
        return isinstance(other, AccuracyMatrix) and self._rows == other._rows

    def __repr__(self) -> str:
        return f"AccuracyMatrix({self._rows!r})"


def aa(matrix: AccuracyMatrix, i: int) -> float:
    """Average accuracy at evaluation point i: mean of row i."""
    return float(np.mean(matrix.row(i)))


def _require_complete(matrix: AccuracyMatrix):
    if not matrix.is_complete():
        raise StateError(
            f"matrix has {matrix.n_rows} of {matrix.expected_rows} rows; metric undefined"
        )
    if matrix.n_rows == 0:
        raise StateError("matrix is empty")


def faia(matrix: AccuracyMatrix) -> float:
    """Mean of the average accuracies over all evaluation points."""
    _require_complete(matrix)
    return float(np.mean([aa(matrix, i) for i in range(1, matrix.n_rows + 1)]))


def faa(matrix: AccuracyMatrix) -> float:
    """Average accuracy at the final evaluation point."""
    _require_complete(matrix)
    return aa(matrix, matrix.n_rows)


def ff(matrix: AccuracyMatrix) -> float:
    """Final forgetting: mean over past tasks of (best earlier accuracy on
    the task) minus (final accuracy on it). Undefined for a single row."""
    _require_complete(matrix)
    t = matrix.n_rows
    if t < 2:
        raise ValueError("forgetting needs at least two evaluation points")
    last = matrix._rows[-1]
    drops = []
    for j in range(1, len(last) + 1):
        earlier = [r[j - 1] for r in matrix._rows[:-1] if len(r) >= j]
        if earlier:
            drops.append(max(earlier) - last[j - 1])
    if not drops:
        raise ValueError("no task appears both before and at the final evaluation")
    return float(np.mean(drops))


class LossTrajectory:
    """(step, loss) pairs with strictly increasing step indices."""

    def __init__(self):
        self.steps: list[int] = []
        self.losses: list[float] = []

    def append(self, step: int, value: float) -> None:
        if self.steps and step <= self.steps[-1]:
            raise ValueError(f"step {step} not after {self.steps[-1]}")
        self.steps.append(int(step))
        self.losses.append(float(value))

    def __len__(self) -> int:
        return len(self.steps)

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.steps, self.losses))


@dataclass(frozen=True)
class SmoothnessStats:
    mean_abs_increment: float
    std_increment: float
    max_spike: float


def smoothness_stats(trajectory: LossTrajectory) -> SmoothnessStats:
    """Statistics of consecutive loss differences: average magnitude,
    spread, and the largest upward jump."""
    if len(trajectory) < 2:
        raise ValueError("need at least two trajectory points")
    diffs = np.diff(np.asarray(trajectory.losses))
    return SmoothnessStats(
        mean_abs_increment=float(np.mean(np.abs(diffs))),
        std_increment=float(np.std(diffs)),
        max_spike=float(np.max(diffs)),
    )


@dataclass(frozen=True)
class FootprintReport:
    buffer_bytes: int
    calibrator_bytes: int
    model_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.buffer_bytes + self.calibrator_bytes + self.model_bytes

    def to_dict(self) -> dict:
        return {
            "buffer_bytes": self.buffer_bytes,
            "calibrator_bytes": self.calibrator_bytes,
            "model_bytes": self.model_bytes,
            "total_bytes": self.total_bytes,
        }


def sample_nbytes(dimension: int) -> int:
    """Stored size of one sample: d float64 features plus an int64 label."""
    return dimension * 8 + 8


def footprint(method: str, buffer, model_spec, sample_bytes: int | None = None) -> FootprintReport:
    """Memory accounting for a trained method.

    Plain replay stores nothing beyond the buffer; every snapshot-carrying
    method persists two extra parameter-sized vectors (the calibration
    vector and the snapshot), i.e. 2 * param_dim * 8 bytes.
    """
    p = model_spec.param_dim
    if sample_bytes is None:
        sample_bytes = sample_nbytes(model_spec.input_dim)
    stored = len(buffer) if buffer is not None else 0
    return FootprintReport(
        buffer_bytes=stored * sample_bytes,
        calibrator_bytes=0 if method == "ER" else 2 * p * 8,
        model_bytes=p * 8,
    )


def equal_footprint_capacity(base_capacity: int, model_spec, sample_bytes: int | None = None) -> int:
    """Replay-buffer capacity that matches a calibrated method's total
    footprint: the two parameter vectors converted into extra samples."""
    if sample_bytes is None:
        sample_bytes = sample_nbytes(model_spec.input_dim)
    extra = -(-2 * model_spec.param_dim * 8 // sample_bytes)  # ceil division
    return base_capacity + int(extra)
