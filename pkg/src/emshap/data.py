"""CSV ingestion and per-feature normalization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, UsageError

MISSING_MARKERS = {"", "na", "nan", "null", "?", "missing"}


@dataclass
class Dataset:
    feature_names: list[str]
    rows: np.ndarray                       # (n, d)
    target: np.ndarray | None = None       # (n,)
    target_name: str | None = None
    mean: np.ndarray = field(default=None)
    scale: np.ndarray = field(default=None)
    n_dropped: int = 0

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))
        if len(self.feature_names) != self.rows.shape[1]:
            raise DimensionMismatchError(
                "feature name count", self.rows.shape[1], len(self.feature_names))
        if self.mean is None:
            self.mean = self.rows.mean(axis=0) if self.rows.size else np.zeros(self.d)
        if self.scale is None:
            scale = self.rows.std(axis=0) if self.rows.size else np.ones(self.d)
            self.scale = np.where(scale > 0, scale, 1.0)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def normalized(self) -> np.ndarray:
        return (self.rows - self.mean) / self.scale

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.mean


def _parse_cell(cell: str):
    """Returns a float, None for a missing marker, or raises ValueError."""
    text = cell.strip()
    if text.lower() in MISSING_MARKERS:
        return None
    return float(text)


def ingest_csv(path, target: str | None = None) -> Dataset:
    """Parse a headered CSV into a numeric dataset.

    Rows containing missing-value markers are dropped and counted in
    ``n_dropped``. A cell that is neither numeric nor a missing marker is an
    error naming its row and column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target is not None and target not in header:
            raise UsageError(f"{path}: no column named {target!r}")
        target_pos = header.index(target) if target is not None else None

        kept, targets, dropped = [], [], 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise UsageError(
                    f"{path}: line {line_no} has {len(row)} cells, expected {len(header)}")
            values = []
            missing = False
            for col, cell in enumerate(row):
                try:
                    value = _parse_cell(cell)
                except ValueError:
                    raise UsageError(
                        f"{path}: line {line_no}, column {header[col]!r}: "
                        f"cannot parse {cell.strip()!r}") from None
                if value is None:
                    missing = True
                values.append(value)
            if missing:
                dropped += 1
                continue
            if target_pos is not None:
                targets.append(values.pop(target_pos))
            kept.append(values)

    feature_names = [h for i, h in enumerate(header) if i != target_pos]
    rows = np.asarray(kept, dtype=np.float64).reshape(len(kept), len(feature_names))
    return Dataset(
        feature_names, rows,
        target=np.asarray(targets) if target_pos is not None else None,
        target_name=target, n_dropped=dropped,
    )
