"""Tabulation of dichotomous response matrices into distinct patterns."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class IngestionError(ValueError):
    """Malformed response data; carries the offending 1-based location."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        where = ""
        if row is not None:
            where = f" (row {row}" + (f", column {col})" if col is not None else ")")
        super().__init__(message + where)
        self.row = row
        self.col = col


@dataclass(frozen=True)
class PatternData:
    """Distinct response patterns with their frequencies.

    patterns : (P, I) uint8 array, rows lexicographically sorted
    freqs    : (P,) int64 array, all >= 1
    """

    patterns: np.ndarray
    freqs: np.ndarray

    @property
    def n_items(self) -> int:
        return self.patterns.shape[1]

    @property
    def n_persons(self) -> int:
        return int(self.freqs.sum())

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[0]

    def to_matrix(self) -> np.ndarray:
        """Expand back to one row per person (pattern order, not input order)."""
        return np.repeat(self.patterns, self.freqs, axis=0)


def tabulate(matrix) -> PatternData:
    """Collapse an N x I matrix of 0/1 responses into distinct patterns.

    Patterns are ordered lexicographically for determinism.  Items that
    nobody or everybody solved are allowed but flagged with a warning,
    since their log-odds are only defined through clamping downstream.
    """
    try:
        arr = np.asarray(matrix)
    except ValueError as exc:
        raise IngestionError(f"ragged response matrix: {exc}") from exc
    if arr.dtype == object:
        raise IngestionError("ragged response matrix: rows have unequal lengths")
    if arr.ndim != 2 or arr.size == 0:
        raise IngestionError(
            f"response matrix must be a nonempty 2-d array, got shape {arr.shape}"
        )

    bad = (arr != 0) & (arr != 1)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise IngestionError(
            f"response values must be 0 or 1, got {arr[r, c]!r}",
            row=int(r) + 1,
            col=int(c) + 1,
        )

    arr = arr.astype(np.uint8)
    totals = arr.sum(axis=0)
    n = arr.shape[0]
    for j, t in enumerate(totals):
        if t == 0 or t == n:
            warnings.warn(
                f"item {j + 1} was answered {'in' if t == 0 else ''}correctly by "
                "every person; its estimates rely on clamped log-odds",
                stacklevel=2,
            )

    pats, counts = np.unique(arr, axis=0, return_counts=True)
    pats.setflags(write=False)
    counts = counts.astype(np.int64)
    counts.setflags(write=False)
    return PatternData(patterns=pats, freqs=counts)


def item_totals(data: PatternData) -> np.ndarray:
    """Number of correct responses per item, N1_j = sum_X N_X * X_j."""
    return data.patterns.T.astype(np.int64) @ data.freqs


def load_response_csv(path: str | Path) -> np.ndarray:
    """Read a response CSV: one person per row, comma-separated 0/1 values.

    An optional header row is detected by the presence of any token that is
    not 0 or 1.  Accepts LF or CRLF line endings.
    """
    rows: list[list[int]] = []
    width: int | None = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, record in enumerate(reader, start=1):
            if not record or all(tok.strip() == "" for tok in record):
                continue
            tokens = [tok.strip() for tok in record]
            if lineno == 1 and any(tok not in ("0", "1") for tok in tokens):
                continue  # header row
            parsed = []
            for col, tok in enumerate(tokens, start=1):
                if tok not in ("0", "1"):
                    raise IngestionError(
                        f"expected 0 or 1, got {tok!r}", row=lineno, col=col
                    )
                parsed.append(int(tok))
            if width is None:
                width = len(parsed)
            elif len(parsed) != width:
                raise IngestionError(
                    f"row has {len(parsed)} values, expected {width}", row=lineno
                )
            rows.append(parsed)
    if not rows:
        raise IngestionError(f"no response rows found in {path}")
    return np.array(rows, dtype=np.uint8)
