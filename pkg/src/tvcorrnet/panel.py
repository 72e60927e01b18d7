"""Multivariate time series panels: ingestion, differencing, lag stacking.

Observations sit on the canonical grid t_j = j/n. The one-based index
j runs 1..n; arrays are stored 0-based with the mapping j = k + 1 for
array position k. Panels are immutable after construction and safe to
share across threads.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

MIN_ROWS = 20
MIN_COLS = 2


class PanelError(ValueError):
    """Raised for malformed input panels or invalid panel operations."""


def _freeze(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeriesPanel:
    """n x p observation matrix; row k holds time t = (k+1)/n."""

    values: np.ndarray
    labels: tuple

    def __post_init__(self):
        values = _freeze(self.values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))
        n, p = values.shape
        if n < MIN_ROWS:
            raise PanelError(f"panel needs at least {MIN_ROWS} rows, got {n}")
        if p < MIN_COLS:
            raise PanelError(f"panel needs at least {MIN_COLS} columns, got {p}")
        if len(self.labels) != p:
            raise PanelError(f"{len(self.labels)} labels for {p} columns")
        if len(set(self.labels)) != p:
            raise PanelError("labels must be unique")
        if not np.all(np.isfinite(values)):
            k, i = np.argwhere(~np.isfinite(values))[0]
            raise PanelError(f"non-finite value at row {k + 1}, column {self.labels[i]!r}")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def times(self):
        """Observation times t_j = j/n, j = 1..n."""
        n = self.n
        return np.arange(1, n + 1) / n


@dataclass(frozen=True)
class DifferencedPanel:
    """Lag-h differences y_{j,i} = Y_{j,i} - Y_{j-h,i}, j = h+1..n.

    Row k of `diffs` holds one-based index j = k + h + 1.
    """

    h: int
    diffs: np.ndarray
    n: int
    p: int
    labels: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "diffs", _freeze(self.diffs))
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.diffs.shape != (self.n - self.h, self.p):
            raise PanelError("differenced panel has inconsistent shape")

    def grid_indices(self):
        """Paper indices j = h+1..n for the rows of `diffs`."""
        return np.arange(self.h + 1, self.n + 1)


def load_csv(path, has_header=True):
    """Load a comma-separated UTF-8 panel; rows in time order.

    An optional single header row provides labels, otherwise columns are
    named x1..xp. Every cell must parse as a finite real; the panel must
    be rectangular.
    """
    rows = []
    labels = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if has_header and labels is None:
                labels = [c.strip() for c in row]
                continue
            parsed = []
            for colno, cell in enumerate(row, start=1):
                try:
                    x = float(cell)
                except ValueError:
                    raise PanelError(
                        f"cannot parse {cell!r} at row {lineno}, column {colno} of {path}"
                    ) from None
                if not math.isfinite(x):
                    raise PanelError(
                        f"non-finite value {cell!r} at row {lineno}, column {colno} of {path}"
                    )
                parsed.append(x)
            if rows and len(parsed) != len(rows[0]):
                raise PanelError(
                    f"ragged row at line {lineno}: {len(parsed)} cells, expected {len(rows[0])}"
                )
            rows.append(parsed)
    if not rows:
        raise PanelError(f"no data rows in {path}")
    values = np.array(rows, dtype=np.float64)
    p = values.shape[1]
    if labels is None:
        labels = [f"x{i + 1}" for i in range(p)]
    elif len(labels) != p:
        raise PanelError(f"header has {len(labels)} fields for {p} data columns")
    return TimeSeriesPanel(values, labels)


def write_csv(panel, path):
    """Write a panel to CSV with a header; exact float round trip."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(panel.labels)
        for row in panel.values:
            writer.writerow([f"{x:.17g}" for x in row])


def difference(panel, h):
    """Lag-h differences of a panel; requires 1 <= h < n/4."""
    n = panel.n
    if not (1 <= h < n / 4):
        raise PanelError(f"lag h={h} out of range [1, n/4) for n={n}")
    values = panel.values
    diffs = values[h:, :] - values[:-h, :]
    return DifferencedPanel(h=h, diffs=diffs, n=n, p=panel.p, labels=panel.labels)


def stack_lags(panel, K):
    """Concatenate rows (Y_j, Y_{j+1}, ..., Y_{j+K}) into a wider panel.

    Returns an (n-K) x p(K+1) panel whose labels carry the lag index.
    K = 0 returns an identical panel.
    """
    n, p = panel.n, panel.p
    if not (0 <= K < n / 10):
        raise PanelError(f"lag stack K={K} out of range [0, n/10) for n={n}")
    if K == 0:
        return TimeSeriesPanel(panel.values, panel.labels)
    values = np.hstack([panel.values[k : n - K + k, :] for k in range(K + 1)])
    labels = [f"{lab}+{k}" for k in range(K + 1) for lab in panel.labels]
    return TimeSeriesPanel(values, labels)
