"""Return matrices: the synthetic generator and CSV ingestion with cleaning."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import AllMissingColumnError, ParseError

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})
INDEX_HEADERS = frozenset({"date", "time", "timestamp", "day"})
DEFAULT_OUTLIER_CUTOFF = 10.0


class CovarianceNotPSD(UserWarning):
    """The requested covariance had negative eigenvalues; they were clipped at 0."""


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    m: int
    seed: int = 0
    corr_coef: float = 0.35
    mean_range: tuple = (0.05, 0.50)
    std_offset: float = 0.05

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        lo, hi = self.mean_range
        if not lo <= hi:
            raise ValueError("mean_range must be increasing")

    def means(self) -> np.ndarray:
        lo, hi = self.mean_range
        if self.n == 1:
            return np.array([float(lo)])
        return np.linspace(lo, hi, self.n)

    def stds(self) -> np.ndarray:
        return self.means() + self.std_offset

    def correlation(self) -> np.ndarray:
        s = self.stds()
        r = self.corr_coef * np.sqrt(np.outer(s, s))
        np.fill_diagonal(r, 1.0)
        return r

    def covariance(self) -> np.ndarray:
        s = self.stds()
        return self.correlation() * np.outer(s, s)


@dataclass
class ReturnsTable:
    """m x n returns (rows are dates, ascending) with column labels."""

    returns: np.ndarray
    labels: list = field(default_factory=list)
    provenance: str = ""

    def __post_init__(self):
        self.returns = np.ascontiguousarray(self.returns, dtype=float)
        if self.returns.ndim != 2:
            raise ValueError("returns must be a 2-D array")
        if not self.labels:
            self.labels = [f"a{j}" for j in range(self.returns.shape[1])]
        if len(self.labels) != self.returns.shape[1]:
            raise ValueError("one label per column is required")
        if not np.isfinite(self.returns).all():
            raise ValueError("returns must be finite")

    @property
    def shape(self):
        return self.returns.shape

    def window(self, start: int, stop: int) -> np.ndarray:
        return self.returns[start:stop]


def _factor(cov: np.ndarray) -> np.ndarray:
    """Lower factor L with L L^T = cov; clips negative eigenvalues if needed."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < 0:
        warnings.warn(
            f"covariance has eigenvalue {vals.min():.3e}; clipping negatives at 0", CovarianceNotPSD
        )
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def generate_synthetic(spec: SyntheticSpec) -> ReturnsTable:
    """Multivariate normal returns with evenly spaced means and the fixed correlation rule.

    Draws come from ``numpy.random.default_rng(seed)`` (PCG64, standard normal)
    and are mapped through the Cholesky factor of the covariance.
    """
    rng = np.random.default_rng(spec.seed)
    L = _factor(spec.covariance())
    Zs = rng.standard_normal((spec.m, spec.n))
    R = Zs @ L.T
    R += spec.means()
    return ReturnsTable(R, [f"a{j}" for j in range(spec.n)], f"synthetic(seed={spec.seed})")


def _parse_cell(text: str, row: int, col: int) -> float:
    t = text.strip()
    if t.lower() in MISSING_TOKENS:
        return math.nan
    try:
        v = float(t)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", row, col) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value: {text!r}", row, col)
    return v


def read_raw_csv(path) -> tuple:
    """Read a header-plus-rows CSV into (values with NaN for missing, labels).

    A first column headed ``date`` (or time, timestamp, day) is treated as a
    row index and dropped.  Rows and columns in errors are 1-based, counting
    the header as row 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", 1, 0)
    header = [h.strip() for h in rows[0]]
    skip = 1 if header and header[0].lower() in INDEX_HEADERS else 0
    labels = header[skip:]
    if not labels:
        raise ParseError("header has no asset columns", 1, 0)
    width = len(header)
    values = np.empty((len(rows) - 1, len(labels)))
    for i, row in enumerate(rows[1:], start=2):
        if not row and width == 1:
            row = [""]  # a blank line is a missing cell in a one-column file
        if len(row) != width:
            raise ParseError(f"expected {width} fields, found {len(row)}", i, len(row))
        for j, cell in enumerate(row[skip:]):
            values[i - 2, j] = _parse_cell(cell, i, j + skip + 1)
    if values.shape[0] == 0:
        raise ParseError("no data rows", 2, 0)
    return values, labels


def loo_zscores(column: np.ndarray) -> np.ndarray:
    """|z| of each entry against the mean and std of the other entries.

    NaNs are ignored and get score 0.  With fewer than three observed
    entries every score is 0.  A zero spread among the others gives score
    inf for any entry that differs from them.
    """
    col = np.asarray(column, dtype=float)
    obs = ~np.isnan(col)
    k = int(obs.sum())
    z = np.zeros(col.shape)
    if k < 3:
        return z
    v = col[obs]
    c = v - v.mean()
    ss = float(np.dot(c, c))
    # Others' mean is mean - c_i/(k-1); their variance follows from the centered sums.
    var = (ss - c * c) / (k - 1) - (c / (k - 1)) ** 2
    diff = np.abs(c) * k / (k - 1)
    tiny = 1e-12 * max(float(np.abs(v).max()), 1.0)
    sd = np.sqrt(np.clip(var, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        zi = np.where(sd > tiny, diff / sd, np.where(diff > tiny, np.inf, 0.0))
    z[obs] = zi
    return z


def clean_returns(values: np.ndarray, labels: Sequence[str], outlier_zscore_cutoff: Optional[float]):
    """Null outliers (leave-one-out |z| above the cutoff), then mean-impute every gap."""
    X = np.array(values, dtype=float, copy=True)
    for j in range(X.shape[1]):
        col = X[:, j]
        if outlier_zscore_cutoff is not None:
            col[loo_zscores(col) > outlier_zscore_cutoff] = np.nan
        obs = ~np.isnan(col)
        if not obs.any():
            raise AllMissingColumnError(f"column {labels[j]!r} has no usable entries")
        col[~obs] = col[obs].mean()
    return X


def ingest_csv(
    path, outlier_zscore_cutoff: Optional[float] = DEFAULT_OUTLIER_CUTOFF, impute: str = "column_mean"
) -> ReturnsTable:
    """Load a returns CSV, null outliers and impute missing cells with column means.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV with a header row of asset labels; rows are dates in
        ascending order.
    outlier_zscore_cutoff : float or None
        Cells whose leave-one-out |z| exceeds this are treated as missing.
        ``None`` disables the check.
    impute : {"column_mean"}
    """
    if impute != "column_mean":
        raise ValueError(f"unsupported imputation {impute!r}")
    values, labels = read_raw_csv(path)
    X = clean_returns(values, labels, outlier_zscore_cutoff)
    return ReturnsTable(X, labels, f"csv({path})")


def write_csv(table: ReturnsTable, path) -> None:
    """Write with round-trip precision so reading back gives identical floats."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.labels)
        for row in table.returns:
            w.writerow([repr(float(v)) for v in row])


def read_vector_csv(path) -> np.ndarray:
    """One number per line (an optional non-numeric header line is skipped)."""
    values, _ = _read_vector(Path(path))
    return values


def _read_vector(path: Path):
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = None
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            header, rows = rows[0], rows[1:]
    out = np.empty(len(rows))
    start = 2 if header else 1
    for i, r in enumerate(rows):
        if len(r) != 1:
            raise ParseError(f"expected one field, found {len(r)}", i + start, len(r))
        v = _parse_cell(r[0], i + start, 1)
        if math.isnan(v):
            raise ParseError("missing value", i + start, 1)
        out[i] = v
    if out.size == 0:
        raise ParseError("no values", start, 0)
    return out, header


def write_vector_csv(values, path, header: str = "value") -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for v in np.asarray(values, dtype=float).reshape(-1):
            fh.write(repr(float(v)) + "\n")
