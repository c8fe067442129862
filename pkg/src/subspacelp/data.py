"""Panel ingestion and preparation: CSV loading, FRED transform codes,
lead/lag design assembly, principal components, factor-structure diagnostics.

Panels are immutable after load; every operation here is read-only and
returns new arrays, so concurrent use is safe.
"""
from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    DegenerateColumn,
    DimensionMismatch,
    DuplicateName,
    InsufficientSample,
    InvalidDimension,
    MissingVariable,
    ParseError,
    UnknownTcode,
)

_QUARTER_RE = re.compile(r"^\s*(\d{4})[:\-\s]?Q([1-4])\s*$", re.IGNORECASE)


def _date_keys(dates: Sequence[str]):
    """Comparable sort keys for date labels; parsing never reorders data."""
    labels = [str(d) for d in dates]
    try:
        return [float(d) for d in labels]
    except ValueError:
        pass
    if all(_QUARTER_RE.match(d) for d in labels):
        return [
            (int(m.group(1)), int(m.group(2)))
            for m in (_QUARTER_RE.match(d) for d in labels)
        ]
    try:
        parsed = pd.to_datetime(labels, format="mixed")
        if not parsed.isna().any():
            return list(parsed)
    except (ValueError, TypeError):
        pass
    return labels  # fall back to lexicographic comparison


@dataclass
class TimeSeriesPanel:
    """T x N observation matrix with names, dates, and optional metadata.

    Missing observations are NaN. Dates are ordered period labels and must
    be strictly increasing; ordering is validated, never inferred.
    """

    values: np.ndarray
    names: list[str]
    dates: list[str]
    categories: list[str] | None = None
    tcodes: list[int] | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.names = [str(n) for n in self.names]
        self.dates = [str(d) for d in self.dates]
        if self.values.ndim != 2:
            raise DimensionMismatch("panel values must be a T x N matrix")
        T, N = self.values.shape
        if len(self.names) != N:
            raise DimensionMismatch(f"{len(self.names)} names for {N} columns")
        if len(self.dates) != T:
            raise DimensionMismatch(f"{len(self.dates)} dates for {T} rows")
        if len(set(self.names)) != N:
            dupes = sorted({n for n in self.names if self.names.count(n) > 1})
            raise DuplicateName(f"duplicate variable names: {dupes}")
        keys = _date_keys(self.dates)
        if any(b <= a for a, b in zip(keys, keys[1:])):
            raise DimensionMismatch("dates must be strictly increasing")
        if self.categories is not None and len(self.categories) != N:
            raise DimensionMismatch("categories length must match columns")
        if self.tcodes is not None and len(self.tcodes) != N:
            raise DimensionMismatch("tcodes length must match columns")
        self._index = {n: j for j, n in enumerate(self.names)}

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self._index[name]]
        except KeyError:
            raise MissingVariable(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def with_columns(self, names: Sequence[str], values: np.ndarray) -> "TimeSeriesPanel":
        """New panel with extra columns appended; metadata padded with defaults."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        new_cats = None if self.categories is None else self.categories + [""] * len(names)
        new_tcodes = None if self.tcodes is None else self.tcodes + [1] * len(names)
        return TimeSeriesPanel(
            values=np.column_stack([self.values, values]),
            names=self.names + [str(n) for n in names],
            dates=self.dates,
            categories=new_cats,
            tcodes=new_tcodes,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.dates, columns=self.names)


def load_csv(
    path,
    date_column: int = 0,
    tcode_row: bool | str = "auto",
) -> TimeSeriesPanel:
    """Load a delimited panel: first row names, first column dates.

    FRED-style files carry a second header row of integer transform codes;
    with ``tcode_row="auto"`` it is detected from a "transform" label or an
    all-integer second row whose date cell is non-numeric. Empty cells become
    NaN; any other non-numeric cell raises ParseError with its location.
    """
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        raw = pd.read_csv(path, header=0, dtype=str, skipinitialspace=True)
    except (StopIteration, OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if raw.shape[1] < 2 or len(header) != raw.shape[1]:
        raise ParseError(f"{path}: need a date column plus at least one series")
    names = [str(c).strip() for c in header]
    date_name = names[date_column]
    series_names = [n for i, n in enumerate(names) if i != date_column]
    if len(set(series_names)) != len(series_names):
        dupes = sorted({n for n in series_names if series_names.count(n) > 1})
        raise DuplicateName(f"duplicate variable names: {dupes}")

    body = raw.copy()
    tcodes = None
    has_tcodes = bool(tcode_row) if tcode_row != "auto" else _looks_like_tcode_row(
        raw, date_column
    )
    if has_tcodes:
        if raw.shape[0] < 1:
            raise ParseError(f"{path}: tcode row expected but file has no rows")
        trow = raw.iloc[0]
        tcodes = []
        for i, n in enumerate(names):
            if i == date_column:
                continue
            cell = trow.iloc[i]
            try:
                tcodes.append(int(float(cell)))
            except (TypeError, ValueError):
                raise ParseError(
                    f"{path}: row 2, column '{n}': bad transform code {cell!r}"
                ) from None
        body = raw.iloc[1:].reset_index(drop=True)

    dates = [str(d).strip() for d in body.iloc[:, date_column]]
    cols = []
    for i, n in enumerate(names):
        if i == date_column:
            continue
        col_raw = body.iloc[:, i]
        col = pd.to_numeric(col_raw, errors="coerce").to_numpy(dtype=float)
        blank = col_raw.isna() | (col_raw.astype(str).str.strip() == "")
        bad = np.isnan(col) & ~blank.to_numpy()
        if bad.any():
            r = int(np.flatnonzero(bad)[0])
            raise ParseError(
                f"{path}: row {r + 2 + int(has_tcodes)}, column '{n}': "
                f"cannot parse {col_raw.iloc[r]!r}"
            )
        cols.append(col)
    _ = date_name
    return TimeSeriesPanel(
        values=np.column_stack(cols) if cols else np.empty((len(dates), 0)),
        names=series_names,
        dates=dates,
        tcodes=tcodes,
    )


def _looks_like_tcode_row(raw: pd.DataFrame, date_column: int) -> bool:
    if raw.shape[0] == 0:
        return False
    first = raw.iloc[0]
    date_cell = str(first.iloc[date_column]).strip().lower()
    if "transform" in date_cell:
        return True
    if not date_cell or date_cell == "nan":
        cells = [first.iloc[i] for i in range(raw.shape[1]) if i != date_column]
        try:
            return all(float(c) == int(float(c)) for c in cells)
        except (TypeError, ValueError):
            return False
    return False


def _transform_series(x: np.ndarray, code: int) -> np.ndarray:
    def diff(v):
        out = np.full_like(v, np.nan)
        out[1:] = v[1:] - v[:-1]
        return out

    def safe_log(v):
        out = np.full_like(v, np.nan)
        ok = np.isfinite(v) & (v > 0)
        out[ok] = np.log(v[ok])
        return out

    if code == 1:
        return x.copy()
    if code == 2:
        return diff(x)
    if code == 3:
        return diff(diff(x))
    if code == 4:
        return safe_log(x)
    if code == 5:
        return diff(safe_log(x))
    if code == 6:
        return diff(diff(safe_log(x)))
    if code == 7:
        growth = np.full_like(x, np.nan)
        growth[1:] = x[1:] / x[:-1] - 1.0
        return diff(growth)
    raise UnknownTcode(f"transform code {code} outside 1-7")


def apply_tcodes(panel: TimeSeriesPanel) -> TimeSeriesPanel:
    """Apply the standard FRED transform codes 1-7 column by column.

    Leading observations consumed by differencing become NaN.
    """
    if panel.tcodes is None:
        raise InvalidDimension("panel carries no transform codes")
    out = np.column_stack(
        [
            _transform_series(panel.values[:, j], int(code))
            for j, code in enumerate(panel.tcodes)
        ]
    )
    return replace(panel, values=out)


def lead(series: np.ndarray, m: int) -> np.ndarray:
    """series shifted forward: out[t] = series[t + m], NaN-padded."""
    out = np.full(series.shape, np.nan)
    if m == 0:
        return series.astype(float).copy()
    out[:-m] = series[m:]
    return out


def lag(series: np.ndarray, m: int) -> np.ndarray:
    """out[t] = series[t - m]; negative m is a lead."""
    if m < 0:
        return lead(series, -m)
    out = np.full(series.shape, np.nan)
    if m == 0:
        return series.astype(float).copy()
    out[m:] = series[:-m]
    return out


@dataclass
class DesignArrays:
    """Aligned, listwise-complete arrays for one LP regression."""

    response: np.ndarray
    impulse: np.ndarray
    instrument: np.ndarray | None
    controls: np.ndarray
    rows: np.ndarray  # panel row index of each retained observation


def build_design(panel: TimeSeriesPanel, spec, horizon: int, draw=None) -> DesignArrays:
    """Assemble the horizon-h regression arrays for one (optional) draw.

    The response is the plain h-step lead or the level change
    y_{t+h} - y_{t-1}, per the problem description; controls are stacked
    essential-first, then the draw-selected candidates. Rows with any
    missing entry are dropped listwise.
    """
    from .lp import LPSpec, make_cumulative_target  # local import: avoid cycle

    assert isinstance(spec, LPSpec)
    if horizon < 0:
        raise InvalidDimension("horizon must be nonnegative")
    resp = panel.column(spec.response)
    if spec.response_transform == "level_change":
        y = lead(resp, horizon) - lag(resp, 1)
    else:
        y = lead(resp, horizon)
    if spec.identification == "svar":
        x = make_cumulative_target(panel.column(spec.impulse), spec.svar_lead)
    else:
        x = panel.column(spec.impulse).astype(float)
    z = panel.column(spec.instrument) if spec.instrument else None
    ctrl_cols = [lag(panel.column(v), L) for v, L in spec.essential_controls]
    cand = list(spec.candidate_controls)
    if draw is not None:
        for i in draw.indices:
            v, L = cand[int(i)]
            ctrl_cols.append(lag(panel.column(v), L))
    C = np.column_stack(ctrl_cols) if ctrl_cols else np.empty((panel.n_obs, 0))
    stacked = [y, x] + ([z] if z is not None else []) + [C[:, j] for j in range(C.shape[1])]
    ok = np.all(np.isfinite(np.column_stack(stacked)), axis=1)
    rows = np.flatnonzero(ok)
    if rows.size == 0:
        raise InsufficientSample(f"no complete rows at horizon {horizon}")
    return DesignArrays(
        response=y[rows],
        impulse=x[rows],
        instrument=None if z is None else z[rows],
        controls=C[rows],
        rows=rows,
    )


@dataclass
class PCAResult:
    """Principal components of a standardized panel.

    ``explained`` are eigenvalue shares of total (unit) variance, weakly
    decreasing; ``factors`` are mutually orthogonal in sample.
    """

    factors: np.ndarray
    loadings: np.ndarray
    explained: np.ndarray
    kept_columns: np.ndarray


def pca(matrix, m: int, standardize: bool = True) -> PCAResult:
    """Top-m eigenpairs of the sample correlation (default) or covariance matrix.

    Zero-variance columns are dropped with a warning. ``explained`` is
    lambda_i / N over the kept columns.
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch("pca input must be 2-D")
    T, N = X.shape
    if m < 1 or m > min(T, N):
        raise InvalidDimension(f"need 1 <= m <= min(T, N) = {min(T, N)}")
    sd = X.std(axis=0)
    keep = np.flatnonzero(sd > 0)
    if keep.size < N:
        warnings.warn(
            f"dropping {N - keep.size} zero-variance column(s) before PCA",
            DegenerateColumn,
            stacklevel=2,
        )
        X = X[:, keep]
        sd = sd[keep]
        if m > min(T, keep.size):
            m = min(T, keep.size)
    centered = X - X.mean(axis=0)
    Xs = centered / sd if standardize else centered
    S = (Xs.T @ Xs) / T
    eigval, eigvec = np.linalg.eigh(S)
    order = np.argsort(eigval)[::-1]
    eigval = np.maximum(eigval[order], 0.0)
    eigvec = eigvec[:, order]
    total = Xs.shape[1] if standardize else float(eigval.sum())
    return PCAResult(
        factors=Xs @ eigvec[:, :m],
        loadings=eigvec[:, :m],
        explained=eigval[:m] / total,
        kept_columns=keep,
    )


def factor_structure_report(panel, max_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative variance shares of the first 1..max_components correlation PCs.

    Accepts a TimeSeriesPanel or a plain matrix; rows with any missing value
    are dropped. Returns (component numbers, cumulative shares).
    """
    X = panel.values if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, float)
    ok = np.all(np.isfinite(X), axis=1)
    X = X[ok]
    m = int(max_components)
    if m > min(X.shape):
        raise InvalidDimension(f"max_components {m} exceeds min(T, N) = {min(X.shape)}")
    res = pca(X, m)
    return np.arange(1, res.explained.size + 1), np.cumsum(res.explained)
