"""Incomplete matrix/tensor time series: containers, CSV I/O, masking, metrics.

Missing cells are stored as NaN under ``mask == False`` and are never read
as data by the samplers.
"""
import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np


class ParseError(ValueError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class UndefinedMetricError(ValueError):
    """Raised when a metric has no admissible entries to average over."""


class MaskWarning(UserWarning):
    pass


class _Series:
    ndim = None

    def __init__(self, values, mask=None, period=None):
        values = np.array(values, dtype=float)
        if values.ndim != self.ndim:
            raise ValueError(f"{type(self).__name__} needs a {self.ndim}-d array, got shape {values.shape}")
        if mask is None:
            mask = np.isfinite(values)
        else:
            mask = np.array(mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValueError(f"mask shape {mask.shape} != values shape {values.shape}")
            mask &= np.isfinite(values)
        if min(values.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {values.shape}")
        T = values.shape[-1]
        period = T if period is None else int(period)
        if not 0 < period <= T:
            raise ValueError(f"period must satisfy 0 < period <= {T}, got {period}")
        values[~mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        self.values = values
        self.mask = mask
        self.period = period

    @property
    def n_steps(self):
        return self.values.shape[-1]

    @property
    def shape(self):
        return self.values.shape

    def filled(self, fill=0.0):
        """Writable copy with unobserved cells set to ``fill``."""
        return np.where(self.mask, self.values, fill)

    def with_mask(self, mask):
        return type(self)(self.values, self.mask & np.asarray(mask, dtype=bool), self.period)

    def slice_time(self, start, stop):
        return type(self)(self.values[..., start:stop], self.mask[..., start:stop], min(self.period, stop - start))

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.period == other.period
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values[self.mask], other.values[other.mask])
        )

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape}, observed={int(self.mask.sum())}, period={self.period})"


class SeriesMatrix(_Series):
    """N series by T steps."""

    ndim = 2

    @property
    def n_series(self):
        return self.values.shape[0]


class SeriesTensor(_Series):
    """M x N x T tensor time series; fiber (i, j, :) is one series."""

    ndim = 3

    @property
    def dims(self):
        return self.values.shape


# --------------------------------------------------------------------------
# CSV


def _parse_float(field, path, line):
    s = field.strip()
    if s == "" or s.lower() == "nan":
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise ParseError(path, line, f"cannot parse {field!r} as a number") from None


def _is_numeric_row(row):
    for field in row:
        s = field.strip()
        if s == "" or s.lower() == "nan":
            continue
        try:
            float(s)
        except ValueError:
            return False
    return True


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = [(n, row) for n, row in enumerate(csv.reader(fh), start=1) if row and any(f.strip() for f in row)]
    if rows and not _is_numeric_row(rows[0][1]):
        return rows[0][1], rows[1:]
    return None, rows


def _read_matrix_csv(path, period):
    _, rows = _read_rows(path)
    if not rows:
        raise ParseError(path, 1, "no data rows")
    width = len(rows[0][1])
    values = []
    for line, row in rows:
        if len(row) != width:
            raise ParseError(path, line, f"expected {width} fields, found {len(row)}")
        values.append([_parse_float(f, path, line) for f in row])
    return SeriesMatrix(np.array(values), period=period)


def _read_tensor_csv(path, period, dims):
    header, rows = _read_rows(path)
    if header is not None:
        names = [h.strip().lower() for h in header]
        if names != ["i", "j", "t", "value"]:
            raise ParseError(path, 1, f"expected header i,j,t,value, got {','.join(header)}")
    idx = np.empty((len(rows), 3), dtype=np.int64)
    vals = np.empty(len(rows))
    for k, (line, row) in enumerate(rows):
        if len(row) != 4:
            raise ParseError(path, line, f"expected 4 fields (i,j,t,value), found {len(row)}")
        for c in range(3):
            try:
                idx[k, c] = int(row[c].strip())
            except ValueError:
                raise ParseError(path, line, f"index {row[c]!r} is not an integer") from None
            if idx[k, c] < 0:
                raise ParseError(path, line, f"negative index {idx[k, c]}")
        vals[k] = _parse_float(row[3], path, line)
    if dims is None:
        if not rows:
            raise ParseError(path, 1, "no data rows and no dims given")
        dims = tuple(int(v) + 1 for v in idx.max(axis=0))
    dims = tuple(int(v) for v in dims)
    for k, (line, _) in enumerate(rows):
        if np.any(idx[k] >= dims):
            raise ParseError(path, line, f"index {tuple(idx[k])} outside dims {dims}")
    flat = np.ravel_multi_index(idx.T, dims) if rows else np.zeros(0, dtype=np.int64)
    uniq, counts = np.unique(flat, return_counts=True)
    if np.any(counts > 1):
        dup = uniq[counts > 1][0]
        k = int(np.flatnonzero(flat == dup)[1])
        raise ParseError(path, rows[k][0], f"duplicate cell {tuple(int(v) for v in idx[k])}")
    values = np.full(dims, np.nan)
    values.flat[flat] = vals
    return SeriesTensor(values, period=period)


def load_series(path, format="matrix-csv", period=None, dims=None):
    """Read a matrix CSV (rows = series) or a long tensor CSV (i,j,t,value)."""
    if format == "matrix-csv":
        return _read_matrix_csv(path, period)
    if format == "tensor-long-csv":
        return _read_tensor_csv(path, period, dims)
    raise ValueError(f"unknown format {format!r}")


def _fmt(v):
    return "" if not np.isfinite(v) else repr(float(v))


def write_matrix_csv(path, array, mask=None):
    array = np.asarray(array, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i, row in enumerate(array):
            if mask is None:
                w.writerow([_fmt(v) for v in row])
            else:
                w.writerow([_fmt(v) if m else "" for v, m in zip(row, mask[i])])


def write_tensor_csv(path, array, mask=None):
    array = np.asarray(array, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "t", "value"])
        for (i, j, t), v in np.ndenumerate(array):
            keep = True if mask is None else mask[i, j, t]
            w.writerow([i, j, t, _fmt(v) if keep else ""])


def save_series(data, path):
    if isinstance(data, SeriesTensor):
        write_tensor_csv(path, data.values, data.mask)
    else:
        write_matrix_csv(path, data.values, data.mask)


def write_array(path, array):
    """Write a dense result array in the format matching its rank."""
    array = np.asarray(array)
    if array.ndim == 3:
        write_tensor_csv(path, array)
    else:
        write_matrix_csv(path, np.atleast_2d(array))


def read_index(path, shape):
    """Boolean selection array from a 0/1 matrix CSV or a long i,j,t,value CSV."""
    if len(shape) == 3:
        sel = _read_tensor_csv(path, None, shape)
        return sel.mask & (sel.filled(0.0) != 0)
    sel = _read_matrix_csv(path, None)
    if sel.shape != tuple(shape):
        raise ValueError(f"index file {path} has shape {sel.shape}, expected {tuple(shape)}")
    return sel.mask & (sel.filled(0.0) != 0)


def write_index(path, selection):
    selection = np.asarray(selection, dtype=bool)
    if selection.ndim == 3:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "t", "value"])
            for i, j, t in zip(*np.nonzero(selection)):
                w.writerow([i, j, t, 1])
    else:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in selection.astype(int):
                w.writerow(row.tolist())


# --------------------------------------------------------------------------
# masking


@dataclass(frozen=True)
class MaskSpec:
    scenario: str
    rate: float
    seed: int = 0

    def __post_init__(self):
        scen = self.scenario.upper()
        if scen not in ("RM", "NM"):
            raise ValueError(f"scenario must be RM or NM, got {self.scenario!r}")
        object.__setattr__(self, "scenario", scen)
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"rate must lie in [0, 1), got {self.rate}")


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def apply_mask(data, spec):
    """Hide observed cells according to ``spec``.

    RM removes individual observed cells uniformly at random. NM removes
    whole (series, day) blocks of ``data.period`` consecutive steps.
    Returns the masked series and a boolean array of held-out cells, all
    of which were observed in ``data``.
    """
    rng = np.random.default_rng(spec.seed)
    held = np.zeros(data.shape, dtype=bool)
    if spec.scenario == "RM":
        observed = np.flatnonzero(data.mask)
        k = _round_half_up(spec.rate * observed.size)
        if k:
            held.flat[rng.choice(observed, size=k, replace=False)] = True
    else:
        T0 = data.period
        if data.n_steps % T0:
            raise ValueError(f"NM masking needs T ({data.n_steps}) divisible by the period ({T0})")
        n_days = data.n_steps // T0
        lead = data.shape[:-1]
        n_fibers = int(np.prod(lead)) * n_days
        k = _round_half_up(spec.rate * n_fibers)
        if k:
            chosen = rng.choice(n_fibers, size=k, replace=False)
            blocks = held.reshape(*lead, n_days, T0).reshape(-1, T0)
            blocks[chosen] = True
            held = blocks.reshape(data.shape)
        held &= data.mask
    masked = data.with_mask(~held)
    before = data.mask.any(axis=-1)
    after = masked.mask.any(axis=-1)
    lost = np.argwhere(before & ~after)
    if lost.size:
        warnings.warn(f"{len(lost)} series lost all observations after masking", MaskWarning, stacklevel=2)
    return masked, held


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MapeResult:
    value: float
    n_used: int
    n_excluded: int


def mape_details(actual, estimate):
    """MAPE in percent, skipping entries whose actual value is exactly zero."""
    actual = np.asarray(actual, dtype=float).ravel()
    estimate = np.asarray(estimate, dtype=float).ravel()
    if actual.shape != estimate.shape:
        raise ValueError(f"length mismatch: {actual.size} vs {estimate.size}")
    keep = actual != 0
    n = int(keep.sum())
    if n == 0:
        raise UndefinedMetricError("MAPE is undefined: no non-zero actual values")
    value = float(np.mean(np.abs(actual[keep] - estimate[keep]) / actual[keep]) * 100.0)
    return MapeResult(value, n, int(actual.size - n))


def mape(actual, estimate):
    return mape_details(actual, estimate).value


def rmse(actual, estimate):
    actual = np.asarray(actual, dtype=float).ravel()
    estimate = np.asarray(estimate, dtype=float).ravel()
    if actual.shape != estimate.shape:
        raise ValueError(f"length mismatch: {actual.size} vs {estimate.size}")
    if actual.size == 0:
        raise UndefinedMetricError("RMSE is undefined for empty input")
    return float(np.sqrt(np.mean((actual - estimate) ** 2)))
