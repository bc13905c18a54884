"""Monthly hydrological series: loading, synthesis, scaling, windowing, splitting.

The modelling problem is one-step-ahead spring discharge forecasting: the
discharge ``Q(t)`` is predicted from the previous months' precipitation at nine
stations and the previous months' discharge.
"""

from __future__ import annotations

import configparser
import csv
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

N_STATIONS = 9
DEFAULT_STATIONS = tuple(f"P{i}" for i in range(1, N_STATIONS + 1))
# Multi-year mean annual precipitation (mm) at the nine gauges around the spring.
STATION_ANNUAL_MEANS = (504.67, 564.08, 494.54, 542.93, 563.89, 537.41, 558.42, 556.00, 590.23)
# Smallest and largest monthly discharge on record (m^3/s).
DISCHARGE_RANGE = (2.54, 6.89)

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


class DataError(ValueError):
    """Base class for invalid input data."""


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class DegenerateColumnError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


def parse_month(text: str) -> tuple[int, int]:
    m = _MONTH_RE.match(text.strip())
    if not m:
        raise ParseError(f"not a YYYY-MM month: {text!r}")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ParseError(f"month out of range: {text!r}")
    return year, month


def format_month(year: int, month: int) -> str:
    return f"{year:04d}-{month:02d}"


def add_months(start: tuple[int, int], k: int) -> tuple[int, int]:
    idx = start[0] * 12 + (start[1] - 1) + k
    return idx // 12, idx % 12 + 1


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValidationError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeriesTable:
    """Contiguous monthly records: ``precipitation`` is (T, 9) in mm, ``discharge`` is (T,) in m^3/s."""

    start: tuple[int, int]
    precipitation: np.ndarray
    discharge: np.ndarray
    station_names: tuple[str, ...] = DEFAULT_STATIONS
    discharge_name: str = "Q"

    def __post_init__(self):
        object.__setattr__(self, "precipitation", _frozen(self.precipitation, 2))
        object.__setattr__(self, "discharge", _frozen(self.discharge, 1))
        object.__setattr__(self, "station_names", tuple(self.station_names))
        T = self.discharge.shape[0]
        if self.precipitation.shape != (T, N_STATIONS):
            raise ValidationError(
                f"precipitation must be ({T}, {N_STATIONS}), got {self.precipitation.shape}")
        if len(self.station_names) != N_STATIONS:
            raise ValidationError(f"need {N_STATIONS} station names, got {len(self.station_names)}")
        if T < 2:
            raise ValidationError(f"need at least 2 months, got {T}")
        if not (np.all(np.isfinite(self.precipitation)) and np.all(np.isfinite(self.discharge))):
            raise ValidationError("non-finite values in table")
        if np.any(self.precipitation < 0):
            r, c = np.argwhere(self.precipitation < 0)[0]
            raise ValidationError(
                f"negative precipitation at {self.month_label(r)} station {self.station_names[c]}")
        if np.any(self.discharge <= 0):
            r = int(np.argmax(self.discharge <= 0))
            raise ValidationError(f"non-positive discharge at {self.month_label(r)}")

    def __len__(self) -> int:
        return self.discharge.shape[0]

    def month_label(self, k: int) -> str:
        return format_month(*add_months(self.start, int(k)))

    @property
    def months(self) -> list[str]:
        return [self.month_label(k) for k in range(len(self))]

    @property
    def columns(self) -> np.ndarray:
        """(T, 10) matrix: nine precipitation columns followed by discharge."""
        return np.column_stack([self.precipitation, self.discharge])

    @property
    def header(self) -> list[str]:
        return ["date", *self.station_names, self.discharge_name]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for k in range(len(self)):
                w.writerow([self.month_label(k),
                            *(repr(float(v)) for v in self.precipitation[k]),
                            repr(float(self.discharge[k]))])


def load_csv(path) -> TimeSeriesTable:
    """Read a ``date,P1..P9,Q`` monthly CSV.

    Station and discharge column names are taken from the header as-is; only
    the position matters. Dates must be ``YYYY-MM`` and strictly consecutive.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) != N_STATIONS + 2:
        raise ParseError(f"{path}: header must name {N_STATIONS + 2} columns, got {len(header)}")
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if len(body) < 2:
        raise ParseError(f"{path}: need at least 2 data rows, got {len(body)}")

    start = None
    values = np.empty((len(body), N_STATIONS + 1))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise ParseError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        try:
            ym = parse_month(row[0])
        except ParseError as exc:
            raise ParseError(f"{path}: line {line}: {exc}") from None
        if start is None:
            start = ym
        elif ym != add_months(start, i):
            raise ParseError(
                f"{path}: line {line}: month {row[0].strip()} breaks contiguity "
                f"(expected {format_month(*add_months(start, i))})")
        try:
            values[i] = [float(cell) for cell in row[1:]]
        except ValueError:
            raise ParseError(f"{path}: line {line}: non-numeric value") from None

    return TimeSeriesTable(start=start, precipitation=values[:, :N_STATIONS],
                           discharge=values[:, N_STATIONS],
                           station_names=tuple(header[1:-1]), discharge_name=header[-1])


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic rainfall/discharge generator.

    Precipitation is seasonal with multiplicative log-normal noise (a regional
    factor shared by all stations plus a weaker local factor). Discharge
    follows a latent AR(1) storage driven by the previous month's relative
    rainfall anomaly; the storage is mapped into ``discharge_range`` through a
    logistic rating curve whose steepness is ``rating_gain``.
    """

    months: int = 384
    station_annual_means: tuple[float, ...] = STATION_ANNUAL_MEANS
    discharge_range: tuple[float, float] = DISCHARGE_RANGE
    seasonal_amplitude: float = 0.9
    autocorrelation: float = 0.9
    seed: int = 7
    start: str = "1987-01"
    precip_noise: float = 1.0
    rainfall_response: float = 1.0
    discharge_noise: float = 0.01
    rating_gain: float = 2.0
    burn_in: int = 60

    def __post_init__(self):
        object.__setattr__(self, "station_annual_means",
                           tuple(float(v) for v in self.station_annual_means))
        object.__setattr__(self, "discharge_range", tuple(float(v) for v in self.discharge_range))
        if self.months < 24:
            raise ValidationError(f"months must be >= 24, got {self.months}")
        if len(self.station_annual_means) != N_STATIONS:
            raise ValidationError(f"need {N_STATIONS} station means")
        if any(v <= 0 for v in self.station_annual_means):
            raise ValidationError("station annual means must be positive")
        lo, hi = self.discharge_range
        if not 0 < lo < hi:
            raise ValidationError(f"discharge_range must satisfy 0 < min < max, got {self.discharge_range}")
        if not 0 <= self.seasonal_amplitude <= 1:
            raise ValidationError("seasonal_amplitude must lie in [0, 1]")
        if not 0 <= self.autocorrelation < 1:
            raise ValidationError("autocorrelation must lie in [0, 1)")
        if min(self.precip_noise, self.discharge_noise, self.rating_gain, self.burn_in) < 0:
            raise ValidationError("noise levels, rating_gain and burn_in must be non-negative")
        parse_month(self.start)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["station_annual_means"] = list(self.station_annual_means)
        d["discharge_range"] = list(self.discharge_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synthetic parameters: {sorted(unknown)}")
        return cls(**d)

    def to_ini(self, path) -> None:
        """Write a ``[synthetic]`` section of ``key = value`` lines (JSON values)."""
        lines = ["[synthetic]"] + [f"{k} = {json.dumps(v)}" for k, v in self.to_dict().items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_ini(cls, path) -> "SyntheticSpec":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            if not parser.read(path, encoding="utf-8"):
                raise FileNotFoundError(f"spec file not found: {path}")
            section = parser["synthetic"]
            return cls.from_dict({k: json.loads(v) for k, v in section.items()})
        except (configparser.Error, KeyError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: malformed synthetic spec ({exc})") from None


def generate_synthetic(spec: SyntheticSpec) -> TimeSeriesTable:
    rng = np.random.default_rng(spec.seed)
    start = parse_month(spec.start)
    total = spec.months + spec.burn_in
    first = add_months(start, -spec.burn_in)

    month0 = (first[1] - 1 + np.arange(total)) % 12
    # wet season peaks between July and August
    season = 1.0 + spec.seasonal_amplitude * np.cos(2 * np.pi * (month0 - 6.5) / 12)

    s_reg = spec.precip_noise
    s_loc = 0.5 * spec.precip_noise
    regional = np.exp(s_reg * rng.standard_normal(total) - 0.5 * s_reg ** 2)
    local = np.exp(s_loc * rng.standard_normal((total, N_STATIONS)) - 0.5 * s_loc ** 2)
    monthly_means = np.asarray(spec.station_annual_means) / 12.0
    precip = monthly_means * (season * regional)[:, None] * local

    anomaly = (precip / monthly_means).mean(axis=1) - 1.0
    shocks = spec.discharge_noise * rng.standard_normal(total)
    storage = np.zeros(total)
    for t in range(1, total):
        storage[t] = (spec.autocorrelation * storage[t - 1]
                      + spec.rainfall_response * anomaly[t - 1] + shocks[t])

    precip = precip[spec.burn_in:]
    storage = storage[spec.burn_in:]
    lo, hi = spec.discharge_range
    spread = storage.std()
    if spread == 0.0:
        discharge = np.full(spec.months, 0.5 * (lo + hi))
    else:
        level = spec.rating_gain * (storage - storage.mean()) / spread
        discharge = lo + (hi - lo) / (1.0 + np.exp(-level))
    return TimeSeriesTable(start=start, precipitation=precip, discharge=discharge)


@dataclass(frozen=True)
class NormalizationParams:
    """Per-column min/max of the ten model columns (P1..P9, Q)."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mins", _frozen(self.mins, 1))
        object.__setattr__(self, "maxs", _frozen(self.maxs, 1))
        if self.mins.shape != self.maxs.shape:
            raise ValidationError("mins and maxs differ in length")
        bad = np.flatnonzero(~(self.maxs > self.mins))
        if bad.size:
            raise DegenerateColumnError(f"columns {bad.tolist()} have max <= min")

    def column(self, j: int) -> tuple[float, float]:
        return float(self.mins[j]), float(self.maxs[j])

    @property
    def discharge(self) -> tuple[float, float]:
        return self.column(-1)

    def transform(self, columns: np.ndarray) -> np.ndarray:
        return normalize(columns, self.mins, self.maxs)

    def inverse(self, columns: np.ndarray) -> np.ndarray:
        return denormalize(columns, self.mins, self.maxs)

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(mins=d["mins"], maxs=d["maxs"])


def normalize(value, lo, hi):
    """Min-max scaling; values outside ``[lo, hi]`` map outside ``[0, 1]`` unclipped."""
    return (np.asarray(value, dtype=np.float64) - lo) / (np.asarray(hi, dtype=np.float64) - lo)


def denormalize(value, lo, hi):
    return lo + np.asarray(value, dtype=np.float64) * (np.asarray(hi, dtype=np.float64) - lo)


def _as_range(rows, T: int) -> range:
    if isinstance(rows, slice):
        rows = range(*rows.indices(T))
    elif not isinstance(rows, range):
        rows = range(*rows)
    if len(rows) == 0:
        raise ValidationError("row range is empty")
    if rows.step != 1 or rows.start < 0 or rows.stop > T:
        raise ValidationError(f"row range {rows} not a contiguous range within 0..{T}")
    return rows


def fit_normalizer(table: TimeSeriesTable, rows=None) -> NormalizationParams:
    """Column min/max over ``rows`` (a range, slice or (start, stop) pair; default all rows)."""
    rows = _as_range(rows if rows is not None else range(len(table)), len(table))
    block = table.columns[rows.start:rows.stop]
    return NormalizationParams(mins=block.min(axis=0), maxs=block.max(axis=0))


def training_rows(train_len: int, n: int = 1, m: int = 1) -> range:
    """Table rows touched by the first ``train_len`` supervised rows."""
    return range(0, train_len + max(n, m))


@dataclass(frozen=True)
class SupervisedDataset:
    """Lagged design matrix and next-month discharge targets, both normalized.

    Input columns are ``P1..P9`` at lags 1..n (lag-major), then ``Q`` at lags
    1..m; with n = m = 1 column 9 is ``Q(t-1)``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    lag_n: int
    lag_m: int
    norm: NormalizationParams
    target_months: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "inputs", _frozen(self.inputs, 2))
        object.__setattr__(self, "targets", _frozen(self.targets, 1))
        object.__setattr__(self, "target_months", tuple(self.target_months))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValidationError("inputs and targets differ in row count")
        if self.inputs.shape[1] != N_STATIONS * self.lag_n + self.lag_m:
            raise ValidationError("input width does not match the lag layout")
        if self.target_months and len(self.target_months) != len(self.targets):
            raise ValidationError("target_months length mismatch")

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def discharge_feature(self) -> int:
        """Column index of Q(t-1)."""
        return N_STATIONS * self.lag_n

    def rows(self, start: int, stop: int) -> "SupervisedDataset":
        months = self.target_months[start:stop] if self.target_months else ()
        return SupervisedDataset(self.inputs[start:stop], self.targets[start:stop],
                                 self.lag_n, self.lag_m, self.norm, months)

    def physical_targets(self) -> np.ndarray:
        return denormalize(self.targets, *self.norm.discharge)


def make_supervised(table: TimeSeriesTable, n: int = 1, m: int = 1,
                    norm: NormalizationParams | None = None) -> SupervisedDataset:
    if n < 1 or m < 1:
        raise ValidationError(f"lags must be >= 1, got n={n}, m={m}")
    T = len(table)
    lag = max(n, m)
    if T <= lag:
        raise InsufficientDataError(f"{T} months cannot support lag {lag}")
    if norm is None:
        norm = fit_normalizer(table)
    scaled = norm.transform(table.columns)
    P, Q = scaled[:, :N_STATIONS], scaled[:, N_STATIONS]
    targets_idx = np.arange(lag, T)
    parts = [P[targets_idx - k] for k in range(1, n + 1)]
    parts += [Q[targets_idx - k][:, None] for k in range(1, m + 1)]
    months = tuple(table.month_label(k) for k in targets_idx)
    return SupervisedDataset(np.hstack(parts), Q[targets_idx], n, m, norm, months)


def split_contiguous(dataset: SupervisedDataset, train_len: int):
    """First ``train_len`` rows for training, the rest for testing; order kept."""
    N = len(dataset)
    if not 0 < train_len < N:
        raise ValidationError(f"train_len must satisfy 0 < train_len < {N}, got {train_len}")
    return dataset.rows(0, train_len), dataset.rows(train_len, N)


def prepare(table: TimeSeriesTable, train_len: int, n: int = 1, m: int = 1):
    """Fit the scaler on the training block, window the table and split it.

    Returns ``(train, test)``; both share the training-period normalization.
    """
    lag = max(n, m)
    if not 0 < train_len < len(table) - lag:
        raise ValidationError(
            f"train_len must satisfy 0 < train_len < {len(table) - lag}, got {train_len}")
    norm = fit_normalizer(table, training_rows(train_len, n, m))
    return split_contiguous(make_supervised(table, n, m, norm), train_len)


def make_sequences(inputs: np.ndarray, seq_len: int) -> np.ndarray:
    """Stack each row with its ``seq_len - 1`` predecessors: (N - seq_len + 1, seq_len, F)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if seq_len < 1:
        raise ValidationError("seq_len must be >= 1")
    N = inputs.shape[0]
    if N < seq_len:
        raise InsufficientDataError(f"{N} rows cannot form sequences of length {seq_len}")
    idx = np.arange(seq_len)[None, :] + np.arange(N - seq_len + 1)[:, None]
    return inputs[idx]

