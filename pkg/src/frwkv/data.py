"""Benchmark CSV ingestion, chronological splits, sliding windows and a
synthetic periodic generator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ProtocolError

# name -> (input length, horizons, batch size)
PROTOCOLS = {
    "ETTh1": (96, (96, 192, 336, 720), 32),
    "ETTh2": (96, (96, 192, 336, 720), 32),
    "ETTm1": (96, (96, 192, 336, 720), 32),
    "ETTm2": (96, (96, 192, 336, 720), 32),
    "Weather": (96, (96, 192, 336, 720), 32),
    "Exchange": (96, (96, 192, 336, 720), 32),
    "ILI": (36, (24, 36, 48, 60), 16),
}

ETT_HOURS_MONTH = 30 * 24


@dataclass
class SeriesTable:
    values: np.ndarray                 # [total_T, N]
    columns: list[str]
    timestamps: list[str] | None = None

    @property
    def total_len(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path) -> SeriesTable:
    """Read a benchmark-style CSV (optional leading date column, numeric rest)."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ProtocolError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise ProtocolError(f"{path}: header only, no data rows")
    has_date = header[0].strip().lower() in ("date", "time", "timestamp", "datetime") \
        or not _is_float(body[0][0])
    first = 1 if has_date else 0
    columns = [c.strip() for c in header[first:]]
    values = np.empty((len(body), len(columns)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ProtocolError(f"{path}: row {i + 1} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row[first:]):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ProtocolError(f"{path}: unparseable cell {cell!r} at row {i + 1}, "
                                    f"column {j + first} ({columns[j]})") from None
        if not np.isfinite(values[i]).all():
            raise ProtocolError(f"{path}: non-finite value in row {i + 1}")
    stamps = [r[0] for r in body] if has_date else None
    return SeriesTable(values, columns, stamps)


def write_csv(table: SeriesTable, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        stamps = table.timestamps
        w.writerow((["date"] if stamps else []) + list(table.columns))
        for i, row in enumerate(table.values):
            w.writerow(([stamps[i]] if stamps else []) + [repr(float(v)) for v in row])


def infer_kind(name: str) -> str:
    stem = Path(str(name)).stem
    if stem.startswith("ETTh"):
        return "ETTh"
    if stem.startswith("ETTm"):
        return "ETTm"
    return "ratio"


@dataclass
class SplitSpec:
    """Row ranges ``[start, end)`` per split. Val/test starts include ``seq_len``
    rows of context taken from the preceding split."""

    kind: str
    seq_len: int
    bounds: dict[str, tuple[int, int]]
    sizes: dict[str, int]
    mean: np.ndarray
    std: np.ndarray
    stats_source: str = "train"


def split(table: SeriesTable, kind: str, seq_len: int, horizon: int,
          ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> SplitSpec:
    n = table.total_len
    if kind in ("ETTh", "ETTm"):
        unit = ETT_HOURS_MONTH * (4 if kind == "ETTm" else 1)
        n_train, n_val, n_test = 12 * unit, 4 * unit, 4 * unit
        if n < n_train + n_val + n_test:
            raise ProtocolError(f"{kind} split needs {n_train + n_val + n_test} rows, got {n}")
    elif kind == "ratio":
        n_train = int(n * ratios[0])
        n_test = int(n * ratios[2])
        n_val = n - n_train - n_test
    else:
        raise ProtocolError(f"unknown split kind {kind!r}")
    train_end = n_train
    val_end = n_train + n_val
    test_end = val_end + n_test
    bounds = {
        "train": (0, train_end),
        "val": (max(train_end - seq_len, 0), val_end),
        "test": (max(val_end - seq_len, 0), test_end),
    }
    for name, (a, b) in bounds.items():
        if b - a < seq_len + horizon:
            raise ProtocolError(f"{name} segment has {b - a} rows, needs >= {seq_len + horizon}")
    train = table.values[:train_end]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return SplitSpec(kind, seq_len, bounds, {"train": n_train, "val": n_val, "test": n_test},
                     mean, std)


@dataclass
class WindowSet:
    inputs: np.ndarray   # [n, T, N]
    targets: np.ndarray  # [n, H, N]

    def __len__(self) -> int:
        return len(self.inputs)


def windows(segment: np.ndarray, seq_len: int, horizon: int) -> WindowSet:
    """Stride-1 sliding windows; ``len(segment) - seq_len - horizon + 1`` of them."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.ndim == 1:
        segment = segment[:, None]
    if len(segment) < seq_len + horizon:
        raise ProtocolError(f"segment of length {len(segment)} shorter than "
                            f"seq_len + horizon = {seq_len + horizon}")
    view = np.lib.stride_tricks.sliding_window_view(segment, seq_len + horizon, axis=0)
    view = np.moveaxis(view, -1, 1)  # [n, T+H, N]
    return WindowSet(view[:, :seq_len].copy(), view[:, seq_len:].copy())


@dataclass
class PreparedData:
    spec: SplitSpec
    sets: dict[str, WindowSet] = field(default_factory=dict)

    def __getitem__(self, name: str) -> WindowSet:
        return self.sets[name]


def prepare(table: SeriesTable, kind: str, seq_len: int, horizon: int) -> PreparedData:
    """Split, z-score with train statistics only, and window every split."""
    spec = split(table, kind, seq_len, horizon)
    scaled = (table.values - spec.mean) / spec.std
    sets = {name: windows(scaled[a:b], seq_len, horizon) for name, (a, b) in spec.bounds.items()}
    return PreparedData(spec, sets)


def iterate_batches(n: int, batch_size: int, seed: int | None = None):
    """Index batches; shuffled by ``seed`` when given, sequential otherwise."""
    order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def synth_periodic(n_vars: int, total_len: int, period: float, phase_jitter: float = 0.0,
                   noise_std: float = 0.1, seed: int = 0, trend: float = 0.5) -> SeriesTable:
    """Sinusoid at ``period`` + slow linear trend + Gaussian noise, per variable.

    ``phase_jitter`` is the std of a per-step random walk added to the phase.
    ``trend`` bounds the total drift of each variable over the series.
    """
    if n_vars < 1 or total_len < 1 or period <= 0 or noise_std < 0 or phase_jitter < 0:
        raise ProtocolError("synth_periodic needs positive sizes and non-negative noise levels")
    rng = np.random.default_rng(seed)
    t = np.arange(total_len, dtype=np.float64)
    amp = rng.uniform(0.5, 1.5, n_vars)
    phase0 = rng.uniform(0.0, 2 * math.pi, n_vars)
    slope = rng.uniform(-trend, trend, n_vars) / max(total_len, 1)
    walk = np.cumsum(rng.normal(0.0, 1.0, (total_len, n_vars)), axis=0) * phase_jitter
    noise = rng.normal(0.0, 1.0, (total_len, n_vars)) * noise_std
    phase = 2 * math.pi * t[:, None] / period + phase0 + walk
    values = amp * np.sin(phase) + slope * t[:, None] + noise
    stamps = [str(s) for s in np.datetime64("2020-01-01T00:00") + np.arange(total_len).astype("timedelta64[h]")]
    return SeriesTable(values, [f"x{i}" for i in range(n_vars)], [s.replace("T", " ") for s in stamps])
