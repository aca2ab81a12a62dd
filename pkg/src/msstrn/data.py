"""Traffic series I/O, synthetic generation, windowing, splitting, normalization, metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .numeric import ConfigError, MsstrnError, ShapeError

STEPS_PER_DAY = 288


class DataError(MsstrnError, ValueError):
    pass


@dataclass
class TrafficSeries:
    values: np.ndarray  # L x N
    interval_minutes: int = 5
    node_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise DataError(f"series must be a nonempty L x N matrix, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataError("series contains NaN or infinite values")
        if not self.node_ids:
            self.node_ids = [str(i) for i in range(self.values.shape[1])]
        if len(self.node_ids) != self.values.shape[1]:
            raise DataError(f"{len(self.node_ids)} node ids for {self.values.shape[1]} columns")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]


def load_series(path: str | Path, missing: str = "reject", interval_minutes: int = 5) -> TrafficSeries:
    """Read a CSV whose header lists node ids and whose rows are time steps.

    Empty cells and ``nan`` are missing values: ``missing="reject"`` raises,
    ``missing="zero"`` fills them with 0.
    """
    if missing not in ("reject", "zero"):
        raise ConfigError(f"missing must be 'reject' or 'zero', got {missing!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(cell.strip() for cell in header):
            raise DataError(f"{path}:1: empty file or missing header")
        node_ids = [cell.strip() for cell in header]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(node_ids):
                raise DataError(f"{path}:{line_no}: expected {len(node_ids)} values, got {len(row)}")
            parsed = []
            for cell in row:
                cell = cell.strip()
                if cell == "" or cell.lower() == "nan":
                    if missing == "reject":
                        raise DataError(f"{path}:{line_no}: missing value")
                    parsed.append(0.0)
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{line_no}: non-numeric cell {cell!r}") from None
                if not math.isfinite(value):
                    raise DataError(f"{path}:{line_no}: non-finite cell {cell!r}")
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return TrafficSeries(np.array(rows), interval_minutes, node_ids)


def save_series(series: TrafficSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(series.node_ids)
        for row in series.values:
            writer.writerow([repr(float(v)) for v in row])


def synth_base(n_nodes: int, length: int) -> np.ndarray:
    """Diurnal sinusoid per node: sin(2*pi*t/288 + 2*pi*n/n_nodes)."""
    t = np.arange(length)[:, None]
    phase = 2.0 * np.pi * np.arange(n_nodes)[None, :] / n_nodes
    return np.sin(2.0 * np.pi * t / STEPS_PER_DAY + phase)


def synth_generate(n_nodes: int, length: int, coupling: float = 0.5, noise_std: float = 0.05,
                   seed: int = 0) -> TrafficSeries:
    """Ring-coupled diurnal series.

    x[t, n] = base[t, n] + coupling * mean(x[t-1, n-1], x[t-1, n+1]) + noise,
    with ring neighbours (a single node is its own neighbour) and no coupling
    term at t = 0.
    """
    if n_nodes < 1 or length < 1:
        raise ConfigError("n_nodes and length must be >= 1")
    if not 0.0 <= coupling <= 1.0:
        raise ConfigError(f"coupling must lie in [0, 1], got {coupling}")
    rng = np.random.default_rng(seed)
    base = synth_base(n_nodes, length)
    noise = rng.normal(0.0, noise_std, size=(length, n_nodes)) if noise_std > 0 else np.zeros_like(base)
    left = (np.arange(n_nodes) - 1) % n_nodes
    right = (np.arange(n_nodes) + 1) % n_nodes
    values = np.empty_like(base)
    values[0] = base[0] + noise[0]
    for t in range(1, length):
        prev = values[t - 1]
        values[t] = base[t] + coupling * 0.5 * (prev[left] + prev[right]) + noise[t]
    return TrafficSeries(values, 5, [f"node{i}" for i in range(n_nodes)])


@dataclass
class SynthConfig:
    nodes: int = 8
    length: int = 2000
    coupling: float = 0.5
    noise_std: float = 0.05
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    def generate(self) -> TrafficSeries:
        return synth_generate(self.nodes, self.length, self.coupling, self.noise_std, self.seed)


@dataclass
class SampleSet:
    """Windows cut from one series: inputs normalized, targets in original units."""

    inputs: np.ndarray   # M x T x N x 1
    targets: np.ndarray  # M x T' x N x 1
    mean: float = 0.0
    std: float = 1.0
    node_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, start: int, stop: int) -> "SampleSet":
        return SampleSet(self.inputs[start:stop], self.targets[start:stop], self.mean, self.std, self.node_ids)

    def normalized_targets(self) -> np.ndarray:
        return (self.targets - self.mean) / self.std


STD_FLOOR = 1e-8


def zscore_stats(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), max(float(values.std()), STD_FLOOR)


def zscore(series: TrafficSeries, fit_rows: int | None = None) -> tuple[TrafficSeries, float, float]:
    """Global z-score; statistics come from the first ``fit_rows`` rows (all rows by default)."""
    fit = series.values if fit_rows is None else series.values[:fit_rows]
    if fit.size == 0:
        raise DataError("no values to fit normalization statistics")
    mean, std = zscore_stats(fit)
    normalized = TrafficSeries((series.values - mean) / std, series.interval_minutes, list(series.node_ids))
    return normalized, mean, std


def denormalize(values, mean: float, std: float):
    return values * std + mean


def window_split(series: TrafficSeries, input_len: int, output_len: int) -> SampleSet:
    """Stride-1 sliding windows, both halves in the series' own units."""
    if input_len < 1 or output_len < 1:
        raise ConfigError("input_len and output_len must be >= 1")
    L, N = series.values.shape
    M = max(0, L - input_len - output_len + 1)
    if M == 0:
        return SampleSet(np.zeros((0, input_len, N, 1)), np.zeros((0, output_len, N, 1)),
                         node_ids=list(series.node_ids))
    idx = np.arange(M)[:, None]
    x = series.values[idx + np.arange(input_len)[None, :]]
    y = series.values[idx + input_len + np.arange(output_len)[None, :]]
    return SampleSet(x[..., None], y[..., None], node_ids=list(series.node_ids))


def split_sizes(M: int, ratios=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    if M < 3:
        raise DataError(f"need at least 3 samples to split, got {M}")
    n_train = math.floor(M * ratios[0])
    n_val = math.floor(M * ratios[1])
    return n_train, n_val, M - n_train - n_val


def chrono_split(samples: SampleSet, ratios=(0.6, 0.2, 0.2)) -> tuple[SampleSet, SampleSet, SampleSet]:
    n_train, n_val, _ = split_sizes(len(samples), ratios)
    return (samples.subset(0, n_train),
            samples.subset(n_train, n_train + n_val),
            samples.subset(n_train + n_val, len(samples)))


def prepare_dataset(series: TrafficSeries, input_len: int = 12, output_len: int = 12,
                    ratios=(0.6, 0.2, 0.2), stats: tuple[float, float] | None = None,
                    ) -> tuple[SampleSet, SampleSet, SampleSet]:
    """Window, split chronologically, and normalize inputs with training statistics.

    The statistics are fitted on the rows that feed the training windows'
    inputs, so later values never influence them. Pass ``stats=(mean, std)``
    to reuse statistics from an earlier fit instead.
    """
    raw = window_split(series, input_len, output_len)
    n_train, _, _ = split_sizes(len(raw), ratios)
    if stats is None:
        _, mean, std = zscore(series, fit_rows=n_train + input_len - 1)
    else:
        mean, std = float(stats[0]), max(float(stats[1]), STD_FLOOR)
    raw.mean, raw.std = mean, std
    raw.inputs = (raw.inputs - mean) / std
    return chrono_split(raw, ratios)


def train_series_std(series: TrafficSeries, input_len: int = 12, output_len: int = 12,
                     ratios=(0.6, 0.2, 0.2)) -> float:
    M = max(0, series.length - input_len - output_len + 1)
    n_train, _, _ = split_sizes(M, ratios)
    return float(series.values[:n_train + input_len - 1].std())


class Metrics(NamedTuple):
    mae: float
    rmse: float
    mape: float  # percent; NaN when every truth entry is masked


def metrics(pred, truth, mask_eps: float = 1e-3) -> Metrics:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"pred {pred.shape} and truth {truth.shape} differ")
    err = pred - truth
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    mask = np.abs(truth) >= mask_eps
    mape = float(100.0 * np.abs(err[mask] / truth[mask]).mean()) if mask.any() else float("nan")
    return Metrics(mae, rmse, mape)


def persistence_forecast(samples: SampleSet) -> np.ndarray:
    """Last observed value repeated over the horizon, in original units."""
    last = denormalize(samples.inputs[:, -1:, :, :], samples.mean, samples.std)
    return np.repeat(last, samples.targets.shape[1], axis=1)
