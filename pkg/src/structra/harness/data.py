"""CSV ingestion, sliding windows and chronological splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass
class DatasetSplit:
    inputs: np.ndarray   # W x C x T
    targets: np.ndarray  # W x C x H
    starts: np.ndarray   # window start index into the source series
    tag: str
    source: str = ""

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_len(self) -> int:
        return self.inputs.shape[-1]

    @property
    def horizon(self) -> int:
        return self.targets.shape[-1]

    def target_span(self) -> tuple[int, int]:
        """First and last target time index covered by this split."""
        t = self.input_len
        return int(self.starts.min()) + t, int(self.starts.max()) + t + self.horizon - 1

    def time_span(self) -> tuple[int, int]:
        return int(self.starts.min()), int(self.starts.max()) + self.input_len + self.horizon - 1

    def subset(self, index) -> "DatasetSplit":
        return replace(self, inputs=self.inputs[index], targets=self.targets[index],
                       starts=self.starts[index])


def read_csv_series(path) -> tuple[np.ndarray, list[str]]:
    """Channels x time matrix from a CSV whose first column is a timestamp."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 2:
            raise DatasetError(f"{path}: need a header with a timestamp and at least one channel")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}: line {line_no} has {len(row)} fields, expected {len(header)}")
            values = []
            for col, cell in enumerate(row[1:], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(f"{path}: line {line_no}, column {header[col]!r}: "
                                       f"non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise DatasetError(f"{path}: line {line_no}, column {header[col]!r}: non-finite value")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return np.array(rows, dtype=float).T, header[1:]


def window_count(length: int, input_len: int, horizon: int) -> int:
    return max(length - input_len - horizon + 1, 0)


def make_windows(values: np.ndarray, input_len: int, horizon: int, starts=None):
    values = np.asarray(values, dtype=float)
    if starts is None:
        starts = np.arange(window_count(values.shape[1], input_len, horizon))
    starts = np.asarray(starts, dtype=np.int64)
    offsets = starts[:, None] + np.arange(input_len + horizon)
    block = values[:, offsets].transpose(1, 0, 2)  # W x C x (T+H)
    return block[..., :input_len].copy(), block[..., input_len:].copy(), starts


def split_windows(values: np.ndarray, input_len: int, horizon: int,
                  ratios=(0.7, 0.1, 0.2), source: str = "") -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Stride-1 windows split by where their targets fall on the time axis.

    Train windows lie entirely before the train boundary; val and test windows
    have targets entirely inside their segment (inputs may reach back).
    Windows straddling a boundary are dropped.
    """
    length = values.shape[1]
    if window_count(length, input_len, horizon) < 1:
        raise DatasetError(f"series of length {length} is too short for T={input_len}, H={horizon}")
    train_end = int(round(length * ratios[0]))
    val_end = int(round(length * (ratios[0] + ratios[1])))
    s = np.arange(window_count(length, input_len, horizon))
    t0, t1 = s + input_len, s + input_len + horizon
    masks = {
        "train": t1 <= train_end,
        "val": (t0 >= train_end) & (t1 <= val_end),
        "test": t0 >= val_end,
    }
    out = []
    for tag, mask in masks.items():
        if not mask.any():
            raise DatasetError(f"series of length {length} leaves no {tag} windows "
                               f"for T={input_len}, H={horizon}")
        x, y, st = make_windows(values, input_len, horizon, s[mask])
        out.append(DatasetSplit(x, y, st, tag, source))
    return tuple(out)


def load_csv_dataset(path, input_len: int = 96, horizon: int = 16, split_ratios=(0.7, 0.1, 0.2)):
    values, _ = read_csv_series(path)
    return split_windows(values, input_len, horizon, split_ratios, source=Path(path).stem)


def few_shot_subset(split: DatasetSplit, fraction: float) -> DatasetSplit:
    """Chronologically earliest ``ceil(fraction * len)`` windows."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    count = math.ceil(fraction * len(split))
    if count < 1:
        raise DatasetError("few-shot subset is empty")
    order = np.argsort(split.starts, kind="stable")[:count]
    return split.subset(np.sort(order))


def assert_no_leakage(train: DatasetSplit, *later: DatasetSplit) -> None:
    last_train = train.time_span()[1]
    for split in later:
        first_target = split.target_span()[0]
        if first_target <= last_train:
            raise AssertionError(f"{split.tag} target at t={first_target} does not follow "
                                 f"training data ending at t={last_train}")


def sinusoid_mixture(length: int = 2000, channels: int = 3, period: float = 24.0,
                     noise: float = 0.05, seed: int = 0) -> np.ndarray:
    """``channels x length`` mixture of a base sinusoid, its first harmonic and a slow drift."""
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=float)
    out = np.empty((channels, length))
    for c in range(channels):
        a1, a2 = rng.uniform(0.5, 1.5), rng.uniform(0.2, 0.6)
        p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
        level, drift = rng.uniform(-2, 2), rng.uniform(0.2, 0.5)
        out[c] = (level + a1 * np.sin(2 * np.pi * t / period + p1)
                  + a2 * np.sin(4 * np.pi * t / period + p2)
                  + drift * np.sin(2 * np.pi * t / (period * 17.0))
                  + noise * rng.standard_normal(length))
    return out


def write_csv_series(path, values: np.ndarray, names=None) -> None:
    values = np.asarray(values)
    names = names or [f"ch{c}" for c in range(values.shape[0])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *names])
        for i in range(values.shape[1]):
            writer.writerow([i, *(repr(float(v)) for v in values[:, i])])
