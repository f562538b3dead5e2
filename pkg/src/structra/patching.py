"""Per-channel instance normalization and patching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NORM_EPS = 1e-5
DEFAULT_PATCH_LEN = 16
DEFAULT_STRIDE = 8


class PatchInputError(ValueError):
    pass


@dataclass
class MultivariateSeries:
    values: np.ndarray  # C x T
    names: list[str] | None = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[-1] < 1 or not np.all(np.isfinite(self.values)):
            raise PatchInputError("series must be finite with at least one time step")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray

    def __getitem__(self, index) -> "NormStats":
        return NormStats(self.mean[index], self.std[index], self.degenerate[index])


@dataclass
class PatchSequence:
    patches: np.ndarray  # P x patch_len
    patch_len: int
    stride: int
    channel: int = 0

    def __len__(self) -> int:
        return self.patches.shape[0]


def patch_count(length: int, patch_len: int, stride: int) -> int:
    return (length - patch_len) // stride + 1


def instance_normalize(values) -> tuple[np.ndarray, NormStats]:
    """Standardize along the last (time) axis; works for ``C x T`` or ``B x C x T``.

    Channels with std below ``NORM_EPS`` normalize to zeros and are flagged.
    """
    if isinstance(values, MultivariateSeries):
        values = values.values
    x = np.asarray(values, dtype=float)
    if x.shape[-1] < 2:
        raise PatchInputError("instance normalization needs at least two time steps")
    mean = x.mean(axis=-1)
    std = x.std(axis=-1)
    degenerate = std < NORM_EPS
    std = np.where(degenerate, NORM_EPS, std)
    out = (x - mean[..., None]) / std[..., None]
    out = np.where(degenerate[..., None], 0.0, out)
    return out, NormStats(mean, std, degenerate)


def denormalize(y, stats: NormStats) -> np.ndarray:
    """Broadcasting inverse of :func:`instance_normalize` (stats shape matches ``y[..., 0]``)."""
    y = np.asarray(y, dtype=float)
    out = y * stats.std[..., None] + stats.mean[..., None]
    return np.where(stats.degenerate[..., None], stats.mean[..., None], out)


def denormalize_forecast(y_hat, stats: NormStats, channel: int) -> np.ndarray:
    """Map one channel's normalized forecast back to the original scale."""
    mean = np.atleast_1d(stats.mean)
    if not 0 <= channel < mean.shape[0]:
        raise PatchInputError(f"channel {channel} out of range for {mean.shape[0]} channels")
    y = np.asarray(y_hat, dtype=float)
    if np.atleast_1d(stats.degenerate)[channel]:
        return np.full_like(y, mean[channel])
    return y * np.atleast_1d(stats.std)[channel] + mean[channel]


def patchify(channel, patch_len: int = DEFAULT_PATCH_LEN, stride: int = DEFAULT_STRIDE,
             index: int = 0) -> PatchSequence:
    x = np.asarray(channel, dtype=float)
    if x.ndim != 1:
        raise PatchInputError("patchify expects a single channel")
    return PatchSequence(patchify_batch(x, patch_len, stride), patch_len, stride, index)


def patchify_batch(x, patch_len: int = DEFAULT_PATCH_LEN, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """``[..., T]`` -> ``[..., P, patch_len]``; the trailing remainder is dropped."""
    x = np.asarray(x, dtype=float)
    if stride < 1:
        raise PatchInputError(f"stride must be >= 1, got {stride}")
    if patch_len < 1 or patch_len > x.shape[-1]:
        raise PatchInputError(f"patch length {patch_len} exceeds series length {x.shape[-1]}")
    windows = sliding_window_view(x, patch_len, axis=-1)[..., ::stride, :]
    return np.ascontiguousarray(windows)
