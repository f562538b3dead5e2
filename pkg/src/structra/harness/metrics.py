"""Forecast error metrics; arrays are ``[..., H]`` with series along leading axes."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

EPS = 1e-8


def mse(forecast, target) -> float:
    return float(np.mean((np.asarray(forecast) - np.asarray(target)) ** 2))


def mae(forecast, target) -> float:
    return float(np.mean(np.abs(np.asarray(forecast) - np.asarray(target))))


def smape_per_series(forecast, target) -> np.ndarray:
    f, y = np.asarray(forecast, dtype=float), np.asarray(target, dtype=float)
    denom = np.maximum(np.abs(y) + np.abs(f), EPS)
    return 200.0 * np.mean(np.abs(y - f) / denom, axis=-1)


def mase_per_series(forecast, target, insample, seasonality: int = 1) -> np.ndarray:
    f, y, x = (np.asarray(a, dtype=float) for a in (forecast, target, insample))
    m = seasonality
    if x.shape[-1] <= m:
        raise ValueError(f"insample length {x.shape[-1]} must exceed seasonality {m}")
    scale = np.maximum(np.mean(np.abs(x[..., m:] - x[..., :-m]), axis=-1), EPS)
    return np.mean(np.abs(y - f), axis=-1) / scale


def seasonal_naive(insample, horizon: int, seasonality: int = 1) -> np.ndarray:
    x = np.asarray(insample, dtype=float)
    last_season = x[..., -seasonality:]
    reps = -(-horizon // seasonality)
    return np.tile(last_season, (1,) * (x.ndim - 1) + (reps,))[..., :horizon]


def naive_last_value(insample, horizon: int) -> np.ndarray:
    return seasonal_naive(insample, horizon, 1)


def m4_metrics(forecasts, targets, insample, seasonality: int = 1) -> tuple[float, float, float | None]:
    """SMAPE, MASE and OWA (``None`` when the naive reference scores zero)."""
    smape = float(np.mean(smape_per_series(forecasts, targets)))
    mase = float(np.mean(mase_per_series(forecasts, targets, insample, seasonality)))
    naive = seasonal_naive(insample, np.shape(targets)[-1], seasonality)
    smape_ref = float(np.mean(smape_per_series(naive, targets)))
    mase_ref = float(np.mean(mase_per_series(naive, targets, insample, seasonality)))
    if smape_ref <= 0 or mase_ref <= 0:
        return smape, mase, None
    return smape, mase, 0.5 * (smape / smape_ref + mase / mase_ref)


@dataclass
class MetricsReport:
    dataset: str
    horizon: int
    split: str
    mse: float
    mae: float
    smape: float
    mase: float | None
    owa: float | None
    n_series: int
    meta: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return asdict(self)

    def row(self) -> str:
        fmt = lambda v: "-" if v is None else f"{v:.4f}"  # noqa: E731
        return (f"{self.dataset:<16} H={self.horizon:<4} {self.split:<5} mse={fmt(self.mse)} "
                f"mae={fmt(self.mae)} smape={fmt(self.smape)} mase={fmt(self.mase)} owa={fmt(self.owa)}")


def report(dataset: str, split: str, forecast, target, insample, seasonality: int = 1,
           meta: dict | None = None) -> MetricsReport:
    forecast, target, insample = (np.asarray(a, dtype=float) for a in (forecast, target, insample))
    if forecast.size == 0:
        raise ValueError("cannot score an empty split")
    if insample.shape[-1] > seasonality:
        smape, mase, owa = m4_metrics(forecast, target, insample, seasonality)
    else:
        smape, mase, owa = float(np.mean(smape_per_series(forecast, target))), None, None
    return MetricsReport(dataset, target.shape[-1], split, mse(forecast, target), mae(forecast, target),
                         smape, mase, owa, int(forecast.shape[0]), dict(meta or {}))
