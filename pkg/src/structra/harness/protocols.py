"""Training loop and the full-data, few-shot and zero-shot evaluation protocols."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import ndgrad as nd
from ..backbone import FrozenBackbone
from ..hmm import Hmm
from ..model import AlignedForecaster
from ..ndgrad import Tape
from ..optim import Adam
from ..patching import instance_normalize
from ..structal import ConfigurationError
from .config import TrainConfig
from .data import DatasetSplit, assert_no_leakage, few_shot_subset
from .metrics import MetricsReport, naive_last_value, report

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainTrace:
    train_loss: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)


def normalized_mse(model: AlignedForecaster, split: DatasetSplit) -> float:
    """MSE on the per-window normalized scale (the training objective's scale)."""
    pred = model.predict(split.inputs)
    _, stats = instance_normalize(split.inputs)
    return float(np.mean(((pred - split.targets) / stats.std[..., None]) ** 2))


def train(config: TrainConfig, train_split: DatasetSplit, val_split: DatasetSplit | None, hmm: Hmm,
          token_table=None, backbone: FrozenBackbone | None = None) -> tuple[AlignedForecaster, TrainTrace]:
    """Fit every alignment module and the head; the backbone never changes."""
    if hmm.n_states != config.states:
        raise ConfigurationError(f"HMM has {hmm.n_states} states, config asks for {config.states}")
    if train_split.input_len != config.input_len or train_split.horizon != config.horizon:
        raise ConfigurationError("split window shape does not match the config")
    if config.few_shot < 1.0:
        train_split = few_shot_subset(train_split, config.few_shot)
    if val_split is not None:
        assert_no_leakage(train_split, val_split)
    model = AlignedForecaster.from_text(config, hmm, token_table, backbone)
    opt = Adam(model.trainable(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    trace = TrainTrace()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_split))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            try:
                with Tape() as tape:
                    loss = model.loss(train_split.inputs[idx], train_split.targets[idx])
                grads = tape.backward(loss)
            except nd.NonFiniteError as exc:
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}: "
                                    f"{exc}") from exc
            opt.step(grads)
            losses.append(loss.item())
        trace.train_loss.append(float(np.mean(losses)))
        model.epochs_trained += 1
        if val_split is not None:
            trace.val_mse.append(normalized_mse(model, val_split))
        log.info("epoch %d train %.5f val %s", epoch, trace.train_loss[-1],
                 f"{trace.val_mse[-1]:.5f}" if trace.val_mse else "-")
    return model, trace


def evaluate(model: AlignedForecaster, split: DatasetSplit, dataset: str | None = None) -> MetricsReport:
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    cfg = model.config
    pred = model.predict(split.inputs)
    flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
    return report(dataset or split.source, split.tag, flat(pred), flat(split.targets), flat(split.inputs),
                  cfg.seasonality, meta={"config": cfg.to_dict()})


def naive_report(split: DatasetSplit, seasonality: int = 1, dataset: str | None = None) -> MetricsReport:
    flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
    pred = naive_last_value(split.inputs, split.horizon)
    return report(dataset or split.source, split.tag, flat(pred), flat(split.targets), flat(split.inputs),
                  seasonality, meta={"model": "naive-last-value"})


def zero_shot_eval(model: AlignedForecaster, split: DatasetSplit, dataset: str | None = None) -> MetricsReport:
    """Score a trained model on another dataset's test split without updating it."""
    cfg = model.config
    if split.input_len != cfg.input_len or split.horizon != cfg.horizon:
        raise ConfigurationError(f"target windows are T={split.input_len}, H={split.horizon}; "
                                 f"model expects T={cfg.input_len}, H={cfg.horizon}")
    before = model.checksum()
    metrics = evaluate(model, split, dataset)
    if model.checksum() != before:
        raise AssertionError("zero-shot evaluation modified model parameters")
    metrics.meta["protocol"] = "zero-shot"
    return metrics
