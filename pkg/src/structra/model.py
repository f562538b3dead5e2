"""End-to-end forecaster: patches -> structure alignment -> semantic alignment
-> frozen backbone -> linear head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd
from .backbone import ForecastHead, FrozenBackbone
from .container import read_container, write_container
from .harness.config import TrainConfig
from .hmm import Hmm
from .ndgrad import Array
from .nn import Module
from .patching import denormalize, instance_normalize, patchify_batch
from .semal import CrossAttnBlock, align_sequence, build_state_embeddings, random_token_table
from .structal import (ConfigurationError, PrototypeBank, ShallowEncoder, StructuralPrior,
                       init_prior_from_text, memm_decode, soft_assign)

MODEL_KIND = "forecaster"


@dataclass
class Forward:
    z: Array
    gamma: Array
    gamma_tilde: Array
    aligned: Array
    features: Array
    y: Array


class AlignedForecaster(Module):
    def __init__(self, config: TrainConfig, prototypes: np.ndarray, prior: StructuralPrior,
                 text_pi: np.ndarray, text_trans: np.ndarray, backbone: FrozenBackbone | None = None):
        n = config.states
        if prior.n_states != n or np.shape(prototypes)[:2] != (n, config.topk):
            raise ConfigurationError(f"text structure does not match states={n}, topk={config.topk}")
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.encoder = ShallowEncoder(config.patch_len, config.d_model, config.layers, config.heads, rng)
        self.bank = PrototypeBank(n, config.d_model, rng)
        self.prior = prior
        self.cross = CrossAttnBlock(config.d_model, config.d_llm, config.heads, rng,
                                    temperature=config.attn_temperature)
        self.head = ForecastHead(config.n_patches, config.d_llm, config.horizon, rng)
        self.backbone = backbone if backbone is not None else FrozenBackbone(
            config.d_llm, config.backbone_layers, config.backbone_heads, seed=config.seed + 1)
        if self.backbone.d_llm != config.d_llm:
            raise ConfigurationError(f"backbone width {self.backbone.d_llm} != d_llm {config.d_llm}")
        self.prototypes = nd.constant(prototypes)
        self.text_pi = nd.constant(text_pi)
        self.text_trans = nd.constant(text_trans)
        self.epochs_trained = 0
        if config.freeze_prior:
            self.prior.freeze()

    @classmethod
    def from_text(cls, config: TrainConfig, hmm: Hmm, token_table=None,
                  backbone: FrozenBackbone | None = None) -> "AlignedForecaster":
        if token_table is None:
            token_table = random_token_table(hmm.n_symbols, config.d_llm, seed=config.seed)
        prior = init_prior_from_text(hmm, config.states)
        protos = build_state_embeddings(hmm, token_table, config.topk)
        return cls(config, protos, prior, hmm.pi, hmm.trans, backbone)

    def run(self, x_norm) -> Forward:
        """Normalized univariate windows ``[S, T]`` to normalized forecasts ``[S, H]``."""
        cfg = self.config
        x_norm = np.asarray(x_norm, dtype=float)
        if x_norm.ndim != 2 or x_norm.shape[1] != cfg.input_len:
            raise ConfigurationError(f"expected [S, {cfg.input_len}] windows, got {x_norm.shape}")
        patches = patchify_batch(x_norm, cfg.patch_len, cfg.stride)
        z = self.encoder(patches)
        gamma = soft_assign(z, self.bank)
        gamma_tilde = memm_decode(gamma, self.prior, cfg.memm_mode)
        aligned = align_sequence(z, gamma_tilde, self.prototypes, self.cross)
        features = self.backbone(aligned)
        return Forward(z, gamma, gamma_tilde, aligned, features, self.head(features))

    def loss(self, inputs, targets) -> Array:
        """Training loss for ``inputs[W, C, T]`` / ``targets[W, C, H]``."""
        x, stats = instance_normalize(inputs)
        c_mean, c_std = stats.mean.reshape(-1, 1), stats.std.reshape(-1, 1)
        y = self.run(x.reshape(-1, x.shape[-1])).y
        target = np.asarray(targets, dtype=float).reshape(-1, targets.shape[-1])
        if self.config.loss == "mse":
            return nd.mean(nd.square(nd.sub(y, (target - c_mean) / c_std)))
        y_den = nd.add(nd.mul(y, c_std), c_mean)
        denom = np.abs(target) + np.abs(y_den.data) + 1e-8
        return nd.mul(200.0, nd.mean(nd.div(nd.abs_(nd.sub(y_den, target)), denom)))

    def predict(self, inputs, batch: int = 256) -> np.ndarray:
        """De-normalized forecasts ``[W, C, H]`` using each window's own statistics."""
        inputs = np.asarray(inputs, dtype=float)
        out = []
        for i in range(0, inputs.shape[0], batch):
            chunk = inputs[i:i + batch]
            x, stats = instance_normalize(chunk)
            y = self.run(x.reshape(-1, x.shape[-1])).y.data
            out.append(denormalize(y.reshape(*chunk.shape[:2], -1), stats))
        return np.concatenate(out, axis=0)

    def trainable(self) -> list[Array]:
        return [p for _, p in self.named_parameters()]


def save_model(model: AlignedForecaster, path, meta: dict | None = None) -> None:
    info = {"config": model.config.to_dict(), "epochs_trained": model.epochs_trained,
            "backbone": {**model.backbone.config(), "provenance": model.backbone.provenance},
            **(meta or {})}
    write_container(path, MODEL_KIND, model.state_dict(), info)


def load_model(path) -> tuple[AlignedForecaster, dict]:
    tensors, meta = read_container(path, kind=MODEL_KIND)
    config = TrainConfig.from_dict(meta["config"])
    n = config.states
    bb_meta = meta.get("backbone", {})
    backbone = FrozenBackbone(config.d_llm, config.backbone_layers, config.backbone_heads,
                              int(bb_meta.get("max_positions", 128)),
                              provenance=bb_meta.get("provenance"))
    prior = StructuralPrior(np.zeros(n), np.zeros((n, n)))
    model = AlignedForecaster(config, np.zeros((n, config.topk, config.d_llm)), prior,
                              np.full(n, 1.0 / n), np.full((n, n), 1.0 / n), backbone)
    model.load_state_dict(tensors)
    if config.freeze_prior:
        model.prior.freeze()
    model.epochs_trained = int(meta.get("epochs_trained", 0))
    return model, meta
