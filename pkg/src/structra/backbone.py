"""Frozen causal transformer stand-in for the pretrained LLM, plus the linear head.

Backbone weight containers (kind ``"backbone"``) declare ``layers``, ``heads``,
``d_llm`` and ``max_positions`` in their meta and carry these tensors, with
``{i}`` running over layers::

    wpe                          max_positions x d_llm
    blocks.{i}.ln_1.weight/bias  d_llm
    blocks.{i}.attn.qkv.weight   d_llm x 3*d_llm   (bias: 3*d_llm)
    blocks.{i}.attn.proj.weight  d_llm x d_llm     (bias: d_llm)
    blocks.{i}.ln_2.weight/bias  d_llm
    blocks.{i}.mlp.fc.weight     d_llm x 4*d_llm   (bias: 4*d_llm)
    blocks.{i}.mlp.out.weight    4*d_llm x d_llm   (bias: d_llm)
    ln_f.weight/bias             d_llm

Weight matrices are ``in x out`` (the GPT-2 ``Conv1D`` orientation).
"""
from __future__ import annotations

import numpy as np

from . import ndgrad as nd
from .container import ContainerError, read_container, write_container
from .ndgrad import Array
from .nn import Block, LayerNorm, Module
from .patching import NormStats, denormalize, denormalize_forecast
from .structal import ConfigurationError


class BackboneLoadError(ValueError):
    pass


class FrozenBackbone(Module):
    def __init__(self, d_llm: int = 64, layers: int = 2, heads: int = 4, max_positions: int = 128,
                 seed: int = 0, provenance: str | None = None):
        rng = np.random.default_rng(seed)
        self.d_llm, self.n_layers, self.n_heads = d_llm, layers, heads
        self.max_positions = max_positions
        self.provenance = provenance or f"seed:{seed}"
        self.wpe = nd.constant(rng.normal(0.0, 0.01, (max_positions, d_llm)))
        self.blocks = [Block(d_llm, heads, rng, causal=True, std=0.02) for _ in range(layers)]
        self.ln_f = LayerNorm(d_llm)
        self.freeze()

    def config(self) -> dict:
        return {"layers": self.n_layers, "heads": self.n_heads, "d_llm": self.d_llm,
                "max_positions": self.max_positions}

    def __call__(self, h) -> Array:
        h = nd.as_array(h)
        if h.shape[-1] != self.d_llm:
            raise nd.ShapeError(f"backbone width is {self.d_llm}, input has {h.shape[-1]}")
        length = h.shape[-2]
        if length > self.max_positions:
            raise nd.ShapeError(f"{length} positions exceed backbone limit {self.max_positions}")
        x = nd.add(h, self.wpe.data[:length])
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)


def backbone_forward(bb: FrozenBackbone, h) -> Array:
    return bb(h)


def export_backbone(bb: FrozenBackbone, path) -> None:
    write_container(path, "backbone", bb.state_dict(), {**bb.config(), "provenance": bb.provenance})


def load_external_backbone(path, expect: dict | None = None) -> FrozenBackbone:
    """Load a backbone container; ``expect`` may pin ``layers``/``heads``/``d_llm``."""
    try:
        tensors, meta = read_container(path, kind="backbone")
    except ContainerError as exc:
        raise BackboneLoadError(str(exc)) from exc
    try:
        declared = {key: int(meta[key]) for key in ("layers", "heads", "d_llm", "max_positions")}
    except (KeyError, TypeError, ValueError) as exc:
        raise BackboneLoadError(f"{path}: header field {exc} missing or invalid") from exc
    for key, want in (expect or {}).items():
        if declared.get(key) != want:
            raise BackboneLoadError(f"{path}: field {key!r} is {declared.get(key)}, expected {want}")
    bb = FrozenBackbone(declared["d_llm"], declared["layers"], declared["heads"],
                        declared["max_positions"], provenance=meta.get("provenance", f"external:{path}"))
    for name, arr in bb.named_arrays():
        if name not in tensors:
            raise BackboneLoadError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != arr.shape:
            raise BackboneLoadError(f"{path}: tensor {name!r} has shape {tensors[name].shape}, "
                                    f"expected {arr.shape}")
    extra = sorted(set(tensors) - {name for name, _ in bb.named_arrays()})
    if extra:
        raise BackboneLoadError(f"{path}: unexpected tensor {extra[0]!r}")
    bb.load_state_dict(tensors)
    bb.freeze()
    return bb


class ForecastHead(Module):
    """Flatten ``P x d_llm`` features and map them linearly to the horizon."""

    def __init__(self, n_patches: int, d_llm: int, horizon: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_patches, self.d_llm, self.horizon = n_patches, d_llm, horizon
        fan_in = n_patches * d_llm
        self.weight = nd.parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, horizon)))
        self.bias = nd.parameter(np.zeros(horizon))

    def __call__(self, features) -> Array:
        features = nd.as_array(features)
        if features.shape[-2:] != (self.n_patches, self.d_llm):
            raise nd.ShapeError(f"head expects {(self.n_patches, self.d_llm)} features, "
                                f"got {features.shape[-2:]}")
        flat = nd.reshape(features, (*features.shape[:-2], self.n_patches * self.d_llm))
        if flat.ndim == 1:
            flat = nd.reshape(flat, (1, -1))
            return nd.reshape(nd.add(nd.matmul(flat, self.weight), self.bias), (self.horizon,))
        return nd.add(nd.matmul(flat, self.weight), self.bias)


def project_forecast(head: ForecastHead, features, stats: NormStats, channel: int | None = None,
                     horizon: int | None = None) -> np.ndarray:
    """Head output on the original scale of ``channel`` (or of all rows of ``stats``)."""
    if horizon is not None and horizon != head.horizon:
        raise ConfigurationError(f"head produces horizon {head.horizon}, config asks for {horizon}")
    y = head(features).data
    if channel is None:
        return denormalize(y, stats)
    return denormalize_forecast(y, stats, channel)
