"""Layers shared by the shallow encoder and the frozen backbone."""
from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from . import ndgrad as nd
from .ndgrad import Array


class Module:
    """Parameters are discovered by walking attributes (Arrays, Modules, lists)."""

    def named_arrays(self, prefix: str = "") -> Iterator[tuple[str, Array]]:
        for key, value in vars(self).items():
            yield from _walk(value, prefix + key)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Array]]:
        for name, arr in self.named_arrays(prefix):
            if arr.requires_grad:
                yield name, arr

    def parameters(self) -> list[Array]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: arr.data for name, arr in self.named_arrays()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_arrays())
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"missing tensor {missing[0]!r}")
        for name, arr in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != arr.shape:
                raise ValueError(f"tensor {name!r}: expected shape {arr.shape}, got {value.shape}")
            arr.data = value

    def freeze(self) -> None:
        for _, arr in self.named_arrays():
            arr.requires_grad = False

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in sorted(self.named_arrays()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr.data).tobytes())
        return h.hexdigest()


def _walk(value, name: str):
    if isinstance(value, Array):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_arrays(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, std: float | None = None):
        std = 1.0 / np.sqrt(d_in) if std is None else std
        self.weight = nd.parameter(rng.normal(0.0, std, size=(d_in, d_out)))
        self.bias = nd.parameter(np.zeros(d_out))

    def __call__(self, x):
        if x.shape[-1] != self.weight.shape[0]:
            raise nd.ShapeError(f"Linear expects width {self.weight.shape[0]}, got {x.shape[-1]}")
        return nd.add(nd.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.weight = nd.parameter(np.ones(d))
        self.bias = nd.parameter(np.zeros(d))

    def __call__(self, x):
        return nd.layer_norm(x, self.weight, self.bias)


def split_heads(x: Array, heads: int) -> Array:
    """``[..., L, D]`` -> ``[..., heads, L, D/heads]``."""
    *lead, length, width = x.shape
    x = nd.reshape(x, (*lead, length, heads, width // heads))
    n = len(lead)
    return nd.transpose(x, (*range(n), n + 1, n, n + 2))


def merge_heads(x: Array) -> Array:
    *lead, heads, length, dh = x.shape
    n = len(lead)
    x = nd.transpose(x, (*range(n), n + 1, n, n + 2))
    return nd.reshape(x, (*lead, length, heads * dh))


class SelfAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, causal: bool = False,
                 std: float | None = None):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.causal = causal
        self.qkv = Linear(d, 3 * d, rng, std)
        self.proj = Linear(d, d, rng, std)

    def __call__(self, x):
        d = x.shape[-1]
        qkv = self.qkv(x)
        q = split_heads(qkv[..., :d], self.heads)
        k = split_heads(qkv[..., d:2 * d], self.heads)
        v = split_heads(qkv[..., 2 * d:], self.heads)
        scores = nd.mul(nd.matmul(q, nd.transpose(k, (*range(k.ndim - 2), k.ndim - 1, k.ndim - 2))),
                        1.0 / np.sqrt(d // self.heads))
        if self.causal:
            length = x.shape[-2]
            mask = np.triu(np.full((length, length), -1e30), k=1)
            scores = nd.add(scores, mask)
        attn = nd.softmax(scores, axis=-1)
        return self.proj(merge_heads(nd.matmul(attn, v)))


class MLP(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator, std: float | None = None):
        self.fc = Linear(d, hidden, rng, std)
        self.out = Linear(hidden, d, rng, std)

    def __call__(self, x):
        return self.out(nd.gelu(self.fc(x)))


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, causal: bool = False,
                 mlp_ratio: int = 4, std: float | None = None):
        self.ln_1 = LayerNorm(d)
        self.attn = SelfAttention(d, heads, rng, causal=causal, std=std)
        self.ln_2 = LayerNorm(d)
        self.mlp = MLP(d, mlp_ratio * d, rng, std=std)

    def __call__(self, x):
        x = nd.add(x, self.attn(self.ln_1(x)))
        return nd.add(x, self.mlp(self.ln_2(x)))


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    div = np.exp(-np.log(10000.0) * np.arange(0, d, 2) / d)
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div[: d // 2])
    return table
