"""Semantic alignment: cross-attention from patch embeddings to each state's
top-k token embeddings, aggregated under the decoded state posterior."""
from __future__ import annotations

import numpy as np

from . import ndgrad as nd
from .hmm import Hmm, top_k_tokens
from .ndgrad import Array
from .nn import Linear, Module

DEFAULT_TOP_K = 8


class ContractError(ValueError):
    pass


def build_state_embeddings(hmm: Hmm, token_table, k: int = DEFAULT_TOP_K) -> np.ndarray:
    """``N x k x d_llm`` stack of token embeddings in each state's emission rank order."""
    table = np.asarray(token_table, dtype=float)
    if table.ndim != 2 or table.shape[0] != hmm.n_symbols:
        raise nd.ShapeError(f"token table needs {hmm.n_symbols} rows, got shape {table.shape}")
    ids = [top_k_tokens(hmm, n, k) for n in range(hmm.n_states)]
    return table[np.array(ids)]


def random_token_table(n_symbols: int, d_llm: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(0.0, 1.0, (n_symbols, d_llm))


class CrossAttnBlock(Module):
    """Multi-head attention with patch queries and token keys/values.

    ``temperature="sqrt"`` scales scores by ``1/sqrt(d_h)``; ``"linear"`` by ``1/d_h``.
    """

    def __init__(self, d_model: int, d_llm: int, heads: int = 4, rng: np.random.Generator | None = None,
                 temperature: str = "sqrt"):
        if d_llm % heads:
            raise ValueError(f"d_llm={d_llm} not divisible by {heads} heads")
        if temperature not in ("sqrt", "linear"):
            raise ValueError(f"unknown temperature rule {temperature!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.heads = heads
        self.d_llm = d_llm
        self.temperature = temperature
        self.query = Linear(d_model, d_llm, rng)
        self.key = Linear(d_llm, d_llm, rng)
        self.value = Linear(d_llm, d_llm, rng)
        self.out = Linear(d_llm, d_llm, rng)

    @property
    def head_dim(self) -> int:
        return self.d_llm // self.heads

    @property
    def tau(self) -> float:
        dh = self.head_dim
        return float(np.sqrt(dh)) if self.temperature == "sqrt" else float(dh)


def cross_attend(block: CrossAttnBlock, z_p, e_n) -> Array:
    """Single patch ``z_p[d]`` against one prototype set ``e_n[k, d_llm]`` -> ``[d_llm]``."""
    z_p, e_n = nd.as_array(z_p), nd.as_array(e_n)
    if z_p.ndim != 1 or e_n.ndim != 2 or e_n.shape[1] != block.d_llm:
        raise nd.ShapeError(f"cross_attend: shapes {z_p.shape} and {e_n.shape}")
    q = block.query(nd.reshape(z_p, (1, -1)))
    k, v = block.key(e_n), block.value(e_n)
    dh = block.head_dim
    heads = []
    for h in range(block.heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores = nd.matmul(q[:, cols], nd.transpose(k[:, cols]))
        weights = nd.softmax(scores, axis=-1, temperature=block.tau)
        heads.append(nd.matmul(weights, v[:, cols]))
    return nd.reshape(block.out(nd.concat(heads, axis=-1)), (block.d_llm,))


def _check_batched(block: CrossAttnBlock, z: Array, e: Array) -> None:
    if z.ndim != 3 or e.ndim != 3 or e.shape[-1] != block.d_llm:
        raise nd.ShapeError(f"attend_all: shapes {z.shape} and {e.shape}")


def _scores(block: CrossAttnBlock, z: Array, e: Array) -> tuple[Array, Array]:
    b, p, _ = z.shape
    n, k, _ = e.shape
    H, dh = block.heads, block.head_dim
    # heads (and states) become matmul batch axes
    q = nd.transpose(nd.reshape(block.query(z), (b * p, H, dh)), (1, 0, 2))       # H, BP, dh
    keys = nd.transpose(nd.reshape(block.key(e), (n * k, H, dh)), (1, 2, 0))      # H, dh, NK
    vals = nd.transpose(nd.reshape(block.value(e), (n, k, H, dh)), (2, 0, 1, 3))  # H, N, k, dh
    weights = nd.softmax(nd.reshape(nd.matmul(q, keys), (H, b * p, n, k)), axis=-1, temperature=block.tau)
    return weights, vals


def attention_weights(block: CrossAttnBlock, z, prototypes) -> np.ndarray:
    """Per-head attention over each state's keys: ``[H, B, P, N, k]``."""
    z, e = nd.as_array(z), nd.as_array(prototypes)
    _check_batched(block, z, e)
    weights, _ = _scores(block, z, e)
    return weights.data.reshape(block.heads, z.shape[0], z.shape[1], *e.shape[:2])


def attend_all(block: CrossAttnBlock, z, prototypes) -> Array:
    """Batched candidates: ``z[B, P, d]`` with ``prototypes[N, k, d_llm]`` -> ``[B, P, N, d_llm]``."""
    z, e = nd.as_array(z), nd.as_array(prototypes)
    _check_batched(block, z, e)
    b, p, _ = z.shape
    n = e.shape[0]
    weights, vals = _scores(block, z, e)
    mixed = nd.matmul(nd.transpose(weights, (0, 2, 1, 3)), vals)                  # H, N, BP, dh
    mixed = nd.reshape(nd.transpose(mixed, (2, 1, 0, 3)), (b, p, n, block.d_llm))
    return block.out(mixed)


def aggregate(h_states, weights, check: bool = True) -> Array:
    """Posterior expectation: ``h_states[..., N, D]`` weighted by ``weights[..., N]``."""
    h_states, weights = nd.as_array(h_states), nd.as_array(weights)
    if check and np.any(np.abs(weights.data.sum(axis=-1) - 1.0) > 1e-6):
        raise ContractError("aggregation weights must sum to 1")
    if h_states.shape[:-1] != weights.shape:
        raise nd.ShapeError(f"aggregate: shapes {h_states.shape} and {weights.shape}")
    w = nd.reshape(weights, (*weights.shape, 1))
    return nd.sum_(nd.mul(w, h_states), axis=-2)


def align_sequence(z, gamma_tilde, prototypes, block: CrossAttnBlock) -> Array:
    """``z[B, P, d]``, ``gamma_tilde[B, P, N]`` -> aligned embeddings ``[B, P, d_llm]``."""
    candidates = attend_all(block, z, prototypes)
    return aggregate(candidates, gamma_tilde)


TOKEN_TABLE_KIND = "token-table"


def save_token_table(table, path, vocab_hash: str | None = None) -> None:
    from .container import write_container
    write_container(path, TOKEN_TABLE_KIND, {"table": np.asarray(table, dtype=float)},
                    {"vocab_hash": vocab_hash} if vocab_hash else {})


def load_token_table(path) -> tuple[np.ndarray, dict]:
    from .container import read_container
    tensors, meta = read_container(path, kind=TOKEN_TABLE_KIND)
    if "table" not in tensors or tensors["table"].ndim != 2:
        raise ContractError(f"{path}: no 2-D 'table' tensor")
    return tensors["table"], meta
