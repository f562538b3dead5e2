"""Structure alignment: shallow patch encoder, prototype soft clustering and
MEMM-style state decoding hot-started from the text HMM."""
from __future__ import annotations

import numpy as np

from . import ndgrad as nd
from .hmm import LOG_FLOOR, Hmm
from .ndgrad import Array
from .nn import Block, LayerNorm, Linear, Module, sinusoidal_positions
from .patching import PatchSequence

MEMM_MODES = ("softmax", "normalize")


class ConfigurationError(ValueError):
    pass


class ShallowEncoder(Module):
    def __init__(self, patch_len: int, d_model: int = 128, layers: int = 2, heads: int = 4,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.patch_len = patch_len
        self.d_model = d_model
        self.embed = Linear(patch_len, d_model, rng)
        self.blocks = [Block(d_model, heads, rng, causal=False, mlp_ratio=2) for _ in range(layers)]
        self.ln_f = LayerNorm(d_model)

    def __call__(self, patches) -> Array:
        x = patches.patches if isinstance(patches, PatchSequence) else patches
        x = nd.as_array(x)
        if x.shape[-1] != self.patch_len:
            raise nd.ShapeError(f"encoder expects patch width {self.patch_len}, got {x.shape[-1]}")
        h = nd.add(self.embed(x), sinusoidal_positions(x.shape[-2], self.d_model))
        for block in self.blocks:
            h = block(h)
        return self.ln_f(h)


def encode_patches(encoder: ShallowEncoder, patches) -> Array:
    """``[..., P, patch_len]`` -> ``[..., P, d]``."""
    return encoder(patches)


class PrototypeBank(Module):
    def __init__(self, n_states: int, d_model: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mu = nd.parameter(rng.normal(0.0, 1.0 / np.sqrt(d_model), (n_states, d_model)))

    @property
    def n_states(self) -> int:
        return self.mu.shape[0]


def soft_assign(z, bank: PrototypeBank) -> Array:
    """Cluster posteriors from negative squared distances: ``[..., d]`` -> ``[..., N]``."""
    return nd.softmax(nd.neg(nd.sqeuclid_dist(z, bank.mu)), axis=-1)


class StructuralPrior(Module):
    def __init__(self, pi_logits, trans_logits):
        self.pi_logits = nd.parameter(pi_logits)
        self.trans_logits = nd.parameter(trans_logits)

    @property
    def n_states(self) -> int:
        return self.pi_logits.shape[0]

    def pi(self) -> Array:
        return nd.softmax(self.pi_logits)

    def trans(self) -> Array:
        return nd.softmax(self.trans_logits, axis=-1)


def init_prior_from_text(hmm: Hmm, n_states: int | None = None) -> StructuralPrior:
    """Hot start: logits are the logs of the text model's ``pi`` and ``trans``."""
    if n_states is not None and n_states != hmm.n_states:
        raise ConfigurationError(f"prior needs {n_states} states, text HMM has {hmm.n_states}")
    return StructuralPrior(np.log(np.maximum(hmm.pi, LOG_FLOOR)),
                           np.log(np.maximum(hmm.trans, LOG_FLOOR)))


def _combine(pred: Array, gamma: Array, mode: str) -> Array:
    if mode == "softmax":
        return nd.softmax(nd.mul(pred, gamma), axis=-1)
    # renormalized product, evaluated in log space
    return nd.softmax(nd.add(nd.log(pred, floor=LOG_FLOOR), nd.log(gamma, floor=LOG_FLOOR)), axis=-1)


def memm_decode(gamma, prior: StructuralPrior, mode: str = "softmax") -> Array:
    """Causal state decoding over patches: ``[..., P, N]`` -> ``[..., P, N]``.

    ``mode="softmax"`` applies a softmax to the product of the transition
    prediction and the cluster posterior, exactly as the recursion is written;
    ``mode="normalize"`` divides the product by its sum instead.
    """
    if mode not in MEMM_MODES:
        raise ConfigurationError(f"unknown MEMM mode {mode!r}")
    gamma = nd.as_array(gamma)
    *lead, n_patches, n = gamma.shape
    if n != prior.n_states:
        raise nd.ShapeError(f"gamma has {n} states, prior has {prior.n_states}")
    if np.any(np.abs(gamma.data.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("gamma rows must lie on the simplex")
    g = nd.reshape(gamma, (-1, n_patches, n))
    trans = prior.trans()
    rows = [_combine(prior.pi(), g[:, 0, :], mode)]
    for p in range(1, n_patches):
        rows.append(_combine(nd.matmul(rows[-1], trans), g[:, p, :], mode))
    return nd.reshape(nd.stack(rows, axis=1), (*lead, n_patches, n))


def transition_only(prev, prior: StructuralPrior, mode: str = "softmax") -> Array:
    """The decoding step with an uninformative (uniform) patch posterior.

    ``prev=None`` gives the first-patch version driven only by ``pi``.
    """
    n = prior.n_states
    if prev is None:
        pred = prior.pi()
    else:
        prev = nd.as_array(prev)
        pred = nd.matmul(nd.reshape(prev, (-1, n)), prior.trans())
        pred = nd.reshape(pred, prev.shape)
    return _combine(pred, np.full(pred.shape, 1.0 / n), mode)
