"""Discrete HMM over token ids, trained by gradient descent on row logits.

Probabilities are realized as row softmaxes of unconstrained logits, so the
stochastic constraints on ``pi``, ``trans`` and ``emit`` hold by construction.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd
from .container import read_container, write_container
from .ndgrad import Array, Tape
from .optim import Adam

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
BRUTE_FORCE_LIMIT = 10 ** 6
MAX_BACKTRACK = 8


class HmmInputError(ValueError):
    pass


class HmmTrainingError(RuntimeError):
    pass


class Hmm:
    def __init__(self, pi_logits, trans_logits, emit_logits):
        self.pi_logits = nd.parameter(pi_logits, "pi_logits")
        self.trans_logits = nd.parameter(trans_logits, "trans_logits")
        self.emit_logits = nd.parameter(emit_logits, "emit_logits")
        n = self.pi_logits.shape[0]
        if self.trans_logits.shape != (n, n) or self.emit_logits.shape[0] != n:
            raise HmmInputError("inconsistent HMM parameter shapes")

    @classmethod
    def random(cls, n_states: int, n_symbols: int, seed: int = 0, scale: float = 0.1) -> "Hmm":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0, scale, n_states),
                   rng.normal(0, scale, (n_states, n_states)),
                   rng.normal(0, scale, (n_states, n_symbols)))

    @classmethod
    def from_probs(cls, pi, trans, emit) -> "Hmm":
        f = lambda p: np.log(np.maximum(np.asarray(p, dtype=float), LOG_FLOOR))  # noqa: E731
        return cls(f(pi), f(trans), f(emit))

    @property
    def n_states(self) -> int:
        return self.pi_logits.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.emit_logits.shape[1]

    def parameters(self) -> list[Array]:
        return [self.pi_logits, self.trans_logits, self.emit_logits]

    @property
    def pi(self) -> np.ndarray:
        return _row_softmax(self.pi_logits.data)

    @property
    def trans(self) -> np.ndarray:
        return _row_softmax(self.trans_logits.data)

    @property
    def emit(self) -> np.ndarray:
        return _row_softmax(self.emit_logits.data)

    def log_params(self) -> tuple[Array, Array, Array]:
        return (nd.log_softmax(self.pi_logits), nd.log_softmax(self.trans_logits, axis=-1),
                nd.log_softmax(self.emit_logits, axis=-1))

    def permuted(self, perm) -> "Hmm":
        perm = np.asarray(perm)
        return Hmm(self.pi_logits.data[perm], self.trans_logits.data[np.ix_(perm, perm)],
                   self.emit_logits.data[perm])


def _row_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_ids(hmm: Hmm, seq) -> np.ndarray:
    ids = np.asarray(seq, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise HmmInputError("sequence must be a non-empty 1-D id list")
    if ids.min() < 0 or ids.max() >= hmm.n_symbols:
        raise HmmInputError(f"token id out of range for M={hmm.n_symbols}")
    return ids


def sequence_log_prob(hmm: Hmm, seq) -> tuple[Array, list[Array]]:
    """Differentiable log P(seq) and the list of forward rows alpha_t."""
    ids = _check_ids(hmm, seq)
    log_pi, log_a, log_b = hmm.log_params()
    alpha = nd.add(log_pi, nd.take(log_b, ids[0], axis=1))
    rows = [alpha]
    for t in range(1, ids.size):
        step = nd.logsumexp(nd.add(nd.reshape(alpha, (-1, 1)), log_a), axis=0)
        alpha = nd.add(step, nd.take(log_b, ids[t], axis=1))
        rows.append(alpha)
    return nd.logsumexp(alpha, axis=0), rows


def log_forward(hmm: Hmm, seq) -> tuple[float, np.ndarray]:
    """Log-likelihood and the ``T x N`` trellis of log forward variables."""
    value, rows = sequence_log_prob(hmm, seq)
    return value.item(), np.stack([r.data for r in rows])


def batch_log_prob(hmm: Hmm, seqs: list) -> Array:
    """Per-sequence log-likelihoods ``[Q]`` for sequences of any lengths."""
    lengths = np.array([len(s) for s in seqs])
    if lengths.size == 0 or lengths.min() < 1:
        raise HmmInputError("batch needs non-empty sequences")
    ids = np.zeros((len(seqs), lengths.max()), dtype=np.int64)
    for q, s in enumerate(seqs):
        ids[q, : len(s)] = _check_ids(hmm, s)
    log_pi, log_a, log_b = hmm.log_params()
    alpha = nd.add(log_pi, nd.transpose(nd.take(log_b, ids[:, 0], axis=1)))
    log_a3 = nd.reshape(log_a, (1, *log_a.shape))
    for t in range(1, ids.shape[1]):
        step = nd.logsumexp(nd.add(nd.reshape(alpha, (*alpha.shape, 1)), log_a3), axis=1)
        new = nd.add(step, nd.transpose(nd.take(log_b, ids[:, t], axis=1)))
        live = lengths > t
        alpha = new if live.all() else nd.where(live[:, None], new, alpha)
    return nd.logsumexp(alpha, axis=1)


def brute_force_log_likelihood(hmm: Hmm, seq) -> float:
    """log P(seq) by summing over every state path; test oracle only."""
    ids = _check_ids(hmm, seq)
    n, t = hmm.n_states, ids.size
    if n ** t > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{n}^{t} state paths exceed the enumeration limit {BRUTE_FORCE_LIMIT}")
    lp, la, lb = np.log(hmm.pi), np.log(hmm.trans), np.log(hmm.emit)
    paths = np.array(list(itertools.product(range(n), repeat=t)), dtype=np.int64)
    scores = lp[paths[:, 0]] + lb[paths, ids].sum(axis=1)
    if t > 1:
        scores = scores + la[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    m = scores.max()
    return float(m + np.log(np.exp(scores - m).sum()))


@dataclass
class HmmTrace:
    mean_nll: list[float]


def train_hmm(seqs: list, n_states: int, n_symbols: int, epochs: int = 200, lr: float = 0.05,
              seed: int = 0, init: Hmm | None = None) -> tuple[Hmm, HmmTrace]:
    """Minimize the corpus NLL with full-batch Adam, one step per epoch.

    A step that would raise the NLL is undone and retried at half the step
    size (up to ``MAX_BACKTRACK`` times), so the trace never increases.

    ``trace.mean_nll[e]`` is the mean per-sequence NLL at the start of epoch ``e``;
    a final entry records the trained model.
    """
    if not seqs:
        raise HmmInputError("empty corpus")
    if n_states < 2:
        raise HmmInputError("need at least two states")
    hmm = init if init is not None else Hmm.random(n_states, n_symbols, seed)
    opt = Adam(hmm.parameters(), lr=lr)

    def objective():
        with Tape() as tape:
            loss = nd.neg(nd.mean(batch_log_prob(hmm, seqs)))
        return loss.item(), tape.backward(loss)

    trace = []
    try:
        loss, grads = objective()
        for epoch in range(epochs):
            trace.append(loss)
            saved = opt.snapshot()
            # an Adam step can overshoot; halve it until the NLL stops rising
            for attempt in range(MAX_BACKTRACK + 1):
                opt.lr = lr * 0.5 ** attempt
                opt.step(grads)
                new_loss, new_grads = objective()
                if new_loss <= loss:
                    break
                opt.restore(saved)
            else:
                new_loss, new_grads = loss, grads
            opt.lr = lr
            loss, grads = new_loss, new_grads
            if epoch % 50 == 0:
                log.debug("hmm epoch %d mean nll %.6f", epoch, trace[-1])
    except nd.NonFiniteError as exc:
        raise HmmTrainingError(f"training diverged at epoch {len(trace)}: {exc}") from exc
    trace.append(loss)
    return hmm, HmmTrace(trace)


def top_k_tokens(hmm: Hmm, state: int, k: int) -> list[int]:
    """Ids of the ``k`` most probable emissions of ``state``; ties go to the lower id."""
    if not 0 <= state < hmm.n_states:
        raise HmmInputError(f"state {state} out of range")
    if not 1 <= k <= hmm.n_symbols:
        raise nd.ParameterError(f"k={k} must lie in [1, {hmm.n_symbols}]")
    row = hmm.emit[state]
    order = np.lexsort((np.arange(row.size), -row))
    return [int(i) for i in order[:k]]


def sample_sequences(pi, trans, emit, n_seqs: int, length: int, rng: np.random.Generator) -> list[np.ndarray]:
    pi, trans, emit = (np.asarray(x, dtype=float) for x in (pi, trans, emit))
    cum_a, cum_b = np.cumsum(trans, axis=1), np.cumsum(emit, axis=1)
    states = np.empty((n_seqs, length), dtype=np.int64)
    states[:, 0] = np.searchsorted(np.cumsum(pi), rng.random(n_seqs) * np.cumsum(pi)[-1])
    for t in range(1, length):
        u = rng.random(n_seqs)[:, None] * cum_a[states[:, t - 1], -1:]
        states[:, t] = (u > cum_a[states[:, t - 1]]).sum(axis=1)
    u = rng.random((n_seqs, length))[..., None] * cum_b[states, -1:]
    obs = (u > cum_b[states]).sum(axis=-1)
    obs = np.minimum(obs, emit.shape[1] - 1)
    return [row.copy() for row in obs]


def save_hmm(hmm: Hmm, path, meta: dict | None = None) -> None:
    info = {"n_states": hmm.n_states, "n_symbols": hmm.n_symbols, **(meta or {})}
    write_container(path, "hmm", {"pi_logits": hmm.pi_logits.data,
                                  "trans_logits": hmm.trans_logits.data,
                                  "emit_logits": hmm.emit_logits.data}, info)


def load_hmm(path) -> tuple[Hmm, dict]:
    tensors, meta = read_container(path, kind="hmm")
    try:
        hmm = Hmm(tensors["pi_logits"], tensors["trans_logits"], tensors["emit_logits"])
    except KeyError as exc:
        raise HmmInputError(f"{path}: missing tensor {exc}") from exc
    return hmm, meta
