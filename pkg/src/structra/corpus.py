"""Whitespace tokenizer, vocabulary, and corpus loading for HMM training."""
from __future__ import annotations

import hashlib
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

UNK = "<unk>"
DEFAULT_MAX_SIZE = 1000
DEFAULT_MAX_LEN = 256


class CorpusError(ValueError):
    pass


def tokenize(line: str) -> list[str]:
    return line.lower().split()


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != UNK:
            raise CorpusError("vocabulary must start with the UNK token")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, 0)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()[:16]


def build_vocab(lines: Iterable[str], max_size: int = DEFAULT_MAX_SIZE, min_count: int = 1) -> Vocabulary:
    """Keep the ``max_size - 1`` most frequent tokens (ties: lexicographic), id 0 is UNK."""
    if max_size < 2:
        raise CorpusError(f"max_size must be >= 2, got {max_size}")
    counts: Counter[str] = Counter()
    seen_line = False
    for line in lines:
        seen_line = True
        counts.update(tokenize(line))
    if not seen_line or not counts:
        raise CorpusError("empty corpus")
    counts.pop(UNK, None)
    ranked = sorted((tok for tok, c in counts.items() if c >= min_count),
                    key=lambda tok: (-counts[tok], tok))
    kept = ranked[: max_size - 1]
    if not kept:
        warnings.warn(f"no token reaches min_count={min_count}; vocabulary holds only UNK",
                      stacklevel=2)
    return Vocabulary([UNK, *kept])


def encode(line: str, vocab: Vocabulary) -> np.ndarray | None:
    """Token ids for ``line``; ``None`` when the line has no tokens."""
    toks = tokenize(line)
    if not toks:
        return None
    return np.array([vocab.id(t) for t in toks], dtype=np.int64)


def decode(ids, vocab: Vocabulary) -> str:
    return " ".join(vocab.tokens[i] for i in ids)


def read_lines(path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc


def load_corpus(path, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> list[np.ndarray]:
    seqs = []
    for line in read_lines(path):
        ids = encode(line, vocab)
        if ids is not None:
            seqs.append(ids[:max_len])
    return seqs


_SUBJECTS = ["i", "you", "we", "they", "the cat", "a dog", "the teacher", "my friend"]
_VERBS = ["like", "see", "want", "take", "find", "love", "watch", "build"]
_OBJECTS = ["dogs", "the ball", "a house", "music", "the river", "books", "a tree", "the city"]
_TAILS = ["", "", "today", "at night", "very much", "again", "in the park"]


def toy_corpus(n_lines: int, rng: np.random.Generator) -> list[str]:
    """Template sentences (subject, verb, object, optional tail) with some conjunctions."""
    lines = []
    for _ in range(n_lines):
        parts = []
        for clause in range(1 + int(rng.random() < 0.3)):
            if clause:
                parts.append(str(rng.choice(["and", "but", "because"])))
            parts += [str(rng.choice(_SUBJECTS)), str(rng.choice(_VERBS)), str(rng.choice(_OBJECTS))]
            tail = str(rng.choice(_TAILS))
            if tail:
                parts.append(tail)
        lines.append(" ".join(parts))
    return lines
