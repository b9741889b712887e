"""Tokenization, vocabularies and the trainable word-embedding table."""

import logging
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ContractError, FormatError
from .numerics import Graph, Tensor, parameter

log = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1
INIT_RANGE = 0.05

_PUNCT = frozenset(string.punctuation)


def tokenize(text: str) -> list:
    """Lowercase, split on whitespace, peel ASCII punctuation off word edges.

    >>> tokenize("Earth rotates.")
    ['earth', 'rotates', '.']
    """
    tokens = []
    for chunk in text.lower().split():
        lead = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    if not tokens and text:
        return [text.lower()]
    return tokens


class Vocabulary:
    """Token <-> index map. Index 0 is PAD and index 1 is UNK."""

    def __init__(self, tokens: Iterable = ()):
        self._itos = [PAD, UNK]
        self._stoi = {PAD: PAD_INDEX, UNK: UNK_INDEX}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, sentences: Iterable) -> "Vocabulary":
        """Vocabulary over token lists, in first-seen order."""
        vocab = cls()
        for sent in sentences:
            for tok in sent:
                vocab.add(tok)
        return vocab

    def add(self, token: str) -> int:
        if token in (PAD, UNK):
            raise ContractError(f"corpus token {token!r} collides with a reserved token")
        idx = self._stoi.get(token)
        if idx is None:
            idx = len(self._itos)
            self._stoi[token] = idx
            self._itos.append(token)
        return idx

    def index(self, token: str) -> int:
        return self._stoi.get(token, UNK_INDEX)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    def indices(self, tokens) -> list:
        return [self._stoi.get(t, UNK_INDEX) for t in tokens]

    def __contains__(self, token):
        return token in self._stoi

    def __len__(self):
        return len(self._itos)

    def __iter__(self):
        return iter(self._itos)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self._itos):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, sep, num = line.rpartition("\t")
                if not sep or not num.isdigit():
                    raise FormatError("expected 'token<TAB>index'", line=lineno, path=path)
                idx = int(num)
                if idx < 2:
                    if (tok, idx) not in ((PAD, PAD_INDEX), (UNK, UNK_INDEX)):
                        raise FormatError(f"reserved index {idx} holds {tok!r}", line=lineno, path=path)
                    continue
                if idx != len(vocab):
                    raise FormatError(f"index {idx} out of sequence", line=lineno, path=path)
                vocab.add(tok)
        return vocab


@dataclass
class EmbeddingStore:
    """Trainable ``(|V|, d)`` embedding table; row 0 (PAD) stays zero."""

    matrix: Tensor
    found: int = 0
    total: int = 0

    @property
    def dim(self):
        return self.matrix.shape[1]

    @property
    def coverage(self):
        return self.found, self.total

    @classmethod
    def random(cls, vocab_size: int, dim: int, rng: np.random.Generator, trainable=True):
        m = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(vocab_size, dim))
        m[PAD_INDEX] = 0.0
        t = Tensor(m, requires_grad=trainable, name="embeddings", row_sparse=True)
        return cls(t, 0, max(vocab_size - 2, 0))


def _parse_vector(parts, dim, lineno, path):
    try:
        vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
    except ValueError:
        raise FormatError("non-numeric vector component", line=lineno, path=path) from None
    if not np.isfinite(vec).all():
        raise FormatError("non-finite vector component", line=lineno, path=path)
    return vec


def load_word2vec_text(path, vocab: Vocabulary, dim: int, rng: np.random.Generator) -> EmbeddingStore:
    """Fill an embedding table from a word2vec text file.

    Exact token matches win over case-insensitive ones. Tokens absent from
    the file keep their random initialisation.
    """
    path = Path(path)
    store = EmbeddingStore.random(len(vocab), dim, rng)
    m = store.matrix.data
    exact = set()
    with open(path, encoding="utf-8", errors="strict") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                if int(parts[1]) != dim:
                    raise FormatError(
                        f"embedding dimension {parts[1]} != configured {dim}", line=1, path=path
                    )
                continue
            if len(parts) == 1 and not parts[0]:
                continue
            if len(parts) != dim + 1:
                if len(parts) >= 2 and lineno == 1:
                    raise FormatError(
                        f"embedding dimension {len(parts) - 1} != configured {dim}", line=1, path=path
                    )
                raise FormatError(
                    f"expected token and {dim} values, got {len(parts) - 1} values", line=lineno, path=path
                )
            word = parts[0]
            if word in vocab and vocab.index(word) >= 2:
                m[vocab.index(word)] = _parse_vector(parts, dim, lineno, path)
                exact.add(word)
            else:
                low = word.lower()
                if low != word and low not in exact and low in vocab and vocab.index(low) >= 2:
                    m[vocab.index(low)] = _parse_vector(parts, dim, lineno, path)
                    exact.add(low)
    m[PAD_INDEX] = 0.0
    store.found = len(exact)
    log.info("embeddings: %d/%d vocabulary tokens found in %s", store.found, store.total, path)
    return store


def embed(g: Graph, indices, store: EmbeddingStore) -> Tensor:
    """Feature map of a sentence (``(n,) -> (d, n)``) or padded batch (``(B, n) -> (B, d, n)``)."""
    return g.gather_columns(store.matrix, indices)
