"""Deterministic hashed bag-of-words sentence embedding.

Stands in for a pretrained sentence encoder: tokens are hashed into a fixed
seeded table of vectors and mean-pooled, then L2-normalized. A trainable
variant initializes a learnable table from the same seed, preserving the
frozen/finetuned distinction.
"""

from __future__ import annotations

import hashlib
import re
import string
from dataclasses import dataclass

import numpy as np
import torch

D_LANG = 32
N_BUCKETS = 256
TABLE_SEED = 7


class EmptyText(Exception):
    pass


@dataclass(frozen=True)
class LangEmbedding:
    vector: np.ndarray  # (D_LANG,), unit norm
    source_text: str


def make_table(seed: int = TABLE_SEED, n_buckets: int = N_BUCKETS,
               d: int = D_LANG) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_buckets, d))


def save_table(path: str, table: np.ndarray) -> None:
    np.save(path, table)


def load_table(path: str) -> np.ndarray:
    return np.load(path)


_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def tokenize(text: str) -> list:
    return _PUNCT.sub(" ", text.lower()).split()


def token_bucket(token: str, n_buckets: int = N_BUCKETS) -> int:
    digest = hashlib.sha1(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % n_buckets


class LangEncoder:
    """Frozen-mode encoder: a pure function of the text."""

    def __init__(self, table: np.ndarray = None):
        self.table = table if table is not None else make_table()

    def encode(self, text: str) -> LangEmbedding:
        tokens = tokenize(text)
        if not tokens:
            raise EmptyText(f"no tokens in {text!r}")
        vecs = self.table[[token_bucket(t, len(self.table)) for t in tokens]]
        mean = vecs.mean(axis=0)
        return LangEmbedding(mean / np.linalg.norm(mean), text)


class TrainableLangEncoder(torch.nn.Module):
    """Same hashing scheme with a learnable table (the finetuned variant)."""

    def __init__(self, table: np.ndarray = None):
        super().__init__()
        base = table if table is not None else make_table()
        self.table = torch.nn.Parameter(torch.tensor(base, dtype=torch.float32))

    def forward(self, texts) -> torch.Tensor:
        rows = []
        for text in texts:
            tokens = tokenize(text)
            if not tokens:
                raise EmptyText(f"no tokens in {text!r}")
            idx = torch.tensor([token_bucket(t, self.table.shape[0]) for t in tokens])
            rows.append(self.table[idx].mean(dim=0))
        stacked = torch.stack(rows)
        return stacked / stacked.norm(dim=1, keepdim=True)
