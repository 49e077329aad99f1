"""Id-to-vector embedding tables and the batched page/history inputs.

Id 0 is the padding id on both the candidate and history side. The zero row
is not a parameter: tables store rows 1..vocab-1 and prepend a constant zero
row at lookup time, so padding can never drift or receive gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DataError

INIT_SCALE = 0.05


class EmbeddingTable:
    """Trainable lookup table with a pinned all-zero padding row."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        if vocab_size < 2:
            raise DataError(f"vocab_size must be >= 2 (padding + 1 id), got {vocab_size}")
        self.vocab_size = vocab_size
        self.dim = dim
        self.weights = Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=(vocab_size - 1, dim)),
                              requires_grad=True)
        self._zero_row = Tensor(np.zeros((1, dim)))

    def lookup(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.size:
            bad = ids[(ids < 0) | (ids >= self.vocab_size)]
            if bad.size:
                raise DataError(f"id {int(bad.flat[0])} outside vocabulary of size {self.vocab_size}")
        table = ag.concat([self._zero_row, self.weights], axis=0)
        return ag.gather(table, ids)


@dataclass
class PageBatch:
    """One batch of pages, padded to fixed (n, m, t).

    Padded slots carry id 0, category 0, label 0, mask 0. All arrays share
    the leading batch dimension.
    """

    items: np.ndarray              # (b, n, m) int
    categories: np.ndarray         # (b, n, m) int
    history: np.ndarray            # (b, t) int
    history_categories: np.ndarray  # (b, t) int
    clicks: np.ndarray             # (b, n, m) float in {0, 1}
    mask: np.ndarray               # (b, n, m) float in {0, 1}
    history_mask: np.ndarray       # (b, t) float in {0, 1}

    def __post_init__(self):
        b, n, m = self.items.shape
        if self.clicks.shape != (b, n, m) or self.mask.shape != (b, n, m):
            raise DataError("clicks/mask must match the item matrix shape")
        if self.history.shape != self.history_mask.shape:
            raise DataError("history and history_mask must match")
        pad = self.mask == 0
        if np.any(self.items[pad] != 0) or np.any(self.clicks[pad] != 0):
            raise DataError("padded slots must carry id 0 and label 0")
        if np.any(self.history[self.history_mask == 0] != 0):
            raise DataError("padded history slots must carry id 0")

    @property
    def size(self) -> int:
        return self.items.shape[0]

    def select(self, idx: np.ndarray) -> "PageBatch":
        return PageBatch(self.items[idx], self.categories[idx], self.history[idx],
                         self.history_categories[idx], self.clicks[idx],
                         self.mask[idx], self.history_mask[idx])


def embed_page(batch: PageBatch, item_table: EmbeddingTable,
               category_table: EmbeddingTable | None = None) -> Tensor:
    """Embed the candidate matrix: (b, n, m) ids -> (b, n, m, d)."""
    out = item_table.lookup(batch.items)
    if category_table is not None:
        out = out + category_table.lookup(batch.categories)
    return out


def embed_history(batch: PageBatch, item_table: EmbeddingTable,
                  category_table: EmbeddingTable | None = None) -> Tensor:
    """Embed the history list: (b, t) ids -> (b, t, d)."""
    out = item_table.lookup(batch.history)
    if category_table is not None:
        out = out + category_table.lookup(batch.history_categories)
    return out
