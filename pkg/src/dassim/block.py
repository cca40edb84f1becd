"""Cell availability of an erasure-extended block.

Only availability is modelled: a row (column) with at least K of its N cells
present can be completed, no codec arithmetic is done.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig, round_half_away


class NotRecoverable(ValueError):
    pass


@dataclass
class BlockAvailability:
    """Boolean availability bitmap of shape (n_rows, n_cols).

    ``row_k`` is the number of cells needed to complete a row (a row has
    n_cols cells); ``col_k`` likewise for a column.
    """

    bits: np.ndarray
    row_k: int
    col_k: int

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValueError("availability bitmap must be 2-D")

    @classmethod
    def empty(cls, n_rows: int, n_cols: int, row_k: int, col_k: int) -> "BlockAvailability":
        return cls(np.zeros((n_rows, n_cols), dtype=bool), row_k, col_k)

    @classmethod
    def for_config(cls, cfg: SimConfig) -> "BlockAvailability":
        return cls.empty(cfg.n_rows, cfg.n_cols, cfg.row_size_k, cfg.col_size_k)

    @property
    def n_rows(self) -> int:
        return self.bits.shape[0]

    @property
    def n_cols(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())

    def copy(self) -> "BlockAvailability":
        return BlockAvailability(self.bits.copy(), self.row_k, self.col_k)


def new_released_block(cfg: SimConfig, rng: np.random.Generator) -> BlockAvailability:
    """Ground-truth availability after the producer withholds its share.

    Exactly round(failure_rate * cells) cells are cleared, drawn uniformly
    without replacement.
    """
    block = BlockAvailability.for_config(cfg)
    total = block.bits.size
    withheld = min(total, round_half_away(cfg.failure_rate * total))
    flat = np.ones(total, dtype=bool)
    if withheld:
        flat[rng.choice(total, size=withheld, replace=False)] = False
    block.bits = flat.reshape(block.bits.shape)
    return block


def is_row_recoverable(avail: BlockAvailability, row: int) -> bool:
    return int(avail.bits[row].sum()) >= avail.row_k


def is_col_recoverable(avail: BlockAvailability, col: int) -> bool:
    return int(avail.bits[:, col].sum()) >= avail.col_k


def reconstruct_row(avail: BlockAvailability, row: int) -> int:
    """Complete ``row`` in place and return the number of cells added."""
    if not is_row_recoverable(avail, row):
        raise NotRecoverable(f"row {row} holds fewer than {avail.row_k} cells")
    added = avail.n_cols - int(avail.bits[row].sum())
    avail.bits[row] = True
    return added


def reconstruct_col(avail: BlockAvailability, col: int) -> int:
    if not is_col_recoverable(avail, col):
        raise NotRecoverable(f"column {col} holds fewer than {avail.col_k} cells")
    added = avail.n_rows - int(avail.bits[:, col].sum())
    avail.bits[:, col] = True
    return added


def reconstruct_fixpoint(avail: BlockAvailability, rows=None, cols=None) -> int:
    """Alternate row and column repair until nothing changes.

    ``rows``/``cols`` optionally restrict which lines may be repaired (a node
    only repairs lines in its custody); ``None`` allows all. Returns the total
    number of cells added. The result does not depend on repair order because
    repair is monotone.
    """
    row_mask = np.ones(avail.n_rows, dtype=bool) if rows is None else _mask(rows, avail.n_rows)
    col_mask = np.ones(avail.n_cols, dtype=bool) if cols is None else _mask(cols, avail.n_cols)
    bits = avail.bits
    before = int(bits.sum())
    while True:
        row_fill = row_mask & (bits.sum(axis=1) >= avail.row_k) & ~bits.all(axis=1)
        bits[row_fill] = True
        col_fill = col_mask & (bits.sum(axis=0) >= avail.col_k) & ~bits.all(axis=0)
        bits[:, col_fill] = True
        if not row_fill.any() and not col_fill.any():
            break
    return int(bits.sum()) - before


def _mask(indices, size: int) -> np.ndarray:
    m = np.zeros(size, dtype=bool)
    m[list(indices)] = True
    return m
