import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from fieldgrid.field import EmbeddingField


logger = logging.getLogger(__name__)


class EmptyBufferError(ValueError):
    """No valid cell center falls inside the buffer"""


@dataclass(frozen=True)
class BufferQuery:
    """Closed disk around a point, in map units"""
    center_x: float
    center_y: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"buffer radius must be > 0, got {self.radius}")


@dataclass(frozen=True, eq=False)
class PooledVector:
    """Per-channel mean over the cells inside a buffer"""
    values: np.ndarray
    pixel_count: int


def buffer_members(field: EmbeddingField, query: BufferQuery) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rows and columns of the valid cells whose centers lie within the radius.
    Cells are returned in row-major order.
    """
    cs = field.cell_size
    r = query.radius
    # offsets of the query center from the top-left cell center
    off_x = field.origin_x - query.center_x
    off_y = field.origin_y - query.center_y

    # generous window, membership is decided exactly below
    col_lo = max(0, math.floor((-off_x - r) / cs) - 1)
    col_hi = min(field.width - 1, math.ceil((-off_x + r) / cs) + 1)
    row_lo = max(0, math.floor((off_y - r) / cs) - 1)
    row_hi = min(field.height - 1, math.ceil((off_y + r) / cs) + 1)
    if col_lo > col_hi or row_lo > row_hi:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty

    cols = np.arange(col_lo, col_hi + 1)
    rows = np.arange(row_lo, row_hi + 1)
    dx = off_x + cols * cs
    dy = off_y - rows * cs
    inside = dx[None, :] ** 2 + dy[:, None] ** 2 <= r * r
    inside &= field.valid[row_lo:row_hi + 1, col_lo:col_hi + 1]
    rr, cc = np.nonzero(inside)
    return rr + row_lo, cc + col_lo


def pool_buffer(field: EmbeddingField, query: BufferQuery) -> PooledVector:
    """Mean of the field over a circular buffer (cell-center membership)"""
    rows, cols = buffer_members(field, query)
    if rows.size == 0:
        raise EmptyBufferError(
            f"no valid cells within {query.radius} of ({query.center_x}, {query.center_y})")
    values = field.data[rows, cols].astype(np.float64).sum(axis=0) / rows.size
    return PooledVector(values, int(rows.size))


def _pool_or_none(field: EmbeddingField, query: BufferQuery) -> Optional[PooledVector]:
    try:
        return pool_buffer(field, query)
    except EmptyBufferError:
        return None


def pool_buffer_batch(field: EmbeddingField, queries: List[BufferQuery],
                      threads: int = 1) -> List[Optional[PooledVector]]:
    """
    pool_buffer over many queries. Empty buffers come back as None.
    Output order always follows the input order.
    """
    if threads <= 1 or len(queries) < 2:
        return [_pool_or_none(field, q) for q in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda q: _pool_or_none(field, q), queries))


def pool_points(field: EmbeddingField, xs: np.ndarray, ys: np.ndarray, radius: float,
                threads: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pool a buffer around each point.
    Returns an (n, channels) float64 matrix and a boolean mask of the points
    whose buffer was non-empty; rows of empty points are left as NaN.
    """
    queries = [BufferQuery(float(x), float(y), radius) for x, y in zip(xs, ys)]
    pooled = pool_buffer_batch(field, queries, threads=threads)
    out = np.full((len(queries), field.channels), np.nan)
    ok = np.zeros(len(queries), dtype=bool)
    for i, p in enumerate(pooled):
        if p is not None:
            out[i] = p.values
            ok[i] = True
    return out, ok
