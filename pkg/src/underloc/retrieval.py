"""Global retrieval stage: query-vs-database distance matrix and top-K
candidate selection.

Distances are raw L2; "most similar" means smallest distance. Rows index the
database side, columns the query side, both in manifest order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .dataio import DescriptorSet, ParseError

MATRIX_MAGIC = b"ULS1"

# Above this many float32 cells the matrix is not materialized; columns are
# computed on demand from the descriptor arrays instead.
DEFAULT_MEMORY_CAP_BYTES = 2 << 30


def _as_matrix(descriptors: DescriptorSet | np.ndarray) -> np.ndarray:
    if isinstance(descriptors, DescriptorSet):
        return descriptors.values
    return np.ascontiguousarray(descriptors, dtype=np.float32)


def _column_distances(database: np.ndarray, query_vector: np.ndarray) -> np.ndarray:
    diff = database - query_vector[np.newaxis, :]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff, dtype=np.float64))


@dataclass
class SimilarityMatrix:
    """|D| x |Q| matrix of L2 distances, dense or streamed per column."""

    n_database: int
    n_queries: int
    _dense: Optional[np.ndarray] = None
    _database: Optional[np.ndarray] = None
    _queries: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_database, self.n_queries)

    @property
    def is_dense(self) -> bool:
        return self._dense is not None

    @property
    def values(self) -> np.ndarray:
        if self._dense is None:
            self._dense = np.column_stack(
                [self.column(i) for i in range(self.n_queries)]
            )
        return self._dense

    def column(self, query_index: int) -> np.ndarray:
        if not 0 <= query_index < self.n_queries:
            raise IndexError(f"query index {query_index} out of range")
        if self._dense is not None:
            return self._dense[:, query_index]
        return _column_distances(self._database, self._queries[query_index])


def compute_similarity(
    queries: DescriptorSet | np.ndarray,
    database: DescriptorSet | np.ndarray,
    *,
    memory_cap_bytes: int = DEFAULT_MEMORY_CAP_BYTES,
) -> SimilarityMatrix:
    """Pairwise Euclidean distances, entry [j, i] = ||database_j - query_i||.

    Identical vectors give exactly 0 (distances come from explicit
    differences, not the expanded dot-product form).
    """
    q = _as_matrix(queries)
    d = _as_matrix(database)
    if q.ndim != 2 or d.ndim != 2 or q.shape[1] != d.shape[1]:
        raise ValueError(
            f"descriptor dimension mismatch: queries {q.shape} vs database {d.shape}"
        )
    n_d, n_q = d.shape[0], q.shape[0]
    if n_d * n_q * 4 > memory_cap_bytes:
        return SimilarityMatrix(n_database=n_d, n_queries=n_q, _database=d, _queries=q)
    dense = np.empty((n_d, n_q), dtype=np.float64)
    for i in range(n_q):
        dense[:, i] = _column_distances(d, q[i])
    return SimilarityMatrix(n_database=n_d, n_queries=n_q, _dense=dense)


@dataclass(frozen=True)
class CandidateSet:
    """Top-K retrieval candidates for one query, ascending by (distance, index)."""

    query_index: int
    entries: tuple[tuple[int, float], ...]

    @property
    def database_indices(self) -> list[int]:
        return [j for j, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def top_k(
    s: SimilarityMatrix,
    query_index: int,
    k: int,
    *,
    exclude: Iterable[int] = (),
) -> CandidateSet:
    """K smallest-distance database entries for a query column.

    Ties break by ascending database index. K larger than the database
    returns everything. `exclude` removes database indices up front (used to
    ban self-matches when query and database sides coincide).
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    column = s.column(query_index)
    excluded = set(exclude)
    if excluded:
        keep = np.array([j for j in range(len(column)) if j not in excluded], dtype=np.int64)
        column = column[keep]
    else:
        keep = None
    order = np.lexsort((np.arange(len(column)), column))[: min(k, len(column))]
    if keep is not None:
        entries = tuple((int(keep[j]), float(column[j])) for j in order)
    else:
        entries = tuple((int(j), float(column[j])) for j in order)
    return CandidateSet(query_index=query_index, entries=entries)


def full_ranking(s: SimilarityMatrix, query_index: int, *, exclude: Iterable[int] = ()) -> np.ndarray:
    """All database indices for a query, best (smallest distance) first."""
    return np.array(
        top_k(s, query_index, s.n_database, exclude=exclude).database_indices, dtype=np.int64
    )


def save_matrix(s: SimilarityMatrix, path: str | Path) -> None:
    """Dump the dense matrix: magic "ULS1", u32 rows, u32 cols, float32 row-major."""
    values = s.values
    with Path(path).open("wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<II", values.shape[0], values.shape[1]))
        fh.write(values.astype("<f4").tobytes())


def load_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(4)
        if magic != MATRIX_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        buf = fh.read(4 * rows * cols)
        if len(buf) != 4 * rows * cols:
            raise ParseError(f"{path}: truncated matrix payload")
        return np.frombuffer(buf, dtype="<f4").reshape(rows, cols).copy()
