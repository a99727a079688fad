"""Exact Euclidean nearest-neighbor search over urban vectors.

A deliberately simple engine: one full scan per query with blocked distance
evaluation via the squared-norm expansion d**2 = |x|**2 + |y|**2 - 2*x.y,
float64 accumulation over float32 storage. No approximation — results are
oracle-checkable — and ties are broken by place_id so output is total-ordered.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cae import UrbanVector

INDEX_MAGIC = b"MSVX"
INDEX_VERSION = 1

_SCAN_BLOCK = 8192


@dataclass
class NeighborResult:
    query_id: str | None
    neighbors: list[tuple[str, float]]

    def __post_init__(self):
        dists = [d for _, d in self.neighbors]
        if any(d < 0 for d in dists):
            raise ValueError("negative distance in neighbor list")
        if any(a > b for a, b in zip(dists, dists[1:])):
            raise ValueError("neighbor distances are not non-decreasing")

    @property
    def place_ids(self) -> list[str]:
        return [pid for pid, _ in self.neighbors]


class VectorIndex:
    """Immutable store of (place_id, vector) rows with cached squared norms."""

    def __init__(self, place_ids: Sequence[str], matrix: np.ndarray):
        matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[0] == 0:
            raise ValueError(f"index needs a non-empty 2-d matrix, got shape {matrix.shape}")
        if len(place_ids) != matrix.shape[0]:
            raise ValueError(f"{len(place_ids)} ids for {matrix.shape[0]} vectors")
        if len(set(place_ids)) != len(place_ids):
            seen, dupes = set(), set()
            for pid in place_ids:
                (dupes if pid in seen else seen).add(pid)
            raise ValueError(f"duplicate place ids: {sorted(dupes)}")
        self.place_ids = list(place_ids)
        self.matrix = matrix
        m64 = matrix.astype(np.float64)
        self.sq_norms = np.einsum("ij,ij->i", m64, m64)
        # rank of each row's id in lexicographic order, for tie-breaking
        order = np.argsort(np.array(self.place_ids))
        self._id_rank = np.empty(len(self.place_ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.place_ids))
        self._row_of = {pid: i for i, pid in enumerate(self.place_ids)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def __contains__(self, place_id: str) -> bool:
        return place_id in self._row_of

    def vector_for(self, place_id: str) -> np.ndarray:
        try:
            return self.matrix[self._row_of[place_id]]
        except KeyError:
            raise KeyError(f"place id {place_id!r} not in index") from None


def build_index(vectors: Sequence[UrbanVector]) -> VectorIndex:
    if not vectors:
        raise ValueError("cannot build an index from zero vectors")
    dims = {v.values.shape[0] for v in vectors}
    if len(dims) > 1:
        raise ValueError(f"inconsistent vector dimensions: {sorted(dims)}")
    matrix = np.stack([v.values for v in vectors])
    return VectorIndex([v.place_id for v in vectors], matrix)


def _squared_distances(index: VectorIndex, query64: np.ndarray) -> np.ndarray:
    qq = float(query64 @ query64)
    d2 = np.empty(len(index), dtype=np.float64)
    for start in range(0, len(index), _SCAN_BLOCK):
        block = index.matrix[start : start + _SCAN_BLOCK].astype(np.float64)
        dots = np.einsum("ij,j->i", block, query64)
        d2[start : start + block.shape[0]] = index.sq_norms[start : start + block.shape[0]] + qq - 2.0 * dots
    np.maximum(d2, 0.0, out=d2)
    return d2


def knn(
    index: VectorIndex,
    query: np.ndarray,
    k: int,
    exclude_self: bool = False,
    query_id: str | None = None,
) -> NeighborResult:
    """The k exact nearest entries, ties broken by place_id ascending.

    With exclude_self, the indexed entry whose id equals query_id (when given
    and present) is skipped.
    """
    query64 = np.asarray(query, dtype=np.float64).reshape(-1)
    if query64.shape[0] != index.dim:
        raise ValueError(f"query dim {query64.shape[0]} does not match index dim {index.dim}")
    skip_row = None
    if exclude_self and query_id is not None and query_id in index:
        skip_row = index._row_of[query_id]
    pool = len(index) - (1 if skip_row is not None else 0)
    if not 1 <= k <= pool:
        raise ValueError(f"k={k} out of range [1, {pool}]")
    d2 = _squared_distances(index, query64)
    if skip_row is not None:
        d2[skip_row] = np.inf
    picked = np.lexsort((index._id_rank, d2))[:k]
    neighbors = [(index.place_ids[i], float(np.sqrt(d2[i]))) for i in picked]
    return NeighborResult(query_id, neighbors)


def knn_by_id(index: VectorIndex, place_id: str, k: int = 6, exclude_self: bool = True) -> NeighborResult:
    """Neighbors of an already-indexed place, by default excluding itself."""
    return knn(index, index.vector_for(place_id), k, exclude_self=exclude_self, query_id=place_id)


# -- index file (MSVX) -----------------------------------------------------------


def write_index(path: str | Path, index: VectorIndex) -> None:
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<HIQ", INDEX_VERSION, index.dim, len(index)))
        for pid in index.place_ids:
            raw = pid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(index.matrix, dtype="<f4").tobytes())


def read_index(path: str | Path) -> VectorIndex:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != INDEX_MAGIC:
            raise ValueError(f"bad index magic {magic!r}")
        version, dim, count = struct.unpack("<HIQ", fh.read(14))
        if version != INDEX_VERSION:
            raise ValueError(f"unsupported index version {version}")
        place_ids = []
        for _ in range(count):
            (n,) = struct.unpack("<I", fh.read(4))
            place_ids.append(fh.read(n).decode("utf-8"))
        raw = fh.read(4 * dim * count)
        matrix = np.frombuffer(raw, dtype="<f4").reshape(count, dim)
    return VectorIndex(place_ids, matrix)
