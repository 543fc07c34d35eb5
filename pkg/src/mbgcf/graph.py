"""Bipartite behavior graphs in CSR form and the products used for propagation.

Node layout: users occupy ``[0, M)`` and items ``[M, M + N)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DataError, ShapeError


@dataclass(frozen=True)
class InteractionSet:
    """Positive ``(user, item)`` pairs of one behavior.

    ``pairs`` is an ``(n, 2)`` int64 array, deduplicated and sorted by
    ``(user, item)``. Build instances with :meth:`from_pairs` rather than the
    constructor so those guarantees hold.
    """

    behavior_id: int
    num_users: int
    num_items: int
    pairs: np.ndarray

    @classmethod
    def from_pairs(cls, behavior_id, num_users, num_items, pairs):
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        bad = (arr[:, 0] < 0) | (arr[:, 0] >= num_users) | (arr[:, 1] < 0) | (arr[:, 1] >= num_items)
        if bad.any():
            u, i = arr[np.flatnonzero(bad)[0]]
            raise DataError(
                f"pair (user={u}, item={i}) out of range for behavior {behavior_id} "
                f"with {num_users} users and {num_items} items"
            )
        keys = np.unique(arr[:, 0] * num_items + arr[:, 1])
        arr = np.stack([keys // num_items, keys % num_items], axis=1) if len(keys) else np.empty((0, 2), np.int64)
        arr.setflags(write=False)
        return cls(int(behavior_id), int(num_users), int(num_items), arr)

    def __len__(self):
        return len(self.pairs)

    @property
    def users(self):
        return self.pairs[:, 0]

    @property
    def items(self):
        return self.pairs[:, 1]

    @property
    def keys(self):
        """Sorted flat keys ``u * N + i``; sorted because ``pairs`` is."""
        return self.pairs[:, 0] * self.num_items + self.pairs[:, 1]

    def contains(self, users, items):
        """Vectorized membership test of ``(users[t], items[t])`` pairs."""
        keys = self.keys
        q = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        if len(keys) == 0:
            return np.zeros(q.shape, dtype=bool)
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, len(keys) - 1)
        return keys[pos] == q

    def user_counts(self):
        return np.bincount(self.users, minlength=self.num_users)

    def positives_of(self, user):
        lo, hi = np.searchsorted(self.users, [user, user + 1])
        return self.items[lo:hi]

    def to_dense(self):
        R = np.zeros((self.num_users, self.num_items))
        R[self.users, self.items] = 1.0
        return R


@dataclass(frozen=True)
class SparseMatrixCSR:
    """Compressed sparse row matrix with float64 values and sorted columns."""

    num_rows: int
    num_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro, ci, v = self.row_offsets, self.col_indices, self.values
        if len(ro) != self.num_rows + 1 or ro[0] != 0 or ro[-1] != len(ci) or len(ci) != len(v):
            raise ShapeError("inconsistent CSR offsets")
        if np.any(np.diff(ro) < 0):
            raise ShapeError("CSR row offsets must be non-decreasing")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.num_cols):
            raise ShapeError("CSR column index out of range")
        if not np.all(np.isfinite(v)):
            raise ShapeError("CSR values must be finite")
        for a in (ro, ci, v):
            a.setflags(write=False)

    @property
    def shape(self):
        return (self.num_rows, self.num_cols)

    @property
    def nnz(self):
        return len(self.col_indices)

    @classmethod
    def from_coo(cls, num_rows, num_cols, rows, cols, values):
        """Build from coordinates, summing duplicates and sorting each row."""
        m = sp.coo_matrix(
            (np.asarray(values, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
            shape=(num_rows, num_cols),
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(
            num_rows,
            num_cols,
            m.indptr.astype(np.int64),
            m.indices.astype(np.int64),
            m.data.astype(np.float64),
        )

    def row_indices(self):
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.num_rows, dtype=np.int64), np.diff(self.row_offsets))

    def to_scipy(self):
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape, copy=False
        )

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self.row_indices(), self.col_indices] = self.values
        return out


@dataclass(frozen=True)
class NormalizedGraph:
    """Symmetrically normalized adjacency ``D^-1/2 A D^-1/2`` of one behavior."""

    adjacency: SparseMatrixCSR
    behavior_id: int = 0

    def __post_init__(self):
        # cached scipy view; the CSR arrays are read-only so this never goes stale
        object.__setattr__(self, "_csr", self.adjacency.to_scipy())

    @property
    def num_nodes(self):
        return self.adjacency.num_rows

    def to_dense(self):
        return self.adjacency.to_dense()


def build_adjacency(interactions: InteractionSet) -> SparseMatrixCSR:
    """Binary bipartite adjacency ``[[0, R], [R^T, 0]]`` over ``M + N`` nodes."""
    M, N = interactions.num_users, interactions.num_items
    u = interactions.users
    i = interactions.items
    if len(u) and (u.min() < 0 or u.max() >= M or i.min() < 0 or i.max() >= N):
        bad = np.flatnonzero((u < 0) | (u >= M) | (i < 0) | (i >= N))[0]
        raise DataError(f"pair (user={u[bad]}, item={i[bad]}) out of range for {M} users, {N} items")
    rows = np.concatenate([u, M + i])
    cols = np.concatenate([M + i, u])
    return SparseMatrixCSR.from_coo(M + N, M + N, rows, cols, np.ones(len(rows)))


def normalize_adjacency(adjacency: SparseMatrixCSR, behavior_id: int = 0) -> NormalizedGraph:
    """Replace each nonzero ``(p, q)`` with ``1 / sqrt(deg(p) * deg(q))``.

    Zero-degree nodes hold no entries, so their rows and columns stay empty.
    """
    if adjacency.num_rows != adjacency.num_cols:
        raise ShapeError(f"adjacency must be square, got {adjacency.shape}")
    n = adjacency.num_rows
    rows = adjacency.row_indices()
    cols = adjacency.col_indices
    deg = np.bincount(rows, weights=adjacency.values, minlength=n)
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    norm = SparseMatrixCSR(n, n, adjacency.row_offsets.copy(), cols.copy(), vals)
    return NormalizedGraph(norm, behavior_id)


def build_graph(interactions: InteractionSet) -> NormalizedGraph:
    return normalize_adjacency(build_adjacency(interactions), interactions.behavior_id)


def spmm(graph: NormalizedGraph, dense) -> np.ndarray:
    """Exact float64 product ``graph @ dense``.

    Rows are accumulated in ascending column order, single-threaded, so the
    result is bit-reproducible.
    """
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[0] != graph.num_nodes:
        raise ShapeError(
            f"spmm expects a ({graph.num_nodes}, d) matrix, got shape {dense.shape}"
        )
    return np.asarray(graph._csr @ dense)
