"""CSR storage for adjacency and Laplacian operators."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InputError, ShapeError


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable CSR matrix of float64 values.

    Column indices are strictly increasing within each row; explicit zeros
    are dropped at construction.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        if self.indptr.shape != (self.n_rows + 1,):
            raise ShapeError("indptr length must be n_rows + 1")
        if self.indices.shape != self.data.shape:
            raise ShapeError("indices and data must have equal length")
        if self.indices.size > 1:
            same_row = np.diff(np.repeat(np.arange(self.n_rows), np.diff(self.indptr))) == 0
            if np.any(same_row & (np.diff(self.indices) <= 0)):
                raise InputError("column indices not strictly increasing within a row")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.n_cols):
            raise InputError("column index out of range")
        if self.symmetric and not _is_symmetric(self.scipy):
            raise InputError("matrix flagged symmetric is not symmetric")

    @classmethod
    def from_coo(cls, rows, cols, vals, shape, symmetric=False) -> "SparseMatrix":
        """Build from triplets; duplicate entries are summed."""
        m = sp.csr_matrix(
            (np.asarray(vals, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
            shape=shape,
        )
        return cls.from_scipy(m, symmetric=symmetric)

    @classmethod
    def from_scipy(cls, m, symmetric=False) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(
            m.shape[0], m.shape[1],
            m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.copy(),
            symmetric=symmetric,
        )

    @classmethod
    def from_dense(cls, a, symmetric=False) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)), symmetric)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"), symmetric=True)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    @cached_property
    def scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    @cached_property
    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), np.diff(self.indptr))

    def to_dense(self) -> np.ndarray:
        return self.scipy.toarray()

    def __matmul__(self, other: np.ndarray) -> np.ndarray:
        return np.asarray(self.scipy @ other)

    def __sub__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.scipy - other.scipy,
                                       symmetric=self.symmetric and other.symmetric)

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.scipy + other.scipy,
                                       symmetric=self.symmetric and other.symmetric)


def _is_symmetric(m: sp.csr_matrix) -> bool:
    if m.shape[0] != m.shape[1]:
        return False
    d = m - m.T
    return d.nnz == 0 or np.max(np.abs(d.data)) == 0.0


@dataclass(eq=False)
class SparseValue:
    """Sparse matrix whose nonzero values are a differentiable column block.

    ``vals`` is an autodiff Value of shape (nnz, heads); column h holds the
    entries of the h-th matrix. Entries need not be sorted.
    """

    rows: np.ndarray
    cols: np.ndarray
    shape: tuple[int, int]
    vals: "object"  # autodiff.Value; typed loosely to avoid an import cycle
    heads: int = field(default=1)
