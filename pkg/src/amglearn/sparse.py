"""Sparse CSR and dense matrix primitives underlying the whole solver stack.

All floating point is 64-bit. SparseMatrix is immutable after construction
and safe to share across concurrent readers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import _kernels
from .errors import ConstructionError, SingularRelaxationError

__all__ = [
    "MatrixKind",
    "SparseMatrix",
    "ComplexDense",
    "from_coordinates",
    "spmv",
    "triple_product",
    "split_lower",
    "gauss_seidel_sweep",
    "build_relaxation_dense",
    "check_kind",
]


class MatrixKind(Enum):
    SPD = "spd"
    SPSD_LAPLACIAN = "spsd-laplacian"


def _readonly(a, dtype):
    out = np.array(a, dtype=dtype, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix with canonical (sorted, deduplicated) rows.

    Stored explicit zeros are allowed; they are only ever put there by the
    prolongation assembly, which must keep its sparsity pattern stable even
    when a learned weight is exactly zero.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", _readonly(self.row_offsets, np.int64))
        object.__setattr__(self, "col_indices", _readonly(self.col_indices, np.int64))
        object.__setattr__(self, "values", _readonly(self.values, np.float64))
        offs, cols = self.row_offsets, self.col_indices
        if offs.shape != (self.n_rows + 1,):
            raise ConstructionError("row_offsets must have length n_rows + 1")
        if offs[0] != 0 or offs[-1] != len(self.values) or np.any(np.diff(offs) < 0):
            raise ConstructionError("row_offsets must be non-decreasing from 0 to nnz")
        if len(cols) != len(self.values):
            raise ConstructionError("col_indices and values lengths differ")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise ConstructionError("column index out of range")
        # strictly increasing columns within each row (ensures no duplicates)
        inner = np.ones(len(cols), dtype=bool)
        if len(cols) > 1:
            inner[1:] = np.diff(cols) > 0
        inner[offs[:-1][offs[:-1] < len(cols)]] = True
        if not inner.all():
            raise ConstructionError("columns must be strictly increasing within rows")

    @property
    def nnz(self):
        return len(self.values)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @cached_property
    def _scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets),
            shape=(self.n_rows, self.n_cols),
        )

    @cached_property
    def diagonal(self) -> np.ndarray:
        if self.n_rows != self.n_cols:
            raise ValueError("diagonal of a non-square matrix")
        d = self._scipy.diagonal().copy()
        d.setflags(write=False)
        return d

    def to_scipy(self) -> sp.csr_matrix:
        return self._scipy

    def to_dense(self) -> np.ndarray:
        return self._scipy.toarray()

    def row(self, i):
        """(column ids, values) of row i as views."""
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def transpose(self) -> "SparseMatrix":
        return from_scipy(self._scipy.T.tocsr())


def from_scipy(m) -> SparseMatrix:
    """Wrap a scipy sparse matrix, canonicalizing to sorted deduplicated CSR."""
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.sort_indices()
    return SparseMatrix(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)


def from_csr_arrays(n_rows, n_cols, row_offsets, col_indices, values) -> SparseMatrix:
    """Construct from ready-made CSR arrays without dropping stored zeros."""
    return SparseMatrix(n_rows, n_cols, row_offsets, col_indices, values)


def from_coordinates(triples, n_rows, n_cols) -> SparseMatrix:
    """Build a canonical CSR matrix from (row, col, value) triples.

    Duplicate coordinates are summed (so element-wise FEM scatter is correct
    as-is) and entries that sum to exactly zero are dropped.
    """
    if isinstance(triples, tuple) and len(triples) == 3 and np.ndim(triples[0]) == 1:
        rows, cols, vals = (np.asarray(t) for t in triples)
    else:
        arr = np.array(list(triples), dtype=np.float64).reshape(-1, 3)
        rows = arr[:, 0].astype(np.int64)
        cols = arr[:, 1].astype(np.int64)
        vals = arr[:, 2]
        if len(arr) and (np.any(arr[:, 0] != rows) or np.any(arr[:, 1] != cols)):
            raise ConstructionError("non-integer row/col index")
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if len(rows) and (rows.min() < 0 or rows.max() >= n_rows):
        raise ConstructionError("row index out of range")
    if len(cols) and (cols.min() < 0 or cols.max() >= n_cols):
        raise ConstructionError("column index out of range")
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols)).tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return SparseMatrix(n_rows, n_cols, m.indptr, m.indices, m.data)


def identity(n) -> SparseMatrix:
    return from_scipy(sp.eye(n, format="csr"))


def spmv(A: SparseMatrix, x) -> np.ndarray:
    """Matrix-vector product y = A x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n_cols,):
        raise ValueError(f"dimension mismatch: A is {A.shape}, x is {x.shape}")
    return A.to_scipy() @ x


def triple_product(P: SparseMatrix, A: SparseMatrix) -> SparseMatrix:
    """Galerkin product P^T A P."""
    if A.n_rows != A.n_cols:
        raise ValueError("A must be square")
    if P.n_rows != A.n_rows:
        raise ValueError(f"dimension mismatch: A is {A.shape}, P is {P.shape}")
    Ps = P.to_scipy()
    out = (Ps.T @ (A.to_scipy() @ Ps)).tocsr()
    out.eliminate_zeros()
    return from_scipy(out)


def split_lower(A: SparseMatrix):
    """Split A = L + U with L the lower triangle incl. diagonal, U strictly upper."""
    if A.n_rows != A.n_cols:
        raise ValueError("A must be square")
    rows = np.repeat(np.arange(A.n_rows), np.diff(A.row_offsets))
    low = A.col_indices <= rows
    L = sp.csr_matrix(
        (A.values[low], (rows[low], A.col_indices[low])), shape=A.shape
    )
    U = sp.csr_matrix(
        (A.values[~low], (rows[~low], A.col_indices[~low])), shape=A.shape
    )
    return from_scipy(L), from_scipy(U)


def gauss_seidel_sweep(A: SparseMatrix, b, x) -> np.ndarray:
    """One forward Gauss-Seidel sweep: x + L^{-1}(b - A x).

    The update is computed by in-order forward substitution on the lower
    triangle of A; cost is proportional to the number of stored entries.
    """
    if A.n_rows != A.n_cols:
        raise ValueError("A must be square")
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if b.shape != (A.n_rows,) or x.shape != (A.n_rows,):
        raise ValueError("dimension mismatch in gauss_seidel_sweep")
    if np.any(A.diagonal == 0.0):
        raise SingularRelaxationError("zero diagonal entry")
    r = b - A.to_scipy() @ x
    d = _kernels.forward_substitution(A.row_offsets, A.col_indices, A.values, r)
    return x + d


def build_relaxation_dense(A: SparseMatrix) -> np.ndarray:
    """Dense Gauss-Seidel error propagation matrix S = I - L^{-1} A."""
    if A.n_rows != A.n_cols:
        raise ValueError("A must be square")
    if np.any(A.diagonal == 0.0):
        raise SingularRelaxationError("zero diagonal entry")
    Ad = A.to_dense()
    L = np.tril(Ad)
    return np.eye(A.n_rows) - scipy.linalg.solve_triangular(L, Ad, lower=True)


def check_kind(A: SparseMatrix, kind: MatrixKind) -> bool:
    """Diagnostic check that A structurally matches the claimed kind."""
    if A.n_rows != A.n_cols:
        return False
    As = A.to_scipy()
    scale = np.abs(A.values).max() if A.nnz else 0.0
    asym = abs(As - As.T)
    if asym.nnz and asym.max() > 1e-12 * max(scale, 1e-300):
        return False
    if kind is MatrixKind.SPD:
        if A.n_rows == 0:
            return False
        eigs = np.linalg.eigvalsh(A.to_dense())
        # strictly positive beyond eigensolver noise on a singular matrix
        return bool(eigs[0] > 1e-12 * max(abs(eigs[0]), abs(eigs[-1]), 1e-300))
    if kind is MatrixKind.SPSD_LAPLACIAN:
        rows = np.repeat(np.arange(A.n_rows), np.diff(A.row_offsets))
        off = A.col_indices != rows
        if np.any(A.values[off] > 0.0):
            return False
        row_sums = np.zeros(A.n_rows)
        np.add.at(row_sums, rows, A.values)
        row_max = np.zeros(A.n_rows)
        np.maximum.at(row_max, rows, np.abs(A.values))
        return bool(np.all(np.abs(row_sums) <= 1e-10 * row_max))
    raise ValueError(f"unknown kind {kind!r}")


@dataclass(frozen=True)
class ComplexDense:
    """Complex dense matrix stored as a pair of real parts of equal shape."""

    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "real", np.asarray(self.real, dtype=np.float64))
        object.__setattr__(self, "imag", np.asarray(self.imag, dtype=np.float64))
        if self.real.shape != self.imag.shape:
            raise ValueError("real and imaginary parts must share a shape")

    @property
    def shape(self):
        return self.real.shape

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @staticmethod
    def from_complex(z) -> "ComplexDense":
        z = np.asarray(z, dtype=np.complex128)
        return ComplexDense(z.real.copy(), z.imag.copy())
