# symnum/linalg.py
"""
Numerical kernel: compressed-column sparse matrices built from triplets, in-place
addition into a fixed pattern, sparse LU solves with reusable column ordering,
and dense eigenvalues.
"""

from __future__ import annotations
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from symnum.errors import EigenError, SingularMatrixError

logger = logging.getLogger(__name__)

SparseMatrix = scipy.sparse.csc_matrix

Triplet = Tuple[int, int, float]


# ---------------------------------------------------------------------------
# Construction and in-place updates
# ---------------------------------------------------------------------------

def csc_from_triplets(
    shape: Tuple[int, int],
    entries: Union[Sequence[Triplet], Tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> SparseMatrix:
    """Build a canonical CSC matrix; duplicate positions are summed.

    `entries` is either a list of (row, col, value) triplets or a tuple of three
    equal-length arrays. Explicit zeros are kept so the result can serve as a
    zero-filled sparsity pattern.
    """
    if isinstance(entries, tuple) and len(entries) == 3 and isinstance(entries[0], np.ndarray):
        rows, cols, vals = (np.asarray(a) for a in entries)
    else:
        entries = list(entries)
        rows = np.array([e[0] for e in entries], dtype=np.int64)
        cols = np.array([e[1] for e in entries], dtype=np.int64)
        vals = np.array([e[2] for e in entries], dtype=float)
    n_rows, n_cols = shape
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
        raise ValueError(f"Triplet index out of bounds for shape {shape}")
    m = scipy.sparse.coo_matrix(
        (vals.astype(float), (rows.astype(np.int64), cols.astype(np.int64))), shape=shape,
    ).tocsc()
    m.sum_duplicates()
    m.sort_indices()
    return m


def pattern_slots(m: SparseMatrix, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Positions in `m.data` of each (row, col) pair; every pair must be in the pattern."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    n_rows = m.shape[0]
    entry_cols = np.repeat(np.arange(m.shape[1], dtype=np.int64), np.diff(m.indptr))
    data_keys = entry_cols * n_rows + m.indices.astype(np.int64)
    query = cols * n_rows + rows
    slots = np.searchsorted(data_keys, query)
    if slots.size:
        inside = slots < data_keys.size
        if not inside.all() or not np.array_equal(data_keys[slots], query):
            raise ValueError("Position not registered in sparsity pattern")
    return slots.astype(np.int64)


def zeroize(m: SparseMatrix) -> None:
    """Reset stored values to zero, keeping the pattern."""
    m.data[:] = 0.0


def inplace_add(m: SparseMatrix, slots: np.ndarray, values: Union[np.ndarray, float]) -> None:
    """Add `values` at precomputed data slots without touching the pattern."""
    if slots.size == 0:
        return
    if slots.min() < 0 or slots.max() >= m.data.size:
        raise ValueError("Unregistered sparsity slot")
    np.add.at(m.data, slots, values)


# ---------------------------------------------------------------------------
# Sparse LU
# ---------------------------------------------------------------------------

@dataclass
class LuReuse:
    """Column ordering from the first factorization of a sparsity pattern.

    Later factorizations of a matrix with the same pattern skip the ordering
    step and factorize the pre-permuted matrix in natural order.
    """
    indptr: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None
    column_order: Optional[np.ndarray] = None
    factorizations: int = 0

    def matches(self, m: SparseMatrix) -> bool:
        return (
            self.column_order is not None
            and np.array_equal(self.indptr, m.indptr)
            and np.array_equal(self.indices, m.indices)
        )


@dataclass
class LuFactors:
    """Factorization of A with an applied column ordering q: A[:, q] = Pr^T L U Pc^T."""
    lu: scipy.sparse.linalg.SuperLU
    column_order: np.ndarray
    shape: Tuple[int, int] = field(default=(0, 0))

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.lu is None:
            return np.zeros(0)
        w = self.lu.solve(np.asarray(b, dtype=float))
        z = np.empty_like(w)
        z[self.column_order] = w
        if not np.all(np.isfinite(z)):
            raise SingularMatrixError("Sparse solve produced non-finite values")
        return z


def _zero_pivot(lu: scipy.sparse.linalg.SuperLU) -> Optional[int]:
    diag = lu.U.diagonal()
    zeros = np.flatnonzero(diag == 0)
    return int(zeros[0]) if zeros.size else None


def factorize(A: SparseMatrix, reuse: Optional[LuReuse] = None) -> LuFactors:
    """LU-factorize a square CSC matrix with partial pivoting."""
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"Matrix must be square, got {A.shape}")
    A = scipy.sparse.csc_matrix(A)
    n = A.shape[0]
    if n == 0:
        return LuFactors(lu=None, column_order=np.zeros(0, dtype=np.int64), shape=A.shape)

    try:
        if reuse is not None and reuse.matches(A):
            order = reuse.column_order
            lu = scipy.sparse.linalg.splu(A[:, order], permc_spec='NATURAL')
        else:
            lu = scipy.sparse.linalg.splu(A, permc_spec='COLAMD')
            if _zero_pivot(lu) is None:
                order = np.argsort(lu.perm_c)
                # refactor in the recorded order so later reuses see identical pivoting
                lu = scipy.sparse.linalg.splu(A[:, order], permc_spec='NATURAL')
            else:
                order = np.arange(n)
            if reuse is not None:
                reuse.indptr = A.indptr.copy()
                reuse.indices = A.indices.copy()
                reuse.column_order = order
    except RuntimeError as e:
        raise SingularMatrixError(f"Sparse LU failed: {e}") from e

    pivot = _zero_pivot(lu)
    if pivot is not None:
        raise SingularMatrixError("Matrix is numerically singular", pivot=pivot)
    if reuse is not None:
        reuse.factorizations += 1
    return LuFactors(lu=lu, column_order=order, shape=A.shape)


def sparse_lu_solve(A: SparseMatrix, b: np.ndarray, reuse: Optional[LuReuse] = None) -> np.ndarray:
    """Solve A z = b by sparse LU."""
    b = np.asarray(b, dtype=float)
    if A.shape[0] == 0:
        return np.zeros(0)
    return factorize(A, reuse).solve(b)


# ---------------------------------------------------------------------------
# Dense eigenvalues
# ---------------------------------------------------------------------------

def dense_eigenvalues(A: np.ndarray) -> np.ndarray:
    """All eigenvalues of a dense square matrix (LAPACK Hessenberg + shifted QR)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"Matrix must be square, got shape {A.shape}")
    if A.size == 0:
        return np.zeros(0, dtype=complex)
    if not np.all(np.isfinite(A)):
        raise EigenError("Matrix contains non-finite entries")
    try:
        return scipy.linalg.eigvals(A).astype(complex)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise EigenError(f"Eigenvalue iteration did not converge: {e}") from e


def eigen_residual(A: np.ndarray, lam: complex) -> float:
    """min ||(A - lam I) v|| over unit v, i.e. the smallest singular value."""
    A = np.asarray(A, dtype=complex)
    shifted = A - lam * np.eye(A.shape[0])
    return float(scipy.linalg.svdvals(shifted).min())
