"""CSR matrix contract: canonicalization, validated spmv, Matrix Market IO.

Storage is scipy.sparse.csr_matrix; these helpers pin the invariants the
solver kernels rely on (sorted column indices, no duplicates) and give the
package one choke point for sparse IO.
"""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp


def as_canonical_csr(A) -> sp.csr_matrix:
    """CSR with sorted, duplicate-free column indices."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def validate_csr(A: sp.csr_matrix) -> sp.csr_matrix:
    if not sp.isspmatrix_csr(A):
        raise TypeError("expected a CSR matrix")
    if A.indptr.shape != (A.shape[0] + 1,):
        raise ValueError("row pointer length mismatch")
    starts, ends = A.indptr[:-1], A.indptr[1:]
    if np.any(ends < starts):
        raise ValueError("row pointers must be nondecreasing")
    # sorted and duplicate-free within each row
    if A.indices.size > 1:
        d = np.diff(A.indices)
        row_internal = np.ones(d.size, dtype=bool)
        boundaries = ends[:-1] - 1  # diff positions that cross a row boundary
        boundaries = boundaries[(boundaries >= 0) & (boundaries < d.size)]
        row_internal[boundaries] = False
        if np.any(row_internal & (d <= 0)):
            raise ValueError("column indices must be strictly increasing within each row")
    return A


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


def save_matrix_market(path, A) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))


def load_matrix_market(path) -> sp.csr_matrix:
    return as_canonical_csr(scipy.io.mmread(str(path)))
