"""Zero-fill incomplete LU factorization on the CSR pattern.

The factor overwrites a copy of the CSR value array: strictly-lower entries
hold L (unit diagonal implied), diagonal and upper entries hold U.  Kernels
are numba-compiled; columns must be sorted within each row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .csr import as_canonical_csr


class ZeroPivotError(ValueError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"zero pivot encountered in row {row}")


@dataclass(frozen=True)
class Ilu0Factor:
    n: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    diag_pos: np.ndarray


@njit(cache=True)
def _factor_kernel(n, indptr, indices, values, diag_pos, colmap):
    for i in range(n):
        for pos in range(indptr[i], indptr[i + 1]):
            colmap[indices[pos]] = pos
        for pos in range(indptr[i], diag_pos[i]):
            k = indices[pos]
            ukk = values[diag_pos[k]]
            if ukk == 0.0:
                return k
            lik = values[pos] / ukk
            values[pos] = lik
            for pos2 in range(diag_pos[k] + 1, indptr[k + 1]):
                p = colmap[indices[pos2]]
                if p >= 0:
                    values[p] -= lik * values[pos2]
        if values[diag_pos[i]] == 0.0:
            return i
        for pos in range(indptr[i], indptr[i + 1]):
            colmap[indices[pos]] = -1
    return -1


@njit(cache=True)
def _solve_kernel(n, indptr, indices, values, diag_pos, r, out):
    # forward: L z = r with unit diagonal
    for i in range(n):
        s = r[i]
        for pos in range(indptr[i], diag_pos[i]):
            s -= values[pos] * out[indices[pos]]
        out[i] = s
    # backward: U x = z
    for i in range(n - 1, -1, -1):
        s = out[i]
        for pos in range(diag_pos[i] + 1, indptr[i + 1]):
            s -= values[pos] * out[indices[pos]]
        out[i] = s / values[diag_pos[i]]


def _diag_positions(A: sp.csr_matrix) -> np.ndarray:
    n = A.shape[0]
    diag_pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        idx = np.searchsorted(A.indices[lo:hi], i)
        if idx < hi - lo and A.indices[lo + idx] == i:
            diag_pos[i] = lo + idx
    if np.any(diag_pos < 0):
        raise ZeroPivotError(int(np.nonzero(diag_pos < 0)[0][0]))
    return diag_pos


def ilu0_factor(A) -> Ilu0Factor:
    """Factor A on its own sparsity pattern; requires structural diagonal."""
    A = as_canonical_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("ILU0 needs a square matrix")
    n = A.shape[0]
    diag_pos = _diag_positions(A)
    values = A.data.astype(np.float64).copy()
    colmap = np.full(n, -1, dtype=np.int64)
    bad = _factor_kernel(n, A.indptr, A.indices, values, diag_pos, colmap)
    if bad >= 0:
        raise ZeroPivotError(int(bad))
    return Ilu0Factor(n=n, indptr=A.indptr, indices=A.indices, values=values, diag_pos=diag_pos)


def ilu0_apply(fac: Ilu0Factor, r: np.ndarray) -> np.ndarray:
    if r.shape != (fac.n,):
        raise ValueError("right-hand side length mismatch")
    out = np.empty(fac.n, dtype=np.float64)
    _solve_kernel(fac.n, fac.indptr, fac.indices, fac.values, fac.diag_pos, np.asarray(r, dtype=np.float64), out)
    return out
