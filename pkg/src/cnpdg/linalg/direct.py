"""Sparse direct solve used for multigrid coarse levels and small systems."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class DirectLU:
    """LU factorization of a square sparse matrix with a solve method."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.n = A.shape[0]
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:  # singular factorization
            raise ValueError(f"matrix is singular: {exc}") from exc

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs length {b.shape[0]} != matrix size {self.n}")
        return self._lu.solve(b)

    def __call__(self, b):
        return self.solve(b)
