"""Block preconditioning over named solution fields.

The outer operator is a dict of sparse blocks indexed by (row_field,
col_field).  The preconditioner is upper-block-triangular back-substitution:
fields are solved last-to-first, each with its own inner solver, using the
strictly-upper blocks to propagate already-computed corrections.  Inner
solvers are inexact in general, so wrap the result in a flexible outer method.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _offsets(sizes):
    return np.concatenate([[0], np.cumsum(np.asarray(sizes, dtype=np.int64))])


def split_vector(x, sizes):
    off = _offsets(sizes)
    return [x[off[i] : off[i + 1]] for i in range(len(sizes))]


class BlockOperator:
    """Matrix-free matvec over a dict {(i, j): sparse block} on flat vectors."""

    def __init__(self, blocks, sizes):
        self.sizes = list(int(s) for s in sizes)
        self.offsets = _offsets(self.sizes)
        self.n = int(self.offsets[-1])
        self.blocks = {}
        for (i, j), B in blocks.items():
            B = sp.csr_matrix(B)
            if B.shape != (self.sizes[i], self.sizes[j]):
                raise ValueError(
                    f"block ({i},{j}) has shape {B.shape}, expected "
                    f"({self.sizes[i]}, {self.sizes[j]})"
                )
            self.blocks[(i, j)] = B

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"vector length {x.shape[0]} != operator size {self.n}")
        parts = split_vector(x, self.sizes)
        y = np.zeros(self.n)
        for (i, j), B in self.blocks.items():
            y[self.offsets[i] : self.offsets[i + 1]] += B @ parts[j]
        return y

    def diagonal_block(self, i):
        return self.blocks[(i, i)]


class FieldsplitPreconditioner:
    """Upper-block-triangular back-substitution with per-field inner solvers.

    inner_solvers[i] is a callable r -> (z, n_iterations) approximating the
    action of the (i, i) block inverse.  Application order is the last field
    first, so each earlier field sees the corrections of all later ones.
    """

    def __init__(self, blocks, sizes, inner_solvers):
        self.op = blocks if isinstance(blocks, BlockOperator) else BlockOperator(blocks, sizes)
        self.sizes = self.op.sizes
        self.offsets = self.op.offsets
        m = len(self.sizes)
        if len(inner_solvers) != m:
            raise ValueError(f"need {m} inner solvers, got {len(inner_solvers)}")
        self.inner_solvers = list(inner_solvers)
        self.inner_counts = [[] for _ in range(m)]
        self.applications = 0

    def reset_stats(self):
        self.inner_counts = [[] for _ in self.sizes]
        self.applications = 0

    def max_inner_iterations(self, i):
        counts = self.inner_counts[i]
        return max(counts) if counts else 0

    def total_inner_iterations(self, i):
        return int(sum(self.inner_counts[i]))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        parts = split_vector(r, self.sizes)
        m = len(self.sizes)
        z = [None] * m
        for i in reversed(range(m)):
            rhs = parts[i].copy()
            for j in range(i + 1, m):
                B = self.op.blocks.get((i, j))
                if B is not None:
                    rhs -= B @ z[j]
            z[i], its = self.inner_solvers[i](rhs)
            self.inner_counts[i].append(int(its))
        self.applications += 1
        return np.concatenate(z)


def krylov_inner(A, M=None, cfg=None):
    """Wrap a Krylov solve as an inner solver returning (z, iterations)."""
    from .krylov import KrylovConfig, solve

    cfg = cfg or KrylovConfig(method="gmres", rtol=1e-1)

    def inner(r):
        z, res = solve(A, r, M, cfg)
        return z, res.iterations

    return inner


def direct_inner(A):
    """Exact inner solver via sparse LU, reported as one iteration."""
    from .direct import DirectLU

    lu = DirectLU(A)
    return lambda r: (lu.solve(r), 1)
