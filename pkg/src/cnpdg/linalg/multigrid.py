"""Geometric multigrid on nested element-refinement hierarchies.

Prolongation embeds each parent-element polynomial into its children exactly
(midpoint refinement keeps child maps affine), restriction is its transpose,
and state coarsening is elementwise L2 projection.  The V-cycle smooths with a
caller-supplied preconditioner applied as Richardson steps and solves the
coarsest level directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..fespace import gauss_rule, reference_basis, tabulate_basis
from .direct import DirectLU


def _octant_offsets(dim):
    """Child-position offsets in {0,1}^dim, index o = a + 2b + 4c."""
    out = np.zeros((2**dim, dim))
    for o in range(2**dim):
        for d in range(dim):
            out[o, d] = (o >> d) & 1
    return out


def _embedding_blocks(p, dim):
    """Per-octant matrices B_o with (B_o c_parent) = child nodal values."""
    basis = reference_basis(p, dim)
    nodes = basis.node_points  # (ndpe, dim) child reference nodes
    blocks = []
    for offset in _octant_offsets(dim):
        vals, _ = tabulate_basis(p, (nodes + offset[None, :]) / 2.0)
        blocks.append(np.ascontiguousarray(vals.T))  # (child node, parent dof)
    return np.stack(blocks)


def _reference_mass(p, dim):
    basis = reference_basis(p, dim)
    V, w = basis.volume_values, basis.volume_rule.weights
    return (V * w[None, :]) @ V.T


def dg_prolongation(p, dim, children):
    """CSR matrix taking coarse-level dofs to the exact fine-level embedding.

    children has shape (n_parents, 2**dim), listing the fine element id of
    each parent's child by octant.  Fine size is inferred as the child count.
    """
    children = np.asarray(children, dtype=np.int64)
    n_parents, n_oct = children.shape
    if n_oct != 2**dim:
        raise ValueError("children must have 2**dim columns")
    B = _embedding_blocks(p, dim)
    ndpe = B.shape[1]
    parents = np.arange(n_parents, dtype=np.int64)
    i_local = np.arange(ndpe, dtype=np.int64)
    rows = np.empty((n_oct, n_parents, ndpe, ndpe), dtype=np.int64)
    cols = np.empty_like(rows)
    data = np.empty(rows.shape)
    for o in range(n_oct):
        rows[o] = (children[:, o, None, None] * ndpe + i_local[None, :, None])
        cols[o] = (parents[:, None, None] * ndpe + i_local[None, None, :])
        data[o] = B[o][None, :, :]
    n_fine = n_parents * n_oct * ndpe
    n_coarse = n_parents * ndpe
    P = sp.coo_matrix(
        (data.ravel(), (rows.ravel(), cols.ravel())), shape=(n_fine, n_coarse)
    ).tocsr()
    P.eliminate_zeros()
    P.sort_indices()
    return P


def project_to_coarse(p, dim, children, fine_coefs):
    """Elementwise L2 projection of a fine DG field onto the parent elements.

    Exact for nested midpoint refinement, where every child occupies exactly
    2**-dim of its parent and the affine maps compose.
    """
    children = np.asarray(children, dtype=np.int64)
    fine_coefs = np.asarray(fine_coefs, dtype=float)
    n_parents, n_oct = children.shape
    if n_oct != 2**dim:
        raise ValueError("children must have 2**dim columns")
    B = _embedding_blocks(p, dim)
    ndpe = B.shape[1]
    mass = _reference_mass(p, dim)
    # c_parent = 2**-dim * M^-1 sum_o B_o^T M c_child(o)
    T = np.linalg.solve(mass, np.transpose(B, (0, 2, 1)) @ mass) / n_oct
    child_vals = fine_coefs.reshape(-1, ndpe)[children]  # (parents, oct, ndpe)
    coarse = np.einsum("oij,poj->pi", T, child_vals)
    return coarse.ravel()


@dataclass
class GmgLevel:
    """One level: its operator, smoother, and prolongation from one coarser."""

    A: sp.csr_matrix
    smoother: object = None  # callable r -> z; None on the coarsest level
    P: sp.csr_matrix | None = None  # None on the coarsest level


@dataclass
class GmgHierarchy:
    levels: list  # coarse -> fine
    coarse_lu: DirectLU
    n_pre: int = 1
    n_post: int = 1

    @classmethod
    def build(cls, matrices, prolongations, smoother_factory, n_pre=1, n_post=1):
        """matrices coarse->fine; prolongations[i] maps level i to i+1."""
        if len(prolongations) != len(matrices) - 1:
            raise ValueError("need one prolongation per level transition")
        levels = [GmgLevel(A=sp.csr_matrix(matrices[0]))]
        for i in range(1, len(matrices)):
            A = sp.csr_matrix(matrices[i])
            levels.append(
                GmgLevel(A=A, smoother=smoother_factory(A, i), P=prolongations[i - 1])
            )
        return cls(levels=levels, coarse_lu=DirectLU(matrices[0]), n_pre=n_pre, n_post=n_post)


def gmg_vcycle(hier: GmgHierarchy, b, level=None, x=None):
    """One V(n_pre, n_post) cycle approximating A^-1 b on the given level."""
    if level is None:
        level = len(hier.levels) - 1
    if level == 0:
        return hier.coarse_lu.solve(b)
    lvl = hier.levels[level]
    x = np.zeros_like(b) if x is None else x
    for _ in range(hier.n_pre):
        x = x + lvl.smoother(b - lvl.A @ x)
    r = b - lvl.A @ x
    xc = gmg_vcycle(hier, lvl.P.T @ r, level - 1)
    x = x + lvl.P @ xc
    for _ in range(hier.n_post):
        x = x + lvl.smoother(b - lvl.A @ x)
    return x


class GmgPreconditioner:
    """Callable r -> z applying one V-cycle, for use inside Krylov solvers."""

    def __init__(self, hier: GmgHierarchy):
        self.hier = hier

    def __call__(self, r):
        return gmg_vcycle(self.hier, r)
