"""Overlapping additive Schwarz preconditioner with ILU0 subdomain solves.

Subdomains come from recursive coordinate bisection of element centroids and
are grown by one layer of face-adjacent elements.  Each application solves the
extracted subdomain block with its ILU0 factorization and sums the extensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .csr import as_canonical_csr
from .ilu import Ilu0Factor, ilu0_apply, ilu0_factor


def rcb_partition(centroids, n_subdomains):
    """Recursive coordinate bisection into n_subdomains element index sets.

    Splits the widest coordinate direction at the median, assigning the larger
    half of a requested subdomain count to the half with more elements.
    """
    centroids = np.asarray(centroids, dtype=float)
    if n_subdomains < 1:
        raise ValueError("need at least one subdomain")
    if centroids.ndim != 2:
        raise ValueError("centroids must be (n_elements, dim)")

    def split(idx, parts):
        if parts == 1 or idx.size <= 1:
            return [idx]
        pts = centroids[idx]
        widths = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(widths))
        order = np.argsort(pts[:, axis], kind="stable")
        left_parts = parts // 2
        cut = (idx.size * left_parts) // parts
        cut = min(max(cut, 1), idx.size - 1)
        left = idx[order[:cut]]
        right = idx[order[cut:]]
        return split(left, left_parts) + split(right, parts - left_parts)

    out = split(np.arange(centroids.shape[0], dtype=np.int64), n_subdomains)
    return [np.sort(part) for part in out if part.size > 0]


def element_adjacency(mesh):
    """Symmetric face-neighbor lists, one array of neighbor ids per element."""
    n = mesh.n_elements
    pairs = mesh.interior_faces[:, [0, 2]].astype(np.int64)
    both = np.concatenate([pairs, pairs[:, ::-1]], axis=0)
    order = np.argsort(both[:, 0], kind="stable")
    both = both[order]
    counts = np.bincount(both[:, 0], minlength=n)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return [both[offsets[e] : offsets[e + 1], 1] for e in range(n)]


def grow_by_one_layer(subdomains, adjacency):
    """Add every element sharing a face with the subdomain to it."""
    grown = []
    for part in subdomains:
        extra = set()
        members = set(part.tolist())
        for e in part:
            for nb in adjacency[e]:
                if int(nb) not in members:
                    extra.add(int(nb))
        grown.append(np.sort(np.concatenate([part, np.fromiter(extra, dtype=np.int64, count=len(extra))])))
    return grown


def element_dofs(elements, dofs_per_element):
    """Flat dof indices for a sorted element id array (contiguous blocks)."""
    elements = np.asarray(elements, dtype=np.int64)
    return (elements[:, None] * dofs_per_element + np.arange(dofs_per_element)[None, :]).ravel()


@dataclass
class AsmPartition:
    """Overlapped subdomain dof sets and their ILU0 factors for one matrix."""

    n: int
    subdomain_dofs: list
    factors: list

    @property
    def n_subdomains(self):
        return len(self.subdomain_dofs)


def asm_dof_sets(mesh, dofs_per_element, n_subdomains, overlap=1):
    """Subdomain dof index sets: RCB on centroids plus overlap layers."""
    centroids = element_centroids(mesh)
    parts = rcb_partition(centroids, n_subdomains)
    if overlap > 0:
        adjacency = element_adjacency(mesh)
        for _ in range(overlap):
            parts = grow_by_one_layer(parts, adjacency)
    return [element_dofs(part, dofs_per_element) for part in parts]


def element_centroids(mesh):
    corners = mesh.vertices[mesh.elements]
    return corners.mean(axis=1)


def asm_setup(A, dof_sets):
    """Extract and factor each subdomain block of A (canonical CSR)."""
    A = as_canonical_csr(A)
    n = A.shape[0]
    factors = []
    kept = []
    for dofs in dof_sets:
        dofs = np.asarray(dofs, dtype=np.int64)
        if dofs.size == 0:
            continue
        block = A[dofs][:, dofs]
        factors.append(ilu0_factor(block))
        kept.append(dofs)
    if not kept:
        raise ValueError("no nonempty subdomains")
    return AsmPartition(n=n, subdomain_dofs=kept, factors=factors)


def asm_apply(part: AsmPartition, r):
    """Additive Schwarz application: sum of extended subdomain solves."""
    r = np.asarray(r, dtype=float)
    if r.shape[0] != part.n:
        raise ValueError(f"vector length {r.shape[0]} != operator size {part.n}")
    z = np.zeros_like(r)
    for dofs, fac in zip(part.subdomain_dofs, part.factors):
        z[dofs] += ilu0_apply(fac, r[dofs])
    return z


class AsmPreconditioner:
    """Callable r -> z wrapper so ASM plugs into the Krylov solvers."""

    def __init__(self, A, dof_sets):
        self.partition = asm_setup(A, dof_sets)

    def __call__(self, r):
        return asm_apply(self.partition, r)


def ilu0_preconditioner(A):
    """Single-domain ILU0 as a callable (ASM with one subdomain, no overlap)."""
    fac = ilu0_factor(A)
    return lambda r: ilu0_apply(fac, r)
