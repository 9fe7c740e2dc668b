"""Tensor-product discontinuous Lagrange spaces on structured box meshes.

Reference cell is [0,1]^dim.  Basis index is tensor order with the x index
fastest: i = a + (p+1)*b + (p+1)^2*c.  Nodes are equispaced closed Lagrange
points per axis.  All elements are axis-aligned boxes, so physical gradients
are reference gradients scaled by 1/size per axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import Mesh


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray  # (nq, dim), reference coordinates in [0,1]^dim
    weights: np.ndarray  # (nq,)


def gauss_rule(q: int, dim: int) -> QuadRule:
    """Tensor-product Gauss-Legendre rule on [0,1]^dim (x index fastest)."""
    if q < 1:
        raise ValueError("need at least one quadrature point per axis")
    t, w = np.polynomial.legendre.leggauss(q)
    x1, w1 = 0.5 * (t + 1.0), 0.5 * w
    if dim == 1:
        return QuadRule(points=x1[:, None], weights=w1)
    grids = np.meshgrid(*([x1] * dim), indexing="ij")
    pts = np.column_stack([g.transpose(*range(dim - 1, -1, -1)).ravel() for g in grids])
    wgrids = np.meshgrid(*([w1] * dim), indexing="ij")
    wts = np.ones_like(wgrids[0])
    for g in wgrids:
        wts = wts * g
    wts = wts.transpose(*range(dim - 1, -1, -1)).ravel()
    return QuadRule(points=pts, weights=wts)


def lagrange_nodes(p: int) -> np.ndarray:
    """Equispaced closed nodes on [0,1]."""
    return np.linspace(0.0, 1.0, p + 1)


def _lagrange_1d(nodes: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the 1D Lagrange basis at points x.

    Returns (vals, ders) with shape (n_nodes, len(x)).
    """
    n = len(nodes)
    x = np.asarray(x, dtype=float)
    vals = np.ones((n, len(x)))
    ders = np.zeros((n, len(x)))
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            vals[i] *= (x - nodes[j]) / (nodes[i] - nodes[j])
        for k in range(n):
            if k == i:
                continue
            term = np.full(len(x), 1.0 / (nodes[i] - nodes[k]))
            for j in range(n):
                if j == i or j == k:
                    continue
                term *= (x - nodes[j]) / (nodes[i] - nodes[j])
            ders[i] += term
    return vals, ders


def tabulate_basis(p: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Basis values (n_basis, nq) and reference gradients (n_basis, nq, dim)."""
    if p < 1:
        raise ValueError("polynomial order must be >= 1 (the scheme needs gradients)")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dim = points.shape[1]
    nodes = lagrange_nodes(p)
    v1, d1 = zip(*(_lagrange_1d(nodes, points[:, d]) for d in range(dim)))
    n1 = p + 1
    n_basis = n1**dim
    nq = points.shape[0]
    vals = np.ones((n_basis, nq))
    grads = np.zeros((n_basis, nq, dim))
    for i in range(n_basis):
        idx = [(i // n1**d) % n1 for d in range(dim)]
        for d in range(dim):
            vals[i] *= v1[d][idx[d]]
        for g in range(dim):
            term = np.ones(nq)
            for d in range(dim):
                term *= d1[d][idx[d]] if d == g else v1[d][idx[d]]
            grads[i, :, g] = term
    return vals, grads


def _face_points(dim: int, face: int, pts_1d: np.ndarray) -> np.ndarray:
    """Reference-cell coordinates of face quadrature points.

    Tangential axes are enumerated in increasing order with the first one
    fastest, identically on both sides of a face, so paired interior-face
    tabulations line up point by point.
    """
    d, side = face // 2, face % 2
    tang = [a for a in range(dim) if a != d]
    q = len(pts_1d)
    if len(tang) == 0:
        out = np.empty((1, dim))
    elif len(tang) == 1:
        out = np.empty((q, dim))
        out[:, tang[0]] = pts_1d
    else:
        A, B = np.meshgrid(pts_1d, pts_1d, indexing="ij")
        out = np.empty((q * q, dim))
        out[:, tang[0]] = A.T.ravel()
        out[:, tang[1]] = B.T.ravel()
    out[:, d] = float(side)
    return out


@dataclass(frozen=True)
class ReferenceBasis:
    """Tabulated basis data shared by all elements of an FeSpace."""

    p: int
    dim: int
    nodes_1d: np.ndarray
    volume_rule: QuadRule
    volume_values: np.ndarray  # (n_basis, nq)
    volume_gradients: np.ndarray  # (n_basis, nq, dim)
    face_weights: np.ndarray  # (nq_face,)
    face_points: tuple[np.ndarray, ...]  # per local face, (nq_face, dim) reference
    face_values: tuple[np.ndarray, ...]  # per local face, (n_basis, nq_face)
    face_gradients: tuple[np.ndarray, ...]  # per local face, (n_basis, nq_face, dim)
    node_points: np.ndarray  # (n_basis, dim) reference nodal lattice
    node_values_identity: bool = True

    @property
    def n_basis(self) -> int:
        return (self.p + 1) ** self.dim


@lru_cache(maxsize=32)
def reference_basis(p: int, dim: int, q: int | None = None) -> ReferenceBasis:
    """Build (and cache) all reference tabulations for order p, dim, q points."""
    if q is None:
        q = p + 2
    vol = gauss_rule(q, dim)
    vv, vg = tabulate_basis(p, vol.points)
    t1, w1 = np.polynomial.legendre.leggauss(q)
    x1, w1 = 0.5 * (t1 + 1.0), 0.5 * w1
    if dim == 1:
        fw = np.ones(1)
    elif dim == 2:
        fw = w1.copy()
    else:
        fw = np.outer(w1, w1).T.ravel()  # first tangential axis fastest
    fpts, fvals, fgrads = [], [], []
    for f in range(2 * dim):
        pts = _face_points(dim, f, x1)
        v, g = tabulate_basis(p, pts)
        fpts.append(pts)
        fvals.append(v)
        fgrads.append(g)
    nodes = lagrange_nodes(p)
    lat = _node_lattice(nodes, dim)
    return ReferenceBasis(
        p=p,
        dim=dim,
        nodes_1d=nodes,
        volume_rule=vol,
        volume_values=vv,
        volume_gradients=vg,
        face_weights=fw,
        face_points=tuple(fpts),
        face_values=tuple(fvals),
        face_gradients=tuple(fgrads),
        node_points=lat,
    )


def _node_lattice(nodes: np.ndarray, dim: int) -> np.ndarray:
    n1 = len(nodes)
    if dim == 1:
        return nodes[:, None]
    grids = np.meshgrid(*([nodes] * dim), indexing="ij")
    return np.column_stack([g.transpose(*range(dim - 1, -1, -1)).ravel() for g in grids])


@dataclass(frozen=True)
class FeSpace:
    """Discontinuous Q^p space: element-contiguous dof blocks."""

    mesh: Mesh
    p: int
    basis: ReferenceBasis

    @classmethod
    def create(cls, mesh: Mesh, p: int, q: int | None = None) -> "FeSpace":
        return cls(mesh=mesh, p=p, basis=reference_basis(p, mesh.dim, q))

    @property
    def dofs_per_element(self) -> int:
        return self.basis.n_basis

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_elements * self.dofs_per_element

    def element_dof_offset(self, e: int) -> int:
        return e * self.dofs_per_element

    def node_coordinates(self) -> np.ndarray:
        """(n_elements, dofs_per_element, dim) physical nodal points."""
        lat = self.basis.node_points
        return (
            self.mesh.element_origin[:, None, :]
            + self.mesh.element_size[:, None, :] * lat[None, :, :]
        )

    def quad_coordinates(self) -> np.ndarray:
        """(n_elements, nq, dim) physical volume quadrature points."""
        pts = self.basis.volume_rule.points
        return (
            self.mesh.element_origin[:, None, :]
            + self.mesh.element_size[:, None, :] * pts[None, :, :]
        )


def interpolate(space: FeSpace, f) -> np.ndarray:
    """Nodal interpolant; f maps (n, dim) points to (n,) values (or a constant)."""
    pts = space.node_coordinates().reshape(-1, space.mesh.dim)
    vals = f(pts) if callable(f) else f
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (len(pts),))
    return vals.copy()


def evaluate_at_quad(space: FeSpace, coeffs: np.ndarray) -> np.ndarray:
    """(n_elements, nq) field values at volume quadrature points."""
    c = coeffs.reshape(space.mesh.n_elements, space.dofs_per_element)
    return c @ space.basis.volume_values


def l2_error(space: FeSpace, coeffs: np.ndarray, exact) -> float:
    """sqrt(sum_K int_K (u_h - u_ex)^2); exact maps points to values."""
    uh = evaluate_at_quad(space, coeffs)
    pts = space.quad_coordinates()
    ue = np.asarray(exact(pts.reshape(-1, space.mesh.dim))).reshape(uh.shape) if callable(exact) else exact
    detj = np.prod(space.mesh.element_size, axis=1)
    w = space.basis.volume_rule.weights
    return float(np.sqrt(np.einsum("eq,q,e->", (uh - ue) ** 2, w, detj)))


def l2_norm(space: FeSpace, coeffs: np.ndarray) -> float:
    return l2_error(space, coeffs, lambda p: np.zeros(len(p)))


@dataclass
class BlockState:
    """Per-field coefficient vectors on one shared FeSpace; potential first."""

    space: FeSpace
    fields: np.ndarray  # (n_fields, n_dofs)
    names: tuple[str, ...]

    def __post_init__(self):
        self.fields = np.atleast_2d(np.asarray(self.fields, dtype=float))
        if self.fields.shape != (len(self.names), self.space.n_dofs):
            raise ValueError(
                f"fields shape {self.fields.shape} != "
                f"({len(self.names)}, {self.space.n_dofs})"
            )

    @property
    def n_fields(self) -> int:
        return len(self.names)

    def copy(self) -> "BlockState":
        return BlockState(space=self.space, fields=self.fields.copy(), names=self.names)

    def flat(self) -> np.ndarray:
        return self.fields.ravel()

    @classmethod
    def from_flat(cls, space: FeSpace, vec: np.ndarray, names) -> "BlockState":
        names = tuple(names)
        return cls(space=space, fields=vec.reshape(len(names), space.n_dofs).copy(), names=names)
