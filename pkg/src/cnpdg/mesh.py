"""Structured quad/hex meshes with boundary tags, grading, and uniform refinement.

Meshes are tensor products of per-axis node lines, so every element is an
axis-aligned box.  Local face numbering: face 2*d is the minus side along
axis d (outward normal -e_d), face 2*d+1 the plus side (+e_d).  Interior
faces are stored once, oriented so the face normal points from the minus
element to the plus element (always +e_d for axis-d faces).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class BoundaryTag(IntEnum):
    INLET = 1
    OUTLET = 2
    WALL = 3
    ELECTRODE_ANODE = 4
    ELECTRODE_CATHODE = 5
    EXTERIOR = 6


@dataclass(frozen=True)
class Mesh:
    """Conforming structured mesh of axis-aligned boxes.

    elements lists corner vertex indices in tensor order (x fastest);
    interior_faces rows are (elem-, local_face-, elem+, local_face+);
    boundary_faces rows are (elem, local_face, tag).
    """

    dim: int
    node_lines: tuple[np.ndarray, ...]
    vertices: np.ndarray
    elements: np.ndarray
    interior_faces: np.ndarray
    boundary_faces: np.ndarray
    element_size: np.ndarray
    element_origin: np.ndarray
    shape: tuple[int, ...]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def interior_faces_by_axis(self) -> list[np.ndarray]:
        """Row indices into interior_faces, grouped by face-normal axis."""
        axis = self.interior_faces[:, 1] // 2
        return [np.nonzero(axis == d)[0] for d in range(self.dim)]

    def boundary_groups(self) -> list[tuple[int, int, int, np.ndarray]]:
        """(axis, side, tag, row-indices) groups of boundary_faces."""
        lf = self.boundary_faces[:, 1]
        tags = self.boundary_faces[:, 2]
        groups = []
        for f in range(2 * self.dim):
            on_f = lf == f
            for tag in np.unique(tags[on_f]):
                rows = np.nonzero(on_f & (tags == tag))[0]
                groups.append((f // 2, f % 2, int(tag), rows))
        return groups

    def face_centroids(self, rows: np.ndarray, side: str = "minus") -> np.ndarray:
        """Centroids of the given interior-face rows."""
        col = 0 if side == "minus" else 2
        elems = self.interior_faces[rows, col]
        lf = self.interior_faces[rows, col + 1]
        return _face_centroid(self, elems, lf)

    def total_volume(self) -> float:
        return float(np.prod(self.element_size, axis=1).sum())


def _face_centroid(mesh: Mesh, elems: np.ndarray, lf: np.ndarray) -> np.ndarray:
    c = mesh.element_origin[elems] + 0.5 * mesh.element_size[elems]
    d = lf // 2
    side = lf % 2
    rows = np.arange(len(elems))
    c[rows, d] = mesh.element_origin[elems, d] + side * mesh.element_size[elems, d]
    return c


def _element_ids(shape: tuple[int, ...]) -> np.ndarray:
    """Lattice of element ids, id = i + nx*j + nx*ny*k (x fastest)."""
    n = np.prod(shape)
    return np.arange(n, dtype=np.int32).reshape(shape[::-1]).T if len(shape) > 1 else np.arange(n, dtype=np.int32)


def _build_from_lines(node_lines: tuple[np.ndarray, ...], tag_of_side) -> Mesh:
    """Assemble a Mesh from per-axis node coordinate lines.

    tag_of_side(axis, side, centroids) -> int tag array for the boundary
    faces on that box side, given their centroid coordinates.
    """
    dim = len(node_lines)
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    for line in node_lines:
        if len(line) < 2 or np.any(np.diff(line) <= 0):
            raise ValueError("each node line needs >= 2 strictly increasing coordinates")

    shape = tuple(len(line) - 1 for line in node_lines)
    nv = tuple(len(line) for line in node_lines)

    # vertices, x fastest
    if dim == 2:
        X, Y = np.meshgrid(node_lines[0], node_lines[1], indexing="ij")
        vertices = np.column_stack([X.T.ravel(), Y.T.ravel()])
    else:
        X, Y, Z = np.meshgrid(node_lines[0], node_lines[1], node_lines[2], indexing="ij")
        vertices = np.column_stack(
            [X.transpose(2, 1, 0).ravel(), Y.transpose(2, 1, 0).ravel(), Z.transpose(2, 1, 0).ravel()]
        )

    # element corner connectivity in tensor order
    idx = [np.arange(s, dtype=np.int32) for s in shape]
    if dim == 2:
        I, J = np.meshgrid(idx[0], idx[1], indexing="ij")
        i, j = I.T.ravel(), J.T.ravel()

        def vid(a, b):
            return (i + a) + nv[0] * (j + b)

        corners = [vid(a, b) for b in (0, 1) for a in (0, 1)]
        origin = np.column_stack([node_lines[0][i], node_lines[1][j]])
        size = np.column_stack([np.diff(node_lines[0])[i], np.diff(node_lines[1])[j]])
    else:
        I, J, K = np.meshgrid(idx[0], idx[1], idx[2], indexing="ij")
        i, j, k = I.transpose(2, 1, 0).ravel(), J.transpose(2, 1, 0).ravel(), K.transpose(2, 1, 0).ravel()

        def vid(a, b, c):
            return (i + a) + nv[0] * (j + b) + nv[0] * nv[1] * (k + c)

        corners = [vid(a, b, c) for c in (0, 1) for b in (0, 1) for a in (0, 1)]
        origin = np.column_stack([node_lines[0][i], node_lines[1][j], node_lines[2][k]])
        size = np.column_stack([np.diff(node_lines[0])[i], np.diff(node_lines[1])[j], np.diff(node_lines[2])[k]])
    elements = np.column_stack(corners).astype(np.int32)

    lattice = _element_ids(shape)

    # interior faces, grouped by axis, oriented minus -> plus along +e_d
    iface_rows = []
    for d in range(dim):
        sl_lo = [slice(None)] * dim
        sl_hi = [slice(None)] * dim
        sl_lo[d] = slice(0, shape[d] - 1)
        sl_hi[d] = slice(1, shape[d])
        left = lattice[tuple(sl_lo)].T.ravel() if dim == 2 else lattice[tuple(sl_lo)].transpose(2, 1, 0).ravel()
        right = lattice[tuple(sl_hi)].T.ravel() if dim == 2 else lattice[tuple(sl_hi)].transpose(2, 1, 0).ravel()
        rows = np.empty((len(left), 4), dtype=np.int32)
        rows[:, 0] = left
        rows[:, 1] = 2 * d + 1
        rows[:, 2] = right
        rows[:, 3] = 2 * d
        iface_rows.append(rows)
    interior_faces = (
        np.concatenate(iface_rows, axis=0) if iface_rows else np.empty((0, 4), dtype=np.int32)
    )

    # boundary faces with tags from the classifier callback
    bface_rows = []
    for d in range(dim):
        for side in (0, 1):
            sl = [slice(None)] * dim
            sl[d] = 0 if side == 0 else shape[d] - 1
            elems = lattice[tuple(sl)].ravel().astype(np.int32)
            lf = np.full(len(elems), 2 * d + side, dtype=np.int32)
            cent = origin[elems] + 0.5 * size[elems]
            cent[:, d] = origin[elems, d] + side * size[elems, d]
            tags = np.asarray(tag_of_side(d, side, cent), dtype=np.int32)
            if tags.shape != (len(elems),):
                tags = np.full(len(elems), int(tags), dtype=np.int32)
            rows = np.column_stack([elems, lf, tags]).astype(np.int32)
            bface_rows.append(rows)
    boundary_faces = np.concatenate(bface_rows, axis=0)

    return Mesh(
        dim=dim,
        node_lines=tuple(np.asarray(l, dtype=float) for l in node_lines),
        vertices=vertices,
        elements=elements,
        interior_faces=interior_faces,
        boundary_faces=boundary_faces,
        element_size=size,
        element_origin=origin,
        shape=shape,
    )


def build_unit_box_mesh(dim: int, n_per_axis) -> Mesh:
    """Uniform Cartesian mesh of the unit box; all boundary faces EXTERIOR."""
    if np.isscalar(n_per_axis):
        n_per_axis = (int(n_per_axis),) * dim
    n_per_axis = tuple(int(n) for n in n_per_axis)
    if len(n_per_axis) != dim:
        raise ValueError("n_per_axis length must equal dim")
    if any(n < 1 for n in n_per_axis):
        raise ValueError("element counts must be >= 1")
    lines = tuple(np.linspace(0.0, 1.0, n + 1) for n in n_per_axis)
    return _build_from_lines(lines, lambda d, s, c: BoundaryTag.EXTERIOR)


@dataclass(frozen=True)
class ChannelSpec:
    """Parallel-plate channel: inlet run, electrode pair, outlet run.

    Lengths share one unit (the mesh is built in whatever unit is given).
    nx elements are apportioned over the three x-segments so the electrode
    edges fall on element faces.
    """

    L_a: float
    L: float
    L_b: float
    h: float
    w: float
    nx: int
    ny: int
    nz: int
    grading_strength: float = 0.5

    def validate(self) -> None:
        for name in ("L_a", "L", "L_b", "h", "w"):
            if getattr(self, name) <= 0:
                raise ValueError(f"channel length {name} must be positive")
        if self.nx < 3 or self.ny < 1 or self.nz < 1:
            raise ValueError("need nx >= 3 (one element per x-segment) and ny, nz >= 1")
        if self.grading_strength < 0:
            raise ValueError("grading_strength must be >= 0")


def _graded_sizes(n: int, length: float, ratio: float, mode: str) -> np.ndarray:
    """Geometric element sizes summing to length.

    mode 'start'/'end'/'both' puts the smallest elements at that end
    (sizes grow by `ratio` per step away from it); 'uniform' ignores ratio.
    """
    if mode == "uniform" or ratio == 1.0:
        return np.full(n, length / n)
    i = np.arange(n)
    if mode == "start":
        exps = i
    elif mode == "end":
        exps = n - 1 - i
    elif mode == "both":
        exps = np.minimum(i, n - 1 - i)
    else:
        raise ValueError(f"unknown grading mode {mode!r}")
    sizes = ratio ** exps.astype(float)
    return sizes * (length / sizes.sum())


def _apportion(total: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder split of `total` items proportional to weights."""
    quota = total * weights / weights.sum()
    counts = np.floor(quota).astype(int)
    rem = quota - counts
    for idx in np.argsort(-rem)[: total - counts.sum()]:
        counts[idx] += 1
    return counts


def _sizes_to_line(origin: float, sizes: np.ndarray, end: float) -> np.ndarray:
    line = origin + np.concatenate([[0.0], np.cumsum(sizes)])
    line[-1] = end  # pin the endpoint against roundoff drift
    return line


def build_channel_mesh(spec: ChannelSpec) -> Mesh:
    """Graded hex mesh of [0, L_a+L+L_b] x [0, h] x [0, w].

    x- and y-spacings concentrate elements toward the electrode surfaces
    (geometric stretching with ratio 1 + grading_strength); z-spacing is
    uniform.  Tags: x=0 Inlet, x=end Outlet, electrode x-range at y=0
    Cathode and y=h Anode, everything else Wall.
    """
    spec.validate()
    r = 1.0 + spec.grading_strength

    weights = np.array([spec.L_a, spec.L * r, spec.L_b])
    n_in, n_el, n_out = _apportion(spec.nx, weights)
    if min(n_in, n_el, n_out) < 1:
        raise ValueError(
            f"nx={spec.nx} cannot resolve the electrode segment: "
            f"apportioned counts ({n_in}, {n_el}, {n_out})"
        )

    x0, x1 = spec.L_a, spec.L_a + spec.L
    x_end = x1 + spec.L_b
    x_line = np.concatenate(
        [
            _sizes_to_line(0.0, _graded_sizes(n_in, spec.L_a, r, "end"), x0),
            _sizes_to_line(x0, _graded_sizes(n_el, spec.L, r, "both"), x1)[1:],
            _sizes_to_line(x1, _graded_sizes(n_out, spec.L_b, r, "start"), x_end)[1:],
        ]
    )
    y_line = _sizes_to_line(0.0, _graded_sizes(spec.ny, spec.h, r, "both"), spec.h)
    z_line = np.linspace(0.0, spec.w, spec.nz + 1)

    def tag_of_side(d: int, side: int, centroids: np.ndarray) -> np.ndarray:
        n = len(centroids)
        if d == 0:
            return np.full(n, BoundaryTag.INLET if side == 0 else BoundaryTag.OUTLET)
        tags = np.full(n, int(BoundaryTag.WALL))
        if d == 1:
            on_elec = (centroids[:, 0] > x0) & (centroids[:, 0] < x1)
            tags[on_elec] = BoundaryTag.ELECTRODE_CATHODE if side == 0 else BoundaryTag.ELECTRODE_ANODE
        return tags

    return _build_from_lines((x_line, y_line, z_line), tag_of_side)


@dataclass(frozen=True)
class MeshHierarchy:
    """Nested refinement levels, coarse to fine.

    parent_maps[l][child_elem] = parent element on level l-1 (None at level 0).
    """

    levels: tuple[Mesh, ...]
    parent_maps: tuple

    @classmethod
    def from_coarse(cls, mesh: Mesh) -> "MeshHierarchy":
        return cls(levels=(mesh,), parent_maps=(None,))

    @property
    def finest(self) -> Mesh:
        return self.levels[-1]

    def children_by_octant(self, fine_level: int) -> np.ndarray:
        """children[parent, o] = fine element id, o in tensor order (x fastest)."""
        coarse = self.levels[fine_level - 1]
        fine = self.levels[fine_level]
        dim = coarse.dim
        cs, fs = coarse.shape, fine.shape
        out = np.empty((coarse.n_elements, 2**dim), dtype=np.int32)
        idx = [np.arange(s, dtype=np.int64) for s in cs]
        if dim == 2:
            I, J = np.meshgrid(idx[0], idx[1], indexing="ij")
            i, j = I.T.ravel(), J.T.ravel()
            for o in range(4):
                a, b = o % 2, o // 2
                out[:, o] = (2 * i + a) + fs[0] * (2 * j + b)
        else:
            I, J, K = np.meshgrid(idx[0], idx[1], idx[2], indexing="ij")
            i = I.transpose(2, 1, 0).ravel()
            j = J.transpose(2, 1, 0).ravel()
            k = K.transpose(2, 1, 0).ravel()
            for o in range(8):
                a, b, c = o % 2, (o // 2) % 2, o // 4
                out[:, o] = (2 * i + a) + fs[0] * (2 * j + b) + fs[0] * fs[1] * (2 * k + c)
        return out


def _refine_mesh(mesh: Mesh) -> tuple[Mesh, np.ndarray]:
    """Split every element at axis midpoints; children tile parents exactly."""
    fine_lines = []
    for line in mesh.node_lines:
        mid = 0.5 * (line[:-1] + line[1:])
        out = np.empty(2 * len(line) - 1)
        out[0::2] = line
        out[1::2] = mid
        fine_lines.append(out)

    # inherit each child boundary face's tag from the parent's same-side face
    coarse_tags = {}
    for e, lf, tag in mesh.boundary_faces:
        coarse_tags[(int(e), int(lf))] = int(tag)
    cs = mesh.shape
    dim = mesh.dim

    def parent_of(elem_ids: np.ndarray, fs: tuple[int, ...]) -> np.ndarray:
        if dim == 2:
            i, j = elem_ids % fs[0], elem_ids // fs[0]
            return (i // 2) + cs[0] * (j // 2)
        i = elem_ids % fs[0]
        j = (elem_ids // fs[0]) % fs[1]
        k = elem_ids // (fs[0] * fs[1])
        return (i // 2) + cs[0] * (j // 2) + cs[0] * cs[1] * (k // 2)

    fs = tuple(2 * s for s in cs)

    def tag_of_side(d: int, side: int, centroids: np.ndarray) -> np.ndarray:
        # locate each child face's parent element from its centroid; the
        # tangential coordinates sit strictly inside the parent cell
        idx = []
        for a in range(dim):
            if a == d:
                i = np.full(len(centroids), 0 if side == 0 else cs[a] - 1, dtype=np.int64)
            else:
                i = np.clip(np.searchsorted(mesh.node_lines[a], centroids[:, a]) - 1, 0, cs[a] - 1)
            idx.append(i)
        parents = idx[0] + cs[0] * idx[1]
        if dim == 3:
            parents = parents + cs[0] * cs[1] * idx[2]
        lf = 2 * d + side
        return np.array([coarse_tags[(int(p), lf)] for p in parents], dtype=np.int32)

    fine = _build_from_lines(tuple(fine_lines), tag_of_side)
    parent_map = parent_of(np.arange(fine.n_elements, dtype=np.int64), fs).astype(np.int32)
    return fine, parent_map


def refine_uniform(hierarchy: MeshHierarchy) -> MeshHierarchy:
    """Append one uniformly refined level (2^dim x elements, tags inherited)."""
    if not hierarchy.levels:
        raise ValueError("hierarchy is empty")
    fine, parent_map = _refine_mesh(hierarchy.finest)
    return MeshHierarchy(
        levels=hierarchy.levels + (fine,),
        parent_maps=hierarchy.parent_maps + (parent_map,),
    )


def refined_hierarchy(mesh: Mesh, n_refinements: int) -> MeshHierarchy:
    h = MeshHierarchy.from_coarse(mesh)
    for _ in range(n_refinements):
        h = refine_uniform(h)
    return h


def classify_boundary(mesh: Mesh, velocity) -> Mesh:
    """Retag EXTERIOR faces by the sign of u.n: in, out, or wall.

    velocity maps an (n, dim) point array to (n, dim) values.  A face
    whose corner/centroid samples carry both signs is rejected.
    """
    bf = mesh.boundary_faces.copy()
    exterior = np.nonzero(bf[:, 2] == BoundaryTag.EXTERIOR)[0]
    for row in exterior:
        e, lf = int(bf[row, 0]), int(bf[row, 1])
        d, side = lf // 2, lf % 2
        lo = mesh.element_origin[e].copy()
        sz = mesh.element_size[e]
        lo[d] += side * sz[d]
        tang = [a for a in range(mesh.dim) if a != d]
        pts = [lo.copy()]
        for corner in range(1, 2 ** len(tang)):
            p = lo.copy()
            for t, a in enumerate(tang):
                if corner >> t & 1:
                    p[a] += sz[a]
            pts.append(p)
        cent = lo.copy()
        for a in tang:
            cent[a] += 0.5 * sz[a]
        pts.append(cent)
        pts = np.asarray(pts)
        normal_sign = -1.0 if side == 0 else 1.0
        un = normal_sign * np.asarray(velocity(pts))[:, d]
        tol = 1e-14 * (1.0 + np.abs(un).max())
        if un.max() > tol and un.min() < -tol:
            raise ValueError(f"velocity changes sign across boundary face {row}")
        uc = un[-1]
        if abs(uc) <= tol:
            bf[row, 2] = BoundaryTag.WALL
        elif uc < 0:
            bf[row, 2] = BoundaryTag.INLET
        else:
            bf[row, 2] = BoundaryTag.OUTLET
    return Mesh(
        dim=mesh.dim,
        node_lines=mesh.node_lines,
        vertices=mesh.vertices,
        elements=mesh.elements,
        interior_faces=mesh.interior_faces,
        boundary_faces=bf,
        element_size=mesh.element_size,
        element_origin=mesh.element_origin,
        shape=mesh.shape,
    )
