"""Mesh construction, face pairing, grading, refinement, boundary classification."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cnpdg.mesh import (
    BoundaryTag,
    ChannelSpec,
    MeshHierarchy,
    build_channel_mesh,
    build_unit_box_mesh,
    classify_boundary,
    refine_uniform,
    refined_hierarchy,
)


def face_corner_ids(mesh, elem, lf):
    """Vertex ids of one element face, straight from the corner ordering."""
    d, side = lf // 2, lf % 2
    corners = [c for c in range(2**mesh.dim) if (c >> d) & 1 == side]
    return tuple(sorted(int(mesh.elements[elem, c]) for c in corners))


def bruteforce_face_pairing(mesh):
    """Pair all element faces by sorted vertex ids; return interior pair set
    and the unmatched (boundary) face set."""
    seen = {}
    interior, boundary = set(), set()
    for e in range(mesh.n_elements):
        for lf in range(2 * mesh.dim):
            key = face_corner_ids(mesh, e, lf)
            if key in seen:
                interior.add(frozenset([seen.pop(key), (e, lf)]))
            else:
                seen[key] = (e, lf)
    boundary = set(seen.values())
    return interior, boundary


class TestFacePairing:
    def test_single_element_2d(self):
        m = build_unit_box_mesh(2, (1, 1))
        assert m.n_elements == 1
        assert len(m.interior_faces) == 0
        assert len(m.boundary_faces) == 4

    def test_box_2x3x4_counts(self):
        m = build_unit_box_mesh(3, (2, 3, 4))
        assert m.n_elements == 24
        interior, boundary = bruteforce_face_pairing(m)
        assert len(interior) == 46
        assert len(m.interior_faces) == 46
        assert len(m.boundary_faces) == len(boundary)

    def test_box_4x4x4(self):
        m = build_unit_box_mesh(3, 4)
        assert m.n_elements == 64

    @settings(deadline=None, max_examples=20)
    @given(
        dim=st.sampled_from([2, 3]),
        counts=st.lists(st.integers(1, 5), min_size=3, max_size=3),
    )
    def test_pairing_matches_bruteforce(self, dim, counts):
        m = build_unit_box_mesh(dim, tuple(counts[:dim]))
        interior, boundary = bruteforce_face_pairing(m)
        got = {
            frozenset([(int(r[0]), int(r[1])), (int(r[2]), int(r[3]))])
            for r in m.interior_faces
        }
        assert got == interior
        got_b = {(int(r[0]), int(r[1])) for r in m.boundary_faces}
        assert got_b == boundary

    @settings(deadline=None, max_examples=20)
    @given(
        dim=st.sampled_from([2, 3]),
        counts=st.lists(st.integers(1, 4), min_size=3, max_size=3),
    )
    def test_pairing_is_involution_with_shared_corners(self, dim, counts):
        m = build_unit_box_mesh(dim, tuple(counts[:dim]))
        for em, lfm, ep, lfp in m.interior_faces:
            assert face_corner_ids(m, em, lfm) == face_corner_ids(m, ep, lfp)
            # normal points from minus to plus along +axis
            d = lfm // 2
            assert lfm == 2 * d + 1 and lfp == 2 * d
            assert m.element_origin[ep, d] > m.element_origin[em, d]

    def test_boundary_tags_partition(self):
        m = build_unit_box_mesh(3, (3, 2, 2))
        keys = [(int(r[0]), int(r[1])) for r in m.boundary_faces]
        assert len(keys) == len(set(keys))
        _, boundary = bruteforce_face_pairing(m)
        assert set(keys) == boundary
        assert np.all(m.boundary_faces[:, 2] == BoundaryTag.EXTERIOR)

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            build_unit_box_mesh(2, (0, 3))
        with pytest.raises(ValueError):
            build_unit_box_mesh(3, (-1, 2, 2))


class TestGeometry:
    def test_corner_ordering_x_fastest(self):
        m = build_unit_box_mesh(2, (2, 2))
        np.testing.assert_allclose(
            m.vertices[m.elements[0]],
            [[0, 0], [0.5, 0], [0, 0.5], [0.5, 0.5]],
        )

    def test_element_volumes_positive(self):
        m = build_unit_box_mesh(3, (2, 3, 4))
        assert np.all(np.prod(m.element_size, axis=1) > 0)
        assert abs(m.total_volume() - 1.0) < 1e-12


REACTOR_SPEC = ChannelSpec(
    L_a=0.05, L=0.02, L_b=0.05, h=0.01, w=0.06, nx=64, ny=16, nz=8
)


class TestChannelMesh:
    def test_reactor_element_count(self):
        m = build_channel_mesh(REACTOR_SPEC)
        assert m.n_elements == 64 * 16 * 8

    def test_volume_analytic(self):
        m = build_channel_mesh(REACTOR_SPEC)
        vol = 0.12 * 0.01 * 0.06
        assert abs(m.total_volume() - vol) / vol < 1e-12

    def test_zero_grading_is_uniform(self):
        spec = ChannelSpec(
            L_a=0.05, L=0.02, L_b=0.05, h=0.01, w=0.06,
            nx=12, ny=4, nz=2, grading_strength=0.0,
        )
        m = build_channel_mesh(spec)
        for d in range(3):
            sizes = m.element_size[:, d]
            assert sizes.max() / sizes.min() < 1 + 1e-12

    def test_electrode_edges_on_element_faces(self):
        m = build_channel_mesh(REACTOR_SPEC)
        x = m.node_lines[0]
        assert np.min(np.abs(x - 0.05)) < 1e-14
        assert np.min(np.abs(x - 0.07)) < 1e-14

    def test_electrode_tags(self):
        m = build_channel_mesh(REACTOR_SPEC)
        tags = m.boundary_faces[:, 2]
        for t in (BoundaryTag.INLET, BoundaryTag.OUTLET, BoundaryTag.WALL,
                  BoundaryTag.ELECTRODE_ANODE, BoundaryTag.ELECTRODE_CATHODE):
            assert np.any(tags == t)
        assert not np.any(tags == BoundaryTag.EXTERIOR)
        # electrode faces sit strictly inside [L_a, L_a+L] at y=0 (cathode), y=h (anode)
        for row in m.boundary_faces[tags == BoundaryTag.ELECTRODE_CATHODE]:
            e, lf = int(row[0]), int(row[1])
            assert lf == 2  # y-minus side
            x0 = m.element_origin[e, 0]
            assert x0 >= 0.05 - 1e-14 and x0 + m.element_size[e, 0] <= 0.07 + 1e-14
            assert m.element_origin[e, 1] == 0.0
        for row in m.boundary_faces[tags == BoundaryTag.ELECTRODE_ANODE]:
            e, lf = int(row[0]), int(row[1])
            assert lf == 3  # y-plus side
            y1 = m.element_origin[e, 1] + m.element_size[e, 1]
            assert abs(y1 - 0.01) < 1e-14

    def test_grading_concentrates_near_walls(self):
        m = build_channel_mesh(REACTOR_SPEC)
        y = np.diff(m.node_lines[1])
        assert np.isclose(y[0], min(y), rtol=1e-12) and np.isclose(y[-1], min(y), rtol=1e-12)
        assert np.isclose(y[len(y) // 2], max(y), rtol=1e-12)

    def test_unresolvable_segments_rejected(self):
        with pytest.raises(ValueError):
            build_channel_mesh(
                ChannelSpec(L_a=1.0, L=1e-6, L_b=1.0, h=0.01, w=0.06, nx=4, ny=2, nz=1)
            )

    @settings(deadline=None, max_examples=15)
    @given(
        nx=st.integers(6, 40),
        ny=st.integers(1, 8),
        nz=st.integers(1, 4),
        strength=st.floats(0.0, 2.0),
    )
    def test_volume_property(self, nx, ny, nz, strength):
        spec = ChannelSpec(
            L_a=0.05, L=0.02, L_b=0.05, h=0.01, w=0.06,
            nx=nx, ny=ny, nz=nz, grading_strength=strength,
        )
        m = build_channel_mesh(spec)
        vol = 0.12 * 0.01 * 0.06
        assert abs(m.total_volume() - vol) / vol < 1e-12
        interior, boundary = bruteforce_face_pairing(m)
        assert len(m.interior_faces) == len(interior)
        assert len(m.boundary_faces) == len(boundary)


class TestRefinement:
    def test_64_to_512(self):
        h = refined_hierarchy(build_unit_box_mesh(3, 4), 1)
        assert h.levels[0].n_elements == 64
        assert h.levels[1].n_elements == 512

    def test_single_quad_to_quadrants(self):
        h = refined_hierarchy(build_unit_box_mesh(2, (1, 1)), 1)
        fine = h.levels[1]
        assert fine.n_elements == 4
        np.testing.assert_allclose(sorted(np.prod(fine.element_size, axis=1)), [0.25] * 4)
        np.testing.assert_allclose(
            sorted(map(tuple, fine.element_origin)),
            [(0, 0), (0, 0.5), (0.5, 0), (0.5, 0.5)],
        )

    def test_children_tile_parent(self):
        base = build_channel_mesh(
            ChannelSpec(L_a=0.05, L=0.02, L_b=0.05, h=0.01, w=0.06, nx=8, ny=2, nz=2)
        )
        h = refined_hierarchy(base, 1)
        fine, pm = h.levels[1], h.parent_maps[1]
        for parent in range(base.n_elements):
            kids = np.nonzero(pm == parent)[0]
            assert len(kids) == 8
            vol = np.prod(fine.element_size[kids], axis=1).sum()
            pvol = np.prod(base.element_size[parent])
            assert abs(vol - pvol) / pvol < 1e-12
            lo = fine.element_origin[kids].min(axis=0)
            hi = (fine.element_origin[kids] + fine.element_size[kids]).max(axis=0)
            np.testing.assert_allclose(lo, base.element_origin[parent], atol=1e-15)
            np.testing.assert_allclose(
                hi, base.element_origin[parent] + base.element_size[parent], rtol=1e-14
            )

    def test_tags_inherited(self):
        base = build_channel_mesh(
            ChannelSpec(L_a=0.05, L=0.02, L_b=0.05, h=0.01, w=0.06, nx=8, ny=2, nz=2)
        )
        h = refined_hierarchy(base, 1)
        fine, pm = h.levels[1], h.parent_maps[1]
        coarse_tags = {(int(e), int(lf)): int(t) for e, lf, t in base.boundary_faces}
        for e, lf, t in fine.boundary_faces:
            assert coarse_tags[(int(pm[e]), int(lf))] == int(t)
        for t in (BoundaryTag.ELECTRODE_ANODE, BoundaryTag.ELECTRODE_CATHODE):
            n_coarse = np.sum(base.boundary_faces[:, 2] == t)
            n_fine = np.sum(fine.boundary_faces[:, 2] == t)
            assert n_fine == 4 * n_coarse

    def test_children_by_octant(self):
        h = refined_hierarchy(build_unit_box_mesh(3, (2, 1, 1)), 1)
        kids = h.children_by_octant(1)
        assert kids.shape == (2, 8)
        fine, coarse = h.levels[1], h.levels[0]
        for parent in range(2):
            for o in range(8):
                a, b, c = o % 2, (o // 2) % 2, o // 4
                child = kids[parent, o]
                expect = coarse.element_origin[parent] + 0.5 * coarse.element_size[parent] * [a, b, c]
                np.testing.assert_allclose(fine.element_origin[child], expect, atol=1e-15)

    def test_parent_map_matches_containment(self):
        h = refined_hierarchy(build_unit_box_mesh(2, (3, 2)), 2)
        for lvl in (1, 2):
            coarse, fine = h.levels[lvl - 1], h.levels[lvl]
            pm = h.parent_maps[lvl]
            mid = fine.element_origin + 0.5 * fine.element_size
            for e in range(fine.n_elements):
                p = pm[e]
                assert np.all(mid[e] >= coarse.element_origin[p])
                assert np.all(mid[e] <= coarse.element_origin[p] + coarse.element_size[p])


class TestClassifyBoundary:
    def test_uniform_x_flow(self):
        m = build_unit_box_mesh(3, (2, 2, 2))
        m2 = classify_boundary(m, lambda p: np.column_stack([np.ones(len(p)), np.zeros(len(p)), np.zeros(len(p))]))
        tags = m2.boundary_faces[:, 2]
        n_in = np.sum(tags == BoundaryTag.INLET)
        n_out = np.sum(tags == BoundaryTag.OUTLET)
        n_wall = np.sum(tags == BoundaryTag.WALL)
        assert n_in == 4 and n_out == 4
        assert n_wall == len(tags) - 8

    def test_zero_velocity_all_wall(self):
        m = build_unit_box_mesh(2, (2, 2))
        m2 = classify_boundary(m, lambda p: np.zeros_like(p))
        assert np.all(m2.boundary_faces[:, 2] == BoundaryTag.WALL)

    def test_parabolic_channel_flow(self):
        m = build_unit_box_mesh(2, (4, 4))

        def vel(p):
            u = np.zeros_like(p)
            u[:, 0] = 6.0 * p[:, 1] * (1.0 - p[:, 1])
            return u

        m2 = classify_boundary(m, vel)
        for e, lf, t in m2.boundary_faces:
            c = m2.element_origin[int(e)].copy()
            d, side = int(lf) // 2, int(lf) % 2
            c[d] += side * m2.element_size[int(e), d]
            if d == 0 and c[0] == 0.0:
                assert t == BoundaryTag.INLET
            elif d == 0:
                assert t == BoundaryTag.OUTLET
            else:
                assert t == BoundaryTag.WALL

    def test_mixed_sign_face_rejected(self):
        m = build_unit_box_mesh(2, (1, 1))

        def vel(p):
            u = np.zeros_like(p)
            u[:, 0] = p[:, 1] - 0.5
            return u

        with pytest.raises(ValueError):
            classify_boundary(m, vel)

    def test_electrode_tags_survive(self):
        m = build_channel_mesh(REACTOR_SPEC)

        def vel(p):
            u = np.zeros_like(p)
            u[:, 0] = 6.0 * 0.03 / 0.01**2 * p[:, 1] * (0.01 - p[:, 1])
            return u

        m2 = classify_boundary(m, vel)
        for t in (BoundaryTag.ELECTRODE_ANODE, BoundaryTag.ELECTRODE_CATHODE):
            assert np.sum(m2.boundary_faces[:, 2] == t) == np.sum(m.boundary_faces[:, 2] == t)


class TestHierarchyBasics:
    def test_refine_empty_rejected(self):
        with pytest.raises(ValueError):
            refine_uniform(MeshHierarchy(levels=(), parent_maps=()))

    def test_levels_are_nested_counts(self):
        h = refined_hierarchy(build_unit_box_mesh(3, 4), 3)
        counts = [lvl.n_elements for lvl in h.levels]
        assert counts == [64, 512, 4096, 32768]
