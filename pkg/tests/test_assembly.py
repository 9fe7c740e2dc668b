"""Discrete operator assembly: hand-checked matrices, structural invariants,
finite-difference Jacobian consistency, and the species/charge compatibility
identity.

Key oracles:
  * a 2x1-element pure-advection system whose 8x8 matrix is the Kronecker
    product of a hand-computed 4x4 upwind matrix with a 1D mass matrix;
  * exact zero residuals for constant states under zero-flux and
    matched-inflow boundary conditions;
  * central finite differences against Jacobian-vector products;
  * penalty-independence of the residual at an exactly continuous state.
"""

import dataclasses

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from cnpdg.assembly import (
    Assembler,
    BlockMatrix,
    BlockResidual,
    DgParams,
    assemble_jacobian,
    assemble_residual,
    charge_residual_from_species,
    penalty,
    recover_eliminated,
)
from cnpdg.fespace import BlockState, FeSpace, interpolate, l2_error
from cnpdg.linalg import KrylovConfig, cg
from cnpdg.mesh import (
    BoundaryTag,
    build_unit_box_mesh,
    classify_boundary,
)
from cnpdg.physics import TransportProblem, mms_problem, reactor_problem

RNG = np.random.default_rng


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------


def zero_velocity(dim):
    def vel(pts):
        return np.zeros((len(np.atleast_2d(pts)), dim))

    return vel


def parabolic_x(pts):
    pts = np.atleast_2d(pts)
    u = np.zeros((len(pts), 2))
    u[:, 0] = 6.0 * pts[:, 1] * (1.0 - pts[:, 1])
    return u


def synth_problem(dim, *, z=1.0, d=0.5, a=0.3, kw=0.7, vel=None, dirichlet=None):
    """Two-field (potential + one concentration) problem with free knobs."""
    return TransportProblem(
        dim=dim,
        names=("phi", "c_1"),
        z_ret=np.array([float(z)]),
        d_ret=np.array([float(d)]),
        z_elim=-1.0,
        d_elim=1.0,
        recovery_weights=np.array([1.0]),
        a_hat=np.array([float(a)]),
        kappa_weights=np.array([float(kw)]),
        charge_w_ret=np.array([1.0]),
        charge_w_elim=-1.0,
        velocity=vel if vel is not None else zero_velocity(dim),
        inlet_value=np.ones(1),
        kinetics={},
        dirichlet=dirichlet,
    )


def wall_mesh(dim, n):
    return classify_boundary(build_unit_box_mesh(dim, n), zero_velocity(dim))


def smooth_random_state(space, n_fields, seed, scale=0.3, offset=1.0):
    """Nodal values from smooth random trigonometric fields (positive)."""
    rng = RNG(seed)
    pts = space.node_coordinates()
    fields = np.empty((n_fields, space.n_dofs))
    for f in range(n_fields):
        w = rng.normal(size=(3, space.mesh.dim))
        phase = rng.uniform(0, 2 * np.pi, size=3)
        vals = offset + scale * sum(
            np.cos(pts @ w[k] + phase[k]) for k in range(3)
        )
        fields[f] = vals.ravel()
    return fields


def newton_direct(asm, state, rtol=1e-11, max_iter=12):
    """Small-problem Newton loop with a sparse direct linear solve."""
    names = asm.problem.names
    r0 = None
    for _ in range(max_iter):
        res = asm.residual(state)
        nrm = res.norm()
        if r0 is None:
            r0 = nrm
        if nrm <= rtol * max(r0, 1.0):
            return state
        jac = asm.jacobian(state)
        nf = len(names)
        rows = [
            [jac.blocks.get((i, j)) for j in range(nf)] for i in range(nf)
        ]
        big = sps.bmat(rows, format="csc")
        delta = spla.spsolve(big, -res.flat())
        state = state + delta.reshape(state.shape)
    raise AssertionError("newton_direct did not converge")


# ----------------------------------------------------------------------------
# penalty parameter
# ----------------------------------------------------------------------------


class TestPenalty:
    def test_reference_values(self):
        assert penalty(0.5, 1) == pytest.approx(32.0, rel=1e-14)
        assert penalty(0.25, 1) == pytest.approx(64.0, rel=1e-14)

    def test_halving_h_doubles(self):
        h = 0.37
        assert penalty(h / 2, 3) == pytest.approx(2 * penalty(h, 3), rel=1e-14)

    def test_order_scaling(self):
        ratio = penalty(0.1, 2) / penalty(0.1, 1)
        assert ratio == pytest.approx(9.0 / 4.0, rel=1e-14)

    def test_eta_scales_linearly(self):
        assert penalty(0.2, 1, eta=8.0) == pytest.approx(
            2 * penalty(0.2, 1, eta=4.0), rel=1e-14
        )

    def test_nonpositive_h_rejected(self):
        with pytest.raises(ValueError):
            penalty(0.0, 1)
        with pytest.raises(ValueError):
            penalty(-1.0, 2)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            DgParams(eta=0.0)
        with pytest.raises(ValueError):
            DgParams(eta=-2.0)
        with pytest.raises(ValueError):
            DgParams(quadrature=0)
        DgParams(eta=4.0, quadrature=3)  # valid


# ----------------------------------------------------------------------------
# hand-computed advection oracle
# ----------------------------------------------------------------------------


class TestHandAdvection:
    """Pure advection with u=(1,0) on a 2x1-element bilinear mesh.

    With a y-independent velocity the assembled concentration block is the
    Kronecker-style product A1[I,J] * My[a,b], where A1 is the hand-computed
    4x4 1D upwind-DG advection matrix on two cells of size 1/2 and My is the
    1D mass matrix of the transverse direction.  The inlet contributes
    -(1/2) to the two upstream-face dofs of the residual at zero state.
    """

    A1 = np.array(
        [
            [0.5, 0.5, 0.0, 0.0],
            [-0.5, 0.5, 0.0, 0.0],
            [0.0, -1.0, 0.5, 0.5],
            [0.0, 0.0, -0.5, 0.5],
        ]
    )
    My = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])

    @staticmethod
    def _assembler():
        lines = (np.array([0.0, 0.5, 1.0]), np.array([0.0, 1.0]))
        mesh = build_unit_box_mesh(2, (2, 1))
        assert np.allclose(mesh.node_lines[0], lines[0])

        def unit_x(pts):
            pts = np.atleast_2d(pts)
            u = np.zeros((len(pts), 2))
            u[:, 0] = 1.0
            return u

        mesh = classify_boundary(mesh, unit_x)
        problem = synth_problem(2, z=0.0, d=0.0, a=0.0, kw=0.0, vel=unit_x)
        return Assembler(FeSpace.create(mesh, 1), problem)

    def test_matrix_matches_hand_computation(self):
        asm = self._assembler()
        jac = asm.jacobian(np.zeros((2, asm.n_dofs)))
        A = jac.block(1, 1).toarray()
        expected = np.zeros((8, 8))
        for eI in range(2):
            for eJ in range(2):
                for i in range(2):
                    for j in range(2):
                        for a in range(2):
                            for b in range(2):
                                expected[
                                    eI * 4 + 2 * a + i, eJ * 4 + 2 * b + j
                                ] = self.A1[2 * eI + i, 2 * eJ + j] * self.My[a, b]
        assert np.abs(A - expected).max() < 1e-13

    def test_inlet_load_vector(self):
        asm = self._assembler()
        res = asm.residual(np.zeros((2, asm.n_dofs)))
        b = res.blocks[1]
        expected = np.zeros(8)
        expected[0] = expected[2] = -0.5
        assert np.abs(b - expected).max() < 1e-13


# ----------------------------------------------------------------------------
# constant states and conservation
# ----------------------------------------------------------------------------


class TestConstantStates:
    def test_zero_flux_annihilates_constants(self):
        mesh = wall_mesh(2, 4)
        asm = Assembler(FeSpace.create(mesh, 1), synth_problem(2))
        fields = np.ones((2, asm.n_dofs))
        fields[0] = 0.7
        assert np.abs(asm.residual(fields).blocks).max() < 1e-12

    def test_matched_inflow_annihilates_constants(self):
        mesh = classify_boundary(build_unit_box_mesh(2, 4), parabolic_x)
        asm = Assembler(
            FeSpace.create(mesh, 1), synth_problem(2, vel=parabolic_x)
        )
        fields = np.ones((2, asm.n_dofs))  # concentration equals inflow value
        fields[0] = 0.7
        assert np.abs(asm.residual(fields).blocks).max() < 1e-12

    def test_interior_contributions_sum_to_zero(self):
        # Testing against constant test functions: with zero velocity, no
        # reactions, and zero-flux boundaries, every volume and face term
        # either carries a gradient or a jump of the constant-one function,
        # so each field's residual entries must sum to zero for ANY state.
        mesh = wall_mesh(2, 5)
        space = FeSpace.create(mesh, 1)
        asm = Assembler(space, synth_problem(2))
        state = smooth_random_state(space, 2, seed=7)
        sums = asm.residual(state).blocks.sum(axis=1)
        assert np.abs(sums).max() < 1e-11


# ----------------------------------------------------------------------------
# structural properties of the concentration diffusion block
# ----------------------------------------------------------------------------


class TestDiffusionBlock:
    def test_symmetric_without_advection_or_migration(self):
        mesh = wall_mesh(2, 4)
        asm = Assembler(FeSpace.create(mesh, 1), synth_problem(2, z=0.0))
        A = asm.jacobian(np.ones((2, asm.n_dofs))).block(1, 1)
        assert np.abs((A - A.T).toarray()).max() < 1e-10

    def test_penalty_controls_coercivity(self):
        def zf(pts):
            return np.zeros(len(np.atleast_2d(pts)))

        problem = synth_problem(2, z=0.0, dirichlet={"phi": zf, "c_1": zf})
        space = FeSpace.create(build_unit_box_mesh(2, 4), 1)

        def min_eig(eta):
            asm = Assembler(space, problem, DgParams(eta=eta))
            A = asm.jacobian(np.ones((2, space.n_dofs))).block(1, 1).toarray()
            assert np.abs(A - A.T).max() < 1e-10
            return np.linalg.eigvalsh(0.5 * (A + A.T))[0]

        assert min_eig(4.0) > 0.0
        assert min_eig(0.05) < 0.0

    def test_residual_independent_of_penalty_at_continuous_state(self):
        # Nodal values are taken from the shared mesh lines, so traces of the
        # bilinear interpolant agree bit-for-bit across interior faces and
        # every jump-penalty contribution vanishes identically.
        mesh = wall_mesh(2, 4)
        space = FeSpace.create(mesh, 1)

        def f(x, y):
            return 0.1 * x * y + 0.5 * x + 0.2 * y + 2.0

        def g(x, y):
            return 0.3 * x + 0.2 * y + 1.0

        lx, ly = mesh.node_lines
        nx = mesh.shape[0]
        conc = np.empty((mesh.n_elements, 4))
        pot = np.empty_like(conc)
        for e in range(mesh.n_elements):
            ex, ey = e % nx, e // nx
            for a in range(2):
                for i in range(2):
                    conc[e, 2 * a + i] = f(lx[ex + i], ly[ey + a])
                    pot[e, 2 * a + i] = g(lx[ex + i], ly[ey + a])
        state = np.stack([pot.ravel(), conc.ravel()])

        problem = synth_problem(2, vel=parabolic_x)
        r_small = Assembler(space, problem, DgParams(eta=4.0)).residual(state)
        r_large = Assembler(space, problem, DgParams(eta=32.0)).residual(state)
        assert np.abs(r_small.blocks - r_large.blocks).max() < 1e-12


# ----------------------------------------------------------------------------
# linearity and Jacobian consistency
# ----------------------------------------------------------------------------


class TestJacobian:
    def test_linear_problem_has_constant_jacobian(self):
        # No migration (z=0) and no state-dependent conductivity (kw=0):
        # the residual is affine, so the Jacobian cannot depend on the state
        # and the residual must equal its own linearization.
        mesh = classify_boundary(build_unit_box_mesh(2, 3), parabolic_x)
        space = FeSpace.create(mesh, 1)
        asm = Assembler(space, synth_problem(2, z=0.0, kw=0.0, vel=parabolic_x))
        s1 = smooth_random_state(space, 2, seed=1)
        s2 = smooth_random_state(space, 2, seed=2)
        j1, j2 = asm.jacobian(s1), asm.jacobian(s2)
        assert sorted(j1.blocks) == sorted(j2.blocks)
        for key, blk in j1.blocks.items():
            assert np.abs((blk - j2.blocks[key]).toarray()).max() < 1e-12

        r0 = asm.residual(np.zeros_like(s1)).flat()
        r1 = asm.residual(s1).flat()
        predicted = r0 + j1.operator()(s1.ravel())
        assert np.abs(r1 - predicted).max() < 1e-12

    @staticmethod
    def _fd_check(asm, state, seed, n_dirs=10, eps=1e-6, tol=1e-5):
        rng = RNG(seed)
        jac = asm.jacobian(state)
        op = jac.operator()
        for _ in range(n_dirs):
            delta = rng.standard_normal(state.shape)
            delta /= np.linalg.norm(delta.ravel())
            rp = asm.residual(state + eps * delta).flat()
            rm = asm.residual(state - eps * delta).flat()
            fd = (rp - rm) / (2 * eps)
            jd = op(delta.ravel())
            denom = max(np.linalg.norm(jd), 1e-30)
            assert np.linalg.norm(fd - jd) / denom < tol

    def test_fd_consistency_manufactured_3d(self):
        problem, _ = mms_problem(3)
        mesh = build_unit_box_mesh(3, 2)  # Dirichlet data on every face
        space = FeSpace.create(mesh, 1)
        asm = Assembler(space, problem)
        state = smooth_random_state(space, 2, seed=11)
        self._fd_check(asm, state, seed=12)

    def test_fd_consistency_reactor(self):
        problem, _, channel = reactor_problem()
        channel = dataclasses.replace(channel, nx=8, ny=3, nz=3)
        from cnpdg.mesh import build_channel_mesh

        mesh = build_channel_mesh(channel)
        space = FeSpace.create(mesh, 1)
        asm = Assembler(space, problem)
        state = smooth_random_state(space, 3, seed=21, scale=0.1)
        self._fd_check(asm, state, seed=22)

    def test_fd_matches_at_upwind_kink(self):
        # At zero velocity and flat potential the face-normal transport speed
        # is exactly zero; the derivative convention there (slope zero) must
        # agree with a central finite difference of the absolute value.
        mesh = wall_mesh(2, (2, 1))
        asm = Assembler(FeSpace.create(mesh, 1), synth_problem(2, z=1.0, d=1.0))
        state = np.zeros((2, asm.n_dofs))
        state[1] = np.array([2.0, 2.0, 2.0, 2.0, 5.0, 5.0, 5.0, 5.0])
        delta = np.zeros_like(state)
        delta[0] = np.array([0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0])
        eps = 1e-7
        rp = asm.residual(state + eps * delta).flat()
        rm = asm.residual(state - eps * delta).flat()
        fd = (rp - rm) / (2 * eps)
        jd = asm.jacobian(state).operator()(delta.ravel())
        assert np.abs(fd - jd).max() < 1e-6

    def test_upwind_uses_average_speed(self):
        # |<q>.n| (average first, then absolute value) is an even function of
        # the potential when the state is otherwise symmetric, so reflecting
        # the potential must leave the concentration residual's even part
        # unchanged: R(+t) + R(-t) = 2 R(0).
        mesh = wall_mesh(2, (2, 1))
        asm = Assembler(FeSpace.create(mesh, 1), synth_problem(2, z=1.0, d=1.0))
        tent = np.array([0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0])
        conc = np.array([2.0, 2.0, 2.0, 2.0, 5.0, 5.0, 5.0, 5.0])

        def resid(sign):
            st = np.stack([sign * tent, conc])
            return asm.residual(st).blocks[1]

        lhs = resid(+1.0) + resid(-1.0)
        rhs = 2.0 * resid(0.0)
        assert np.abs(lhs - rhs).max() < 1e-13


# ----------------------------------------------------------------------------
# block structure and sparsity
# ----------------------------------------------------------------------------


class TestBlockStructure:
    def test_no_concentration_cross_coupling(self):
        problem, _, channel = reactor_problem()
        channel = dataclasses.replace(channel, nx=6, ny=3, nz=3)
        from cnpdg.mesh import build_channel_mesh

        space = FeSpace.create(build_channel_mesh(channel), 1)
        asm = Assembler(space, problem)
        state = smooth_random_state(space, 3, seed=31, scale=0.1)
        jac = asm.jacobian(state)
        keys = set(jac.blocks)
        assert (1, 2) not in keys and (2, 1) not in keys
        assert {(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0), (2, 2)} <= keys

    def test_sparsity_restricted_to_face_neighbors(self):
        mesh = wall_mesh(2, 4)
        space = FeSpace.create(mesh, 1)
        asm = Assembler(space, synth_problem(2))
        state = smooth_random_state(space, 2, seed=41)
        A = asm.jacobian(state).block(1, 1).tocoo()
        allowed = {(e, e) for e in range(mesh.n_elements)}
        for row in mesh.interior_faces:
            em, ep = int(row[0]), int(row[2])
            allowed.add((em, ep))
            allowed.add((ep, em))
        ndpe = space.dofs_per_element
        pairs = set(zip(A.row // ndpe, A.col // ndpe))
        assert pairs <= allowed

    def test_matrix_market_roundtrip(self, tmp_path):
        mesh = wall_mesh(2, 3)
        space = FeSpace.create(mesh, 1)
        asm = Assembler(space, synth_problem(2))
        jac = asm.jacobian(smooth_random_state(space, 2, seed=51))
        jac.save(tmp_path)
        for (i, j), blk in jac.blocks.items():
            path = tmp_path / f"A_{jac.names[i]}_{jac.names[j]}.mtx"
            loaded = scipy.io.mmread(path).tocsr()
            assert np.abs((loaded - blk).toarray()).max() < 1e-14

    def test_residual_and_matrix_containers(self):
        names = ("phi", "c_1")
        blocks = np.arange(6.0).reshape(2, 3)
        res = BlockResidual(names, blocks)
        assert res.flat().shape == (6,)
        assert res.norm() == pytest.approx(np.linalg.norm(blocks.ravel()))

        eye = sps.identity(3, format="csr")
        mat = BlockMatrix(names, 3, {(0, 0): eye, (1, 1): 2.0 * eye})
        vec = np.arange(6.0)
        out = mat.operator()(vec)
        assert np.allclose(out[:3], vec[:3])
        assert np.allclose(out[3:], 2.0 * vec[3:])


# ----------------------------------------------------------------------------
# charge/species compatibility and recovery
# ----------------------------------------------------------------------------


class TestChargeCompatibility:
    @staticmethod
    def _check_identity(asm, space, n_fields, seed, tol=1e-10):
        state = smooth_random_state(space, n_fields, seed=seed, scale=0.2)
        direct = asm.residual(state).blocks[0]
        from_species = asm.charge_residual_from_species(state)
        scale = max(np.abs(direct).max(), 1e-30)
        assert np.abs(direct - from_species).max() / scale < tol

    def test_identity_manufactured_p1(self):
        problem, _ = mms_problem(2)
        mesh = build_unit_box_mesh(2, 3)  # Dirichlet data on every face
        space = FeSpace.create(mesh, 1)
        self._check_identity(Assembler(space, problem), space, 2, seed=61)

    def test_identity_manufactured_p2(self):
        problem, _ = mms_problem(2)
        mesh = build_unit_box_mesh(2, 2)  # Dirichlet data on every face
        space = FeSpace.create(mesh, 2)
        self._check_identity(Assembler(space, problem), space, 2, seed=62)

    def test_identity_reactor(self):
        problem, _, channel = reactor_problem()
        channel = dataclasses.replace(channel, nx=8, ny=3, nz=3)
        from cnpdg.mesh import build_channel_mesh

        space = FeSpace.create(build_channel_mesh(channel), 1)
        self._check_identity(Assembler(space, problem), space, 3, seed=63)

    def test_inflow_is_electroneutral(self):
        # Why the charge equation carries no inflow term: the charge-weighted
        # sum of the inflow concentrations (including the recovered species)
        # vanishes exactly.
        problem, _, _ = reactor_problem()
        total = float(
            problem.charge_w_ret @ problem.inlet_value
            + problem.charge_w_elim
            * float(problem.recovery_weights @ problem.inlet_value)
        )
        assert abs(total) < 1e-15


class TestRecovery:
    def test_manufactured_equal_concentrations(self):
        problem, _ = mms_problem(2)
        mesh = build_unit_box_mesh(2, 2)  # Dirichlet data on every face
        space = FeSpace.create(mesh, 1)
        state = smooth_random_state(space, 2, seed=71)
        full = recover_eliminated(state, problem)
        assert full.shape == (2, space.n_dofs)
        assert np.abs(full[1] - state[1]).max() < 1e-14

    def test_reactor_inlet_recovery(self):
        problem, scales, _ = reactor_problem()
        state = np.ones((3, 10))
        full = recover_eliminated(state, problem)
        assert full.shape == (3, 10)
        # at the (scaled) inflow composition the recovered field is exactly 1
        assert np.abs(full[2] - 1.0).max() < 1e-13
        # which redimensionalizes to 2000 mol/m^3 of the eliminated ion
        assert scales.c_ref * full[2, 0] == pytest.approx(2000.0, rel=1e-13)

    def test_recovered_state_is_electroneutral(self):
        # Dimensional oracle: each scaled concentration multiplies its own
        # inflow value (Cu 10, SO4 1010, H 2000 mol/m^3), and the recovered
        # triple must carry zero net charge at every dof for ANY state.
        problem, _, _ = reactor_problem()
        rng = RNG(81)
        state = rng.uniform(0.5, 2.0, size=(3, 40))
        full = recover_eliminated(state, problem)
        z_dim = np.array([2.0, -2.0, 1.0])
        cin_dim = np.array([10.0, 1010.0, 2000.0])
        charge = (z_dim * cin_dim) @ full
        assert np.abs(charge).max() < 1e-10 * np.abs(cin_dim * full.T).max()


# ----------------------------------------------------------------------------
# potential block is CG-solvable
# ----------------------------------------------------------------------------


class TestPotentialBlock:
    def test_cg_converges_on_potential_block(self):
        problem, _ = mms_problem(2)
        mesh = build_unit_box_mesh(2, 4)  # Dirichlet data on every face
        space = FeSpace.create(mesh, 1)
        asm = Assembler(space, problem)
        state = smooth_random_state(space, 2, seed=91, scale=0.2)
        A = asm.jacobian(state).block(0, 0)
        rng = RNG(92)
        b = rng.standard_normal(A.shape[0])
        x, info = cg(A, b, cfg=KrylovConfig(method="cg", rtol=1e-10, maxiter=2000))
        assert info.converged
        assert np.linalg.norm(A @ x - b) <= 1e-9 * np.linalg.norm(b)


# ----------------------------------------------------------------------------
# validation errors
# ----------------------------------------------------------------------------


class TestValidation:
    def test_wrong_state_shape_rejected(self):
        mesh = wall_mesh(2, 3)
        asm = Assembler(FeSpace.create(mesh, 1), synth_problem(2))
        with pytest.raises(ValueError):
            asm.residual(np.ones(asm.n_dofs))
        with pytest.raises(ValueError):
            asm.residual(np.ones((3, asm.n_dofs)))

    def test_dirichlet_data_required(self):
        mesh = build_unit_box_mesh(2, 3)  # exterior boundaries keep their tag
        space = FeSpace.create(mesh, 1)
        with pytest.raises(ValueError):
            Assembler(space, synth_problem(2))

    def test_dirichlet_data_must_cover_all_fields(self):
        def zf(pts):
            return np.zeros(len(np.atleast_2d(pts)))

        mesh = build_unit_box_mesh(2, 3)
        space = FeSpace.create(mesh, 1)
        with pytest.raises(ValueError):
            Assembler(space, synth_problem(2, dirichlet={"phi": zf}))

    def test_electrode_requires_kinetics(self):
        problem, _, channel = reactor_problem()
        channel = dataclasses.replace(channel, nx=6, ny=3, nz=3)
        from cnpdg.mesh import build_channel_mesh

        mesh = build_channel_mesh(channel)
        space = FeSpace.create(mesh, 1)
        stripped = dataclasses.replace(problem, kinetics={})
        with pytest.raises(ValueError):
            Assembler(space, stripped)

    def test_module_level_wrappers(self):
        problem, _ = mms_problem(2)
        mesh = build_unit_box_mesh(2, 2)  # Dirichlet data on every face
        space = FeSpace.create(mesh, 1)
        state = BlockState(
            fields=smooth_random_state(space, 2, seed=95),
            names=problem.names,
            space=space,
        )
        res = assemble_residual(state, problem)
        jac = assemble_jacobian(state, problem)
        qc = charge_residual_from_species(state, problem)
        assert res.blocks.shape == (2, space.n_dofs)
        assert jac.block(0, 0).shape == (space.n_dofs, space.n_dofs)
        assert qc.shape == (space.n_dofs,)


# ----------------------------------------------------------------------------
# manufactured-solution convergence (quick 2D check)
# ----------------------------------------------------------------------------


class TestQuickConvergence:
    def test_second_order_on_refinement(self):
        problem, exact = mms_problem(2)
        errors = {}
        for n in (4, 8, 16):
            mesh = build_unit_box_mesh(2, n)  # Dirichlet data on every face
            space = FeSpace.create(mesh, 1)
            asm = Assembler(space, problem)
            state = np.ones((2, space.n_dofs))
            state = newton_direct(asm, state, rtol=1e-11)
            errors[n] = (
                l2_error(space, state[0], exact["phi"]),
                l2_error(space, state[1], exact["c_1"]),
            )
        for f in range(2):
            r1 = np.log2(errors[4][f] / errors[8][f])
            r2 = np.log2(errors[8][f] / errors[16][f])
            assert 1.7 <= r1 <= 2.2
            assert 1.7 <= r2 <= 2.2
