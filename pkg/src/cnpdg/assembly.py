"""SIPG/upwind assembly for the coupled potential-concentration DG system.

Every equation is written as F(state) = 0; ``Assembler`` produces the block
residual and the exact Gateaux-derivative Jacobian on the element-contiguous
dof layout of the space.  Fields are ordered (potential, retained
concentrations).  All quantities are nondimensional.

Interior faces are oriented from the "minus" to the "plus" element along a
coordinate axis; scalar jumps are (minus - plus) and the face normal is the
positive axis direction.  Boundary faces use the outward normal.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .fespace import FeSpace, reference_basis
from .linalg import BlockOperator, save_matrix_market
from .mesh import BoundaryTag
from .physics import TransportProblem

__all__ = [
    "Assembler",
    "BlockMatrix",
    "BlockResidual",
    "DgParams",
    "assemble_jacobian",
    "assemble_residual",
    "charge_residual_from_species",
    "penalty",
    "recover_eliminated",
]


@dataclass(frozen=True)
class DgParams:
    """Discretization knobs: interior-penalty scaling and quadrature order.

    ``quadrature`` is the number of 1D Gauss points per axis; ``None`` uses
    the space default (p + 2).
    """

    eta: float = 4.0
    quadrature: int | None = None

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise ValueError("penalty constant eta must be positive")
        if self.quadrature is not None and self.quadrature < 1:
            raise ValueError("quadrature order must be at least 1")


def penalty(h_face, p: int, eta: float = 4.0):
    """Interior-penalty coefficient eta * (p + 1)^2 / h_face."""
    h = np.asarray(h_face, dtype=float)
    if np.any(h <= 0.0):
        raise ValueError("face extent must be positive")
    out = eta * (p + 1) ** 2 / h
    return float(out) if np.isscalar(h_face) else out


@dataclass
class BlockResidual:
    """Per-field residual vectors, ordered (potential, concentrations)."""

    names: tuple[str, ...]
    blocks: np.ndarray  # (n_fields, n_dofs)

    def flat(self) -> np.ndarray:
        return self.blocks.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.blocks))


@dataclass
class BlockMatrix:
    """Sparse field-by-field Jacobian blocks; absent entries are zero."""

    names: tuple[str, ...]
    n_dofs: int
    blocks: dict[tuple[int, int], sp.csr_matrix]

    @property
    def n_fields(self) -> int:
        return len(self.names)

    def block(self, i: int, j: int) -> sp.csr_matrix | None:
        return self.blocks.get((i, j))

    def operator(self) -> BlockOperator:
        return BlockOperator(self.blocks, sizes=[self.n_dofs] * self.n_fields)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.operator()(x)

    def save(self, directory) -> list[Path]:
        """Dump each block as Matrix Market ``A_<row>_<col>.mtx``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for (i, j), a in sorted(self.blocks.items()):
            path = directory / f"A_{self.names[i]}_{self.names[j]}.mtx"
            save_matrix_market(path, a)
            paths.append(path)
        return paths


@dataclass
class _InteriorGroup:
    """Interior faces sharing a normal axis, with cached traces/tabulations."""

    axis: int
    em: np.ndarray
    ep: np.ndarray
    sm: np.ndarray  # (nf,) normal extent, minus side
    sp: np.ndarray
    delta: np.ndarray  # (nf,) penalty coefficient
    w: np.ndarray  # (nf, nqf) quadrature weight * face area
    u_n: np.ndarray  # (nf, nqf) normal velocity
    vm: np.ndarray  # (ndpe, nqf) trace values, minus side
    vp: np.ndarray
    gm: np.ndarray  # (ndpe, nqf) reference normal-derivative, minus side
    gp: np.ndarray


@dataclass
class _BoundaryGroup:
    """Boundary faces sharing (tag, local face)."""

    tag: int
    axis: int
    sign: float  # outward-normal sign along the axis
    elems: np.ndarray
    s: np.ndarray  # (nf,) normal extent
    delta: np.ndarray
    w: np.ndarray  # (nf, nqf)
    u_n: np.ndarray  # (nf, nqf) outward normal velocity
    vb: np.ndarray  # (ndpe, nqf)
    gb: np.ndarray  # (ndpe, nqf) reference normal-derivative
    points: np.ndarray  # (nf, nqf, dim)
    data: dict | None = None  # field name -> (nf, nqf) boundary values
    j0: np.ndarray | None = None  # electrode exchange-current values
    kinetics: object = None


def _tangential_area(size: np.ndarray, elems: np.ndarray, axis: int) -> np.ndarray:
    keep = [a for a in range(size.shape[1]) if a != axis]
    if not keep:
        return np.ones(len(elems))
    return np.prod(size[np.ix_(elems, keep)], axis=1)


class Assembler:
    """Residual/Jacobian assembly bound to one space and one problem."""

    def __init__(
        self,
        space: FeSpace,
        problem: TransportProblem,
        params: DgParams | None = None,
    ) -> None:
        self.space = space
        self.problem = problem
        self.params = params or DgParams()
        mesh = space.mesh
        if mesh.dim != problem.dim:
            raise ValueError(
                f"mesh dimension {mesh.dim} does not match problem dimension "
                f"{problem.dim}"
            )
        if space.p < 1:
            raise ValueError("assembly requires polynomial degree p >= 1")
        n_species = len(problem.z_ret)
        if problem.reactions is not None and len(problem.reactions) != n_species:
            raise ValueError(
                f"expected {n_species} reaction callables, got "
                f"{len(problem.reactions)}"
            )
        basis = space.basis
        if self.params.quadrature is not None:
            basis = reference_basis(space.p, mesh.dim, self.params.quadrature)
        self.basis = basis
        self.n_fields = problem.n_fields
        self.names = problem.names
        self.ndpe = basis.n_basis
        self.n_el = mesh.n_elements
        self.n_dofs = self.n_el * self.ndpe

        # volume tabulations and geometry
        self.V = basis.volume_values  # (ndpe, nq)
        self.G = basis.volume_gradients  # (ndpe, nq, dim)
        size = mesh.element_size
        detj = np.prod(size, axis=1)
        self.wdet = detj[:, None] * basis.volume_rule.weights[None, :]
        self.inv_s = 1.0 / size
        self.inv_s2 = self.inv_s**2
        pts = (
            mesh.element_origin[:, None, :]
            + size[:, None, :] * basis.volume_rule.points[None, :, :]
        )
        flat = pts.reshape(-1, mesh.dim)
        nq = len(basis.volume_rule.weights)
        self.u_vol = np.asarray(problem.velocity(flat), dtype=float).reshape(
            self.n_el, nq, mesh.dim
        )
        # state-independent volume data, premultiplied by the quadrature weight
        self.react_w = None
        if problem.reactions is not None:
            self.react_w = [
                np.asarray(r(flat), dtype=float).reshape(self.n_el, nq) * self.wdet
                for r in problem.reactions
            ]
        self.forcing_w = None
        if problem.charge_forcing is not None:
            self.forcing_w = (
                np.asarray(problem.charge_forcing(flat), dtype=float).reshape(
                    self.n_el, nq
                )
                * self.wdet
            )
        self.react_elim_w = None
        if problem.reaction_elim is not None:
            self.react_elim_w = (
                np.asarray(problem.reaction_elim(flat), dtype=float).reshape(
                    self.n_el, nq
                )
                * self.wdet
            )

        self._build_face_groups()
        # COO index templates for element-local blocks
        ar = np.arange(self.ndpe, dtype=np.int32)
        base = (np.arange(self.n_el, dtype=np.int32) * self.ndpe)[:, None, None]
        self._vol_rows = np.ascontiguousarray(
            np.broadcast_to(base + ar[None, :, None], (self.n_el, self.ndpe, self.ndpe))
        )
        self._vol_cols = np.ascontiguousarray(
            np.broadcast_to(base + ar[None, None, :], (self.n_el, self.ndpe, self.ndpe))
        )

    # ------------------------------------------------------------------
    # precomputation

    def _build_face_groups(self) -> None:
        mesh = self.space.mesh
        basis = self.basis
        p = self.space.p
        eta = self.params.eta
        size = mesh.element_size
        fw = basis.face_weights
        problem = self.problem

        self.interior: list[_InteriorGroup] = []
        for axis, rows in enumerate(mesh.interior_faces_by_axis()):
            if len(rows) == 0:
                continue
            faces = mesh.interior_faces[rows]
            em, lfm, ep, lfp = faces[:, 0], faces[:, 1], faces[:, 2], faces[:, 3]
            assert np.all(lfm == 2 * axis + 1) and np.all(lfp == 2 * axis)
            sm = size[em, axis]
            spl = size[ep, axis]
            h = 0.5 * (sm + spl)
            area = _tangential_area(size, em, axis)
            w = area[:, None] * fw[None, :]
            ref = basis.face_points[2 * axis + 1]
            pts = (
                mesh.element_origin[em][:, None, :]
                + size[em][:, None, :] * ref[None, :, :]
            )
            u = np.asarray(
                problem.velocity(pts.reshape(-1, mesh.dim)), dtype=float
            ).reshape(len(em), -1, mesh.dim)
            self.interior.append(
                _InteriorGroup(
                    axis=axis,
                    em=em,
                    ep=ep,
                    sm=sm,
                    sp=spl,
                    delta=penalty(h, p, eta),
                    w=w,
                    u_n=u[:, :, axis],
                    vm=basis.face_values[2 * axis + 1],
                    vp=basis.face_values[2 * axis],
                    gm=basis.face_gradients[2 * axis + 1][:, :, axis],
                    gp=basis.face_gradients[2 * axis][:, :, axis],
                )
            )

        self.boundary: list[_BoundaryGroup] = []
        for axis, side, tag, rows in mesh.boundary_groups():
            if len(rows) == 0:
                continue
            lf = 2 * axis + side
            faces = mesh.boundary_faces[rows]
            elems = faces[:, 0]
            sign = 1.0 if side == 1 else -1.0
            s = size[elems, axis]
            area = _tangential_area(size, elems, axis)
            w = area[:, None] * fw[None, :]
            ref = basis.face_points[lf]
            pts = (
                mesh.element_origin[elems][:, None, :]
                + size[elems][:, None, :] * ref[None, :, :]
            )
            flat = pts.reshape(-1, mesh.dim)
            u = np.asarray(problem.velocity(flat), dtype=float).reshape(
                len(elems), -1, mesh.dim
            )
            group = _BoundaryGroup(
                tag=tag,
                axis=axis,
                sign=sign,
                elems=elems,
                s=s,
                delta=penalty(s, p, eta),
                w=w,
                u_n=sign * u[:, :, axis],
                vb=basis.face_values[lf],
                gb=basis.face_gradients[lf][:, :, axis],
                points=pts,
            )
            if tag == BoundaryTag.EXTERIOR:
                if problem.dirichlet is None:
                    raise ValueError(
                        "mesh has plain exterior faces but the problem supplies "
                        "no Dirichlet data"
                    )
                data = {}
                for name in self.names:
                    if name not in problem.dirichlet:
                        raise ValueError(f"missing Dirichlet data for field '{name}'")
                    data[name] = np.asarray(
                        problem.dirichlet[name](flat), dtype=float
                    ).reshape(len(elems), -1)
                group.data = data
            elif tag in (BoundaryTag.ELECTRODE_ANODE, BoundaryTag.ELECTRODE_CATHODE):
                kin = problem.kinetics.get(int(tag))
                if kin is None:
                    raise ValueError(
                        f"mesh has electrode faces with tag {tag} but the problem "
                        "supplies no kinetics for it"
                    )
                group.kinetics = kin
                group.j0 = np.asarray(kin.j0_hat(flat), dtype=float).reshape(
                    len(elems), -1
                )
            self.boundary.append(group)

    # ------------------------------------------------------------------
    # public API

    def check_state(self, fields: np.ndarray) -> np.ndarray:
        fields = np.asarray(fields, dtype=float)
        if fields.shape != (self.n_fields, self.n_dofs):
            raise ValueError(
                f"state shape {fields.shape} does not match "
                f"({self.n_fields}, {self.n_dofs})"
            )
        return fields

    def residual(self, state) -> BlockResidual:
        r, _ = self._assemble(_fields_of(state), want_jac=False)
        return r

    def jacobian(self, state) -> BlockMatrix:
        _, jac = self._assemble(_fields_of(state), want_jac=True)
        return jac

    def assemble(self, state) -> tuple[BlockResidual, BlockMatrix]:
        r, jac = self._assemble(_fields_of(state), want_jac=True)
        return r, jac

    # ------------------------------------------------------------------
    # core

    def _assemble(
        self, fields: np.ndarray, want_jac: bool
    ) -> tuple[BlockResidual, BlockMatrix | None]:
        fields = self.check_state(fields)
        prob = self.problem
        nf, nd = self.n_fields, self.ndpe
        F = fields.reshape(nf, self.n_el, nd)
        V, G = self.V, self.G
        coo: dict[tuple[int, int], list] = {}

        def add_coo(i, j, rows, cols, vals):
            coo.setdefault((i, j), []).append(
                (rows.reshape(-1), cols.reshape(-1), vals.reshape(-1))
            )

        # ---------------- volume ----------------
        vals = np.einsum("kei,iq->keq", F, V)
        grads = np.einsum("kei,iqa->keqa", F, G) * self.inv_s[None, :, None, :]
        pv, pg = vals[0], grads[0]
        wdet = self.wdet
        R = np.zeros((nf, self.n_el, nd))
        kappa = np.einsum("k,keq->eq", prob.kappa_weights, vals[1:])

        jac_vol: dict[tuple[int, int], np.ndarray] = {}

        def jvol(i, j):
            return jac_vol.setdefault((i, j), np.zeros((self.n_el, nd, nd)))

        stiff = None
        if want_jac:
            stiff = np.einsum(
                "eq,ea,iqa,jqa->eij", wdet, self.inv_s2, G, G, optimize=True
            )

        for k in range(nf - 1):
            z, d = prob.z_ret[k], prob.d_ret[k]
            cv, cg = vals[1 + k], grads[1 + k]
            q_k = self.u_vol - z * d * pg
            # D grad(c) . grad(v)
            R[1 + k] += d * np.einsum(
                "eqa,ea,iqa->ei", cg * wdet[:, :, None], self.inv_s, G, optimize=True
            )
            # -c q . grad(v)
            R[1 + k] -= np.einsum(
                "eqa,ea,iqa->ei",
                q_k * (cv * wdet)[:, :, None],
                self.inv_s,
                G,
                optimize=True,
            )
            if self.react_w is not None:
                R[1 + k] -= self.react_w[k] @ V.T
            # charge row: cross diffusion
            R[0] += prob.a_hat[k] * np.einsum(
                "eqa,ea,iqa->ei", cg * wdet[:, :, None], self.inv_s, G, optimize=True
            )
            if want_jac:
                jvol(1 + k, 1 + k)[:] += d * stiff
                jvol(1 + k, 1 + k)[:] -= np.einsum(
                    "eqa,ea,iqa,jq->eij",
                    q_k * wdet[:, :, None],
                    self.inv_s,
                    G,
                    V,
                    optimize=True,
                )
                jvol(1 + k, 0)[:] += z * d * np.einsum(
                    "eq,ea,iqa,jqa->eij",
                    cv * wdet,
                    self.inv_s2,
                    G,
                    G,
                    optimize=True,
                )
                jvol(0, 1 + k)[:] += prob.a_hat[k] * stiff
                jvol(0, 1 + k)[:] += prob.kappa_weights[k] * np.einsum(
                    "eqa,ea,iqa,jq->eij",
                    pg * wdet[:, :, None],
                    self.inv_s,
                    G,
                    V,
                    optimize=True,
                )
        # charge row: kappa(c) grad(phi) . grad(v)
        R[0] += np.einsum(
            "eqa,ea,iqa->ei",
            pg * (kappa * wdet)[:, :, None],
            self.inv_s,
            G,
            optimize=True,
        )
        if self.forcing_w is not None:
            R[0] -= self.forcing_w @ V.T
        if want_jac:
            jvol(0, 0)[:] += np.einsum(
                "eq,ea,iqa,jqa->eij", kappa * wdet, self.inv_s2, G, G, optimize=True
            )
            for (i, j), block in jac_vol.items():
                add_coo(i, j, self._vol_rows, self._vol_cols, block)
            jac_vol = None

        # ---------------- interior faces ----------------
        for g in self.interior:
            tm = np.einsum("kfi,iq->kfq", F[:, g.em], g.vm)
            tp = np.einsum("kfi,iq->kfq", F[:, g.ep], g.vp)
            dnm = np.einsum("kfi,iq->kfq", F[:, g.em], g.gm) / g.sm[None, :, None]
            dnp_ = np.einsum("kfi,iq->kfq", F[:, g.ep], g.gp) / g.sp[None, :, None]
            w = g.w
            dl = g.delta[:, None]
            km = np.einsum("k,kfq->fq", prob.kappa_weights, tm[1:])
            kp = np.einsum("k,kfq->fq", prob.kappa_weights, tp[1:])
            kavg = 0.5 * (km + kp)
            jphi = tm[0] - tp[0]
            ism = (1.0 / g.sm)[:, None]
            isp = (1.0 / g.sp)[:, None]

            rm = np.zeros((len(g.em), nd))
            rp = np.zeros((len(g.ep), nd))
            jf: dict[tuple[int, int], list] = {}

            def jface(i, j):
                # [mm, mp, pm, pp] blocks, allocated on demand
                return jf.setdefault(
                    (i, j), [np.zeros((len(g.em), nd, nd)) for _ in range(4)]
                )

            def fi(C, T):
                return np.einsum("fq,iq->fi", C, T, optimize=True)

            def fij(C, Ti, Tj):
                return np.einsum("fq,iq,jq->fij", C, Ti, Tj, optimize=True)

            for k in range(nf - 1):
                z, d = prob.z_ret[k], prob.d_ret[k]
                cm, cp = tm[1 + k], tp[1 + k]
                jc = cm - cp
                avg = 0.5 * (dnm[1 + k] + dnp_[1 + k])
                # SIPG diffusion, species row
                rm += fi(-d * w * avg + d * w * dl * jc, g.vm)
                rm += fi(-0.5 * d * w * jc * ism, g.gm)
                rp += fi(d * w * avg - d * w * dl * jc, g.vp)
                rp += fi(-0.5 * d * w * jc * isp, g.gp)
                # charge row: cross diffusion (consistency + symmetrization only)
                a = prob.a_hat[k]
                crm = fi(-a * w * avg, g.vm) + fi(-0.5 * a * w * jc * ism, g.gm)
                crp = fi(a * w * avg, g.vp) + fi(-0.5 * a * w * jc * isp, g.gp)
                # upwind advection, species row
                qm = g.u_n - z * d * dnm[0]
                qp = g.u_n - z * d * dnp_[0]
                qbar = 0.5 * (qm + qp)
                aqb = np.abs(qbar)
                flux = 0.5 * (cm * qm + cp * qp) + 0.5 * aqb * jc
                rm += fi(w * flux, g.vm)
                rp -= fi(w * flux, g.vp)
                np.add.at(R[1 + k], g.em, rm)
                np.add.at(R[1 + k], g.ep, rp)
                rm[:] = 0.0
                rp[:] = 0.0
                np.add.at(R[0], g.em, crm)
                np.add.at(R[0], g.ep, crp)
                if not want_jac:
                    continue
                mm, mp, pm, pp = jface(1 + k, 1 + k)
                # diffusion
                mm += fij(-0.5 * d * w * ism, g.vm, g.gm)
                mm += fij(-0.5 * d * w * ism, g.gm, g.vm)
                mm += fij(d * w * dl, g.vm, g.vm)
                mp += fij(-0.5 * d * w * isp, g.vm, g.gp)
                mp += fij(0.5 * d * w * ism, g.gm, g.vp)
                mp += fij(-d * w * dl, g.vm, g.vp)
                pm += fij(0.5 * d * w * ism, g.vp, g.gm)
                pm += fij(-0.5 * d * w * isp, g.gp, g.vm)
                pm += fij(-d * w * dl, g.vp, g.vm)
                pp += fij(0.5 * d * w * isp, g.vp, g.gp)
                pp += fij(0.5 * d * w * isp, g.gp, g.vp)
                pp += fij(d * w * dl, g.vp, g.vp)
                # upwind: d(flux)/dc
                cup = 0.5 * w * (qm + aqb)
                cdn = 0.5 * w * (qp - aqb)
                mm += fij(cup, g.vm, g.vm)
                mp += fij(cdn, g.vm, g.vp)
                pm += fij(-cup, g.vp, g.vm)
                pp += fij(-cdn, g.vp, g.vp)
                # upwind: d(flux)/dphi
                sgn = np.sign(qbar)
                fm = -z * d * ism * (0.5 * cm + 0.25 * sgn * jc) * w
                fp = -z * d * isp * (0.5 * cp + 0.25 * sgn * jc) * w
                mm_p, mp_p, pm_p, pp_p = jface(1 + k, 0)
                mm_p += fij(fm, g.vm, g.gm)
                mp_p += fij(fp, g.vm, g.gp)
                pm_p += fij(-fm, g.vp, g.gm)
                pp_p += fij(-fp, g.vp, g.gp)
                # charge row: cross diffusion and kappa-variation terms
                cm_b, cp_b, cpm_b, cpp_b = jface(0, 1 + k)
                cm_b += fij(-0.5 * a * w * ism, g.vm, g.gm)
                cm_b += fij(-0.5 * a * w * ism, g.gm, g.vm)
                cp_b += fij(-0.5 * a * w * isp, g.vm, g.gp)
                cp_b += fij(0.5 * a * w * ism, g.gm, g.vp)
                cpm_b += fij(0.5 * a * w * ism, g.vp, g.gm)
                cpm_b += fij(-0.5 * a * w * isp, g.gp, g.vm)
                cpp_b += fij(0.5 * a * w * isp, g.vp, g.gp)
                cpp_b += fij(0.5 * a * w * isp, g.gp, g.vp)
                kw = prob.kappa_weights[k]
                cm_b += fij(
                    kw * w * (-0.5 * dnm[0] + 0.5 * dl * jphi), g.vm, g.vm
                )
                cm_b += fij(-0.5 * kw * w * jphi * ism, g.gm, g.vm)
                cp_b += fij(kw * w * (-0.5 * dnp_[0] + 0.5 * dl * jphi), g.vm, g.vp)
                cpm_b += fij(
                    kw * w * (0.5 * dnm[0] - 0.5 * dl * jphi), g.vp, g.vm
                )
                cpp_b += fij(kw * w * (0.5 * dnp_[0] - 0.5 * dl * jphi), g.vp, g.vp)
                cpp_b += fij(-0.5 * kw * w * jphi * isp, g.gp, g.vp)

            # charge row: kappa SIPG in phi
            avgk = 0.5 * (km * dnm[0] + kp * dnp_[0])
            rm += fi(-w * avgk + w * kavg * dl * jphi, g.vm)
            rm += fi(-0.5 * w * jphi * km * ism, g.gm)
            rp += fi(w * avgk - w * kavg * dl * jphi, g.vp)
            rp += fi(-0.5 * w * jphi * kp * isp, g.gp)
            np.add.at(R[0], g.em, rm)
            np.add.at(R[0], g.ep, rp)
            if want_jac:
                mm, mp, pm, pp = jface(0, 0)
                mm += fij(-0.5 * w * km * ism, g.vm, g.gm)
                mm += fij(-0.5 * w * km * ism, g.gm, g.vm)
                mm += fij(w * kavg * dl, g.vm, g.vm)
                mp += fij(-0.5 * w * kp * isp, g.vm, g.gp)
                mp += fij(0.5 * w * km * ism, g.gm, g.vp)
                mp += fij(-w * kavg * dl, g.vm, g.vp)
                pm += fij(0.5 * w * km * ism, g.vp, g.gm)
                pm += fij(-0.5 * w * kp * isp, g.gp, g.vm)
                pm += fij(-w * kavg * dl, g.vp, g.vm)
                pp += fij(0.5 * w * kp * isp, g.vp, g.gp)
                pp += fij(0.5 * w * kp * isp, g.gp, g.vp)
                pp += fij(w * kavg * dl, g.vp, g.vp)
                ar = np.arange(nd, dtype=np.int32)
                rm_base = (g.em.astype(np.int32) * nd)[:, None, None]
                rp_base = (g.ep.astype(np.int32) * nd)[:, None, None]
                row_m = rm_base + ar[None, :, None]
                row_p = rp_base + ar[None, :, None]
                col_m = rm_base + ar[None, None, :]
                col_p = rp_base + ar[None, None, :]
                shape = (len(g.em), nd, nd)
                for (i, j), (bmm, bmp, bpm, bpp) in jf.items():
                    add_coo(i, j, np.broadcast_to(row_m, shape), np.broadcast_to(col_m, shape), bmm)
                    add_coo(i, j, np.broadcast_to(row_m, shape), np.broadcast_to(col_p, shape), bmp)
                    add_coo(i, j, np.broadcast_to(row_p, shape), np.broadcast_to(col_m, shape), bpm)
                    add_coo(i, j, np.broadcast_to(row_p, shape), np.broadcast_to(col_p, shape), bpp)
            jf = None

        # ---------------- boundary faces ----------------
        for g in self.boundary:
            self._boundary_terms(g, F, R, add_coo if want_jac else None)

        residual = BlockResidual(
            names=self.names, blocks=R.reshape(nf, self.n_dofs)
        )
        if not want_jac:
            return residual, None
        blocks = {}
        # convert one block at a time and drop its staging arrays before the
        # next; holding every block's chunks through the loop doubles the
        # peak footprint on fine meshes
        for key in sorted(coo.keys()):
            chunks = coo.pop(key)
            rows = np.concatenate([c[0] for c in chunks])
            cols = np.concatenate([c[1] for c in chunks])
            data = np.concatenate([c[2] for c in chunks])
            del chunks
            a = sp.coo_matrix(
                (data, (rows, cols)), shape=(self.n_dofs, self.n_dofs)
            ).tocsr()
            del rows, cols, data
            a.sum_duplicates()
            a.sort_indices()
            blocks[key] = a
        return residual, BlockMatrix(
            names=self.names, n_dofs=self.n_dofs, blocks=blocks
        )

    def _boundary_terms(self, g: _BoundaryGroup, F, R, add_coo) -> None:
        prob = self.problem
        nf, nd = self.n_fields, self.ndpe
        tb = np.einsum("kfi,iq->kfq", F[:, g.elems], g.vb)
        dnb = (
            g.sign
            * np.einsum("kfi,iq->kfq", F[:, g.elems], g.gb)
            / g.s[None, :, None]
        )
        w = g.w
        dl = g.delta[:, None]
        isb = (g.sign / g.s)[:, None]  # converts reference dv to outward dv/dn
        ar = np.arange(nd, dtype=np.int32)
        base = (g.elems.astype(np.int32) * nd)[:, None, None]
        rows = np.broadcast_to(base + ar[None, :, None], (len(g.elems), nd, nd))
        cols = np.broadcast_to(base + ar[None, None, :], (len(g.elems), nd, nd))

        def fi(C, T):
            return np.einsum("fq,iq->fi", C, T, optimize=True)

        def fij(C, Ti, Tj):
            return np.einsum("fq,iq,jq->fij", C, Ti, Tj, optimize=True)

        def scatter(fld, contrib):
            np.add.at(R[fld], g.elems, contrib)

        if g.tag == BoundaryTag.INLET:
            for k in range(nf - 1):
                scatter(1 + k, fi(w * g.u_n * prob.inlet_value[k], g.vb))
            return
        if g.tag == BoundaryTag.WALL:
            return
        if g.tag == BoundaryTag.OUTLET:
            for k in range(nf - 1):
                z, d = prob.z_ret[k], prob.d_ret[k]
                qn = g.u_n - z * d * dnb[0]
                scatter(1 + k, fi(w * qn * tb[1 + k], g.vb))
                if add_coo is not None:
                    add_coo(1 + k, 1 + k, rows, cols, fij(w * qn, g.vb, g.vb))
                    add_coo(
                        1 + k,
                        0,
                        rows,
                        cols,
                        fij(-z * d * w * tb[1 + k] * isb, g.vb, g.gb),
                    )
            return
        if g.tag in (BoundaryTag.ELECTRODE_ANODE, BoundaryTag.ELECTRODE_CATHODE):
            kin = g.kinetics
            ox = 1 + kin.oxidant_field
            gh, dg_dc, dg_dphi = kin.flux(tb[ox], tb[0], g.j0)
            cw = prob.charge_w_ret[kin.oxidant_field]
            scatter(ox, fi(-w * gh, g.vb))
            scatter(0, fi(-cw * w * gh, g.vb))
            if add_coo is not None:
                add_coo(ox, ox, rows, cols, fij(-w * dg_dc, g.vb, g.vb))
                add_coo(ox, 0, rows, cols, fij(-w * dg_dphi, g.vb, g.vb))
                add_coo(0, ox, rows, cols, fij(-cw * w * dg_dc, g.vb, g.vb))
                add_coo(0, 0, rows, cols, fij(-cw * w * dg_dphi, g.vb, g.vb))
            return
        # plain exterior: weak Dirichlet data for every field
        data = g.data
        gphi = data[self.names[0]]
        kb = np.einsum("k,kfq->fq", prob.kappa_weights, tb[1:])
        for k in range(nf - 1):
            z, d = prob.z_ret[k], prob.d_ret[k]
            cb = tb[1 + k]
            gc = data[self.names[1 + k]]
            diff_c = cb - gc
            # SIPG Dirichlet diffusion
            rk = fi(w * (-d * dnb[1 + k] + d * dl * diff_c), g.vb)
            rk += fi(-d * w * diff_c * isb, g.gb)
            # upwind advection with boundary data on inflow
            qn = g.u_n - z * d * dnb[0]
            pos = np.maximum(qn, 0.0)
            neg = np.minimum(qn, 0.0)
            rk += fi(w * (pos * cb + neg * gc), g.vb)
            scatter(1 + k, rk)
            # charge row: cross diffusion with data (no penalty)
            a = prob.a_hat[k]
            r0 = fi(-a * w * dnb[1 + k], g.vb) + fi(-a * w * diff_c * isb, g.gb)
            scatter(0, r0)
            if add_coo is None:
                continue
            jkk = fij(-d * w * isb, g.vb, g.gb)
            jkk += fij(-d * w * isb, g.gb, g.vb)
            jkk += fij(d * w * dl, g.vb, g.vb)
            jkk += fij(w * pos, g.vb, g.vb)
            add_coo(1 + k, 1 + k, rows, cols, jkk)
            upst = np.where(qn > 0.0, cb, 0.0) + np.where(qn < 0.0, gc, 0.0)
            add_coo(
                1 + k, 0, rows, cols, fij(-z * d * w * upst * isb, g.vb, g.gb)
            )
            j0k = fij(-a * w * isb, g.vb, g.gb)
            j0k += fij(-a * w * isb, g.gb, g.vb)
            # kappa variation in the potential Dirichlet terms
            kw = prob.kappa_weights[k]
            j0k += fij(
                kw * w * (-dnb[0] + dl * (tb[0] - gphi)), g.vb, g.vb
            )
            j0k += fij(-kw * w * (tb[0] - gphi) * isb, g.gb, g.vb)
            add_coo(0, 1 + k, rows, cols, j0k)
        # charge row: potential Dirichlet terms with state-dependent kappa
        dphi = tb[0] - gphi
        r0 = fi(w * (-kb * dnb[0] + kb * dl * dphi), g.vb)
        r0 += fi(-w * kb * dphi * isb, g.gb)
        scatter(0, r0)
        if add_coo is not None:
            j00 = fij(-w * kb * isb, g.vb, g.gb)
            j00 += fij(-w * kb * isb, g.gb, g.vb)
            j00 += fij(w * kb * dl, g.vb, g.vb)
            add_coo(0, 0, rows, cols, j00)

    # ------------------------------------------------------------------
    # charge-equation reconstruction from per-species mass balances

    def charge_residual_from_species(self, state) -> np.ndarray:
        """Weighted sum of all species residuals, eliminated one included.

        Each species mass balance is discretized in the charge-compatible
        form (no concentration penalty, migration treated as a potential
        diffusion with coefficient z D c, advective upwinding in the fluid
        velocity only, advective-only outlet flux); multiplying by the charge
        weights and summing — with the eliminated concentration recovered
        from the retained ones — reproduces the assembled charge residual.
        """
        fields = self.check_state(_fields_of(state))
        prob = self.problem
        nd = self.ndpe
        F = fields.reshape(self.n_fields, self.n_el, nd)
        rw = prob.recovery_weights
        # per-species data: coefficients, weight, charge number, diffusivity
        coefs = [F[1 + k] for k in range(self.n_fields - 1)]
        coefs.append(np.einsum("k,kei->ei", rw, F[1:]))
        weights = list(prob.charge_w_ret) + [prob.charge_w_elim]
        zs = list(prob.z_ret) + [prob.z_elim]
        ds = list(prob.d_ret) + [prob.d_elim]
        inlet = list(prob.inlet_value) + [float(np.dot(rw, prob.inlet_value))]
        reacts = [None] * len(zs)
        if self.react_w is not None:
            for k in range(self.n_fields - 1):
                reacts[k] = self.react_w[k]
            if self.react_elim_w is not None:
                reacts[-1] = self.react_elim_w
        ox_field = {}
        for g in self.boundary:
            if g.kinetics is not None:
                ox_field[id(g)] = g.kinetics.oxidant_field

        V, G = self.V, self.G
        wdet, inv_s = self.wdet, self.inv_s
        out = np.zeros((self.n_el, nd))
        pg_vol = np.einsum("ei,iqa->eqa", F[0], G) * inv_s[:, None, :]

        for sp_i, (ck, wk, z, d) in enumerate(zip(coefs, weights, zs, ds)):
            cv = np.einsum("ei,iq->eq", ck, V)
            cg = np.einsum("ei,iqa->eqa", ck, G) * inv_s[:, None, :]
            # volume: diffusion + u-advection + migration as potential diffusion
            r = d * np.einsum(
                "eqa,ea,iqa->ei", cg * wdet[:, :, None], inv_s, G, optimize=True
            )
            r -= np.einsum(
                "eqa,ea,iqa->ei",
                self.u_vol * (cv * wdet)[:, :, None],
                inv_s,
                G,
                optimize=True,
            )
            r += z * d * np.einsum(
                "eqa,ea,iqa->ei",
                pg_vol * (cv * wdet)[:, :, None],
                inv_s,
                G,
                optimize=True,
            )
            if reacts[sp_i] is not None:
                r -= reacts[sp_i] @ V.T
            out += wk * r

            for g in self.interior:
                cm = ck[g.em] @ g.vm
                cp = ck[g.ep] @ g.vp
                jc = cm - cp
                dnm = (ck[g.em] @ g.gm) / g.sm[:, None]
                dnp_ = (ck[g.ep] @ g.gp) / g.sp[:, None]
                pm_ = (F[0][g.em] @ g.vm, F[0][g.ep] @ g.vp)
                jphi = pm_[0] - pm_[1]
                phin_m = (F[0][g.em] @ g.gm) / g.sm[:, None]
                phin_p = (F[0][g.ep] @ g.gp) / g.sp[:, None]
                w = g.w
                dlf = g.delta[:, None]
                ism = (1.0 / g.sm)[:, None]
                isp = (1.0 / g.sp)[:, None]
                avg = 0.5 * (dnm + dnp_)
                # diffusion: consistency + symmetrization, no penalty
                rm = np.einsum("fq,iq->fi", -d * w * avg, g.vm)
                rm += np.einsum("fq,iq->fi", -0.5 * d * w * jc * ism, g.gm)
                rp = np.einsum("fq,iq->fi", d * w * avg, g.vp)
                rp += np.einsum("fq,iq->fi", -0.5 * d * w * jc * isp, g.gp)
                # upwind advection in the fluid velocity alone
                flux = 0.5 * g.u_n * (cm + cp) + 0.5 * np.abs(g.u_n) * jc
                rm += np.einsum("fq,iq->fi", w * flux, g.vm)
                rp -= np.einsum("fq,iq->fi", w * flux, g.vp)
                # migration: potential diffusion with coefficient chi = z d c
                chim = z * d * cm
                chip = z * d * cp
                avgchi = 0.5 * (chim * phin_m + chip * phin_p)
                chiavg = 0.5 * (chim + chip)
                rm += np.einsum(
                    "fq,iq->fi", w * (-avgchi + chiavg * dlf * jphi), g.vm
                )
                rm += np.einsum("fq,iq->fi", -0.5 * w * jphi * chim * ism, g.gm)
                rp += np.einsum(
                    "fq,iq->fi", w * (avgchi - chiavg * dlf * jphi), g.vp
                )
                rp += np.einsum("fq,iq->fi", -0.5 * w * jphi * chip * isp, g.gp)
                np.add.at(out, g.em, wk * rm)
                np.add.at(out, g.ep, wk * rp)

            for g in self.boundary:
                if g.tag == BoundaryTag.WALL:
                    continue
                cb = ck[g.elems] @ g.vb
                w = g.w
                if g.tag == BoundaryTag.INLET:
                    rb = np.einsum("fq,iq->fi", w * g.u_n * inlet[sp_i], g.vb)
                elif g.tag == BoundaryTag.OUTLET:
                    rb = np.einsum("fq,iq->fi", w * g.u_n * cb, g.vb)
                elif g.tag in (
                    BoundaryTag.ELECTRODE_ANODE,
                    BoundaryTag.ELECTRODE_CATHODE,
                ):
                    if sp_i != ox_field[id(g)]:
                        continue
                    phib = F[0][g.elems] @ g.vb
                    gh, _, _ = g.kinetics.flux(cb, phib, g.j0)
                    rb = np.einsum("fq,iq->fi", -w * gh, g.vb)
                else:  # plain exterior with Dirichlet data
                    dnb = g.sign * (ck[g.elems] @ g.gb) / g.s[:, None]
                    phib = F[0][g.elems] @ g.vb
                    phin = g.sign * (F[0][g.elems] @ g.gb) / g.s[:, None]
                    isb = (g.sign / g.s)[:, None]
                    dlf = g.delta[:, None]
                    if sp_i < self.n_fields - 1:
                        gc = g.data[self.names[1 + sp_i]]
                    else:
                        gc = np.einsum(
                            "k,kfq->fq",
                            rw,
                            np.stack(
                                [g.data[self.names[1 + k]] for k in range(len(rw))]
                            ),
                        )
                    gphi = g.data[self.names[0]]
                    diff_c = cb - gc
                    rb = np.einsum("fq,iq->fi", -d * w * dnb, g.vb)
                    rb += np.einsum("fq,iq->fi", -d * w * diff_c * isb, g.gb)
                    pos = np.maximum(g.u_n, 0.0)
                    neg = np.minimum(g.u_n, 0.0)
                    rb += np.einsum("fq,iq->fi", w * (pos * cb + neg * gc), g.vb)
                    chib = z * d * cb
                    dphi = phib - gphi
                    rb += np.einsum(
                        "fq,iq->fi", w * (-chib * phin + chib * dlf * dphi), g.vb
                    )
                    rb += np.einsum("fq,iq->fi", -w * chib * dphi * isb, g.gb)
                np.add.at(out, g.elems, wk * rb)

        return out.reshape(self.n_dofs)


def _fields_of(state) -> np.ndarray:
    return np.asarray(getattr(state, "fields", state), dtype=float)


def _space_of(state, space: FeSpace | None) -> FeSpace:
    space = space if space is not None else getattr(state, "space", None)
    if space is None:
        raise ValueError("pass a FeSpace or a state that carries one")
    return space


def assemble_residual(
    state, problem: TransportProblem, params: DgParams | None = None, *, space=None
) -> BlockResidual:
    return Assembler(_space_of(state, space), problem, params).residual(state)


def assemble_jacobian(
    state, problem: TransportProblem, params: DgParams | None = None, *, space=None
) -> BlockMatrix:
    return Assembler(_space_of(state, space), problem, params).jacobian(state)


def charge_residual_from_species(
    state, problem: TransportProblem, params: DgParams | None = None, *, space=None
) -> np.ndarray:
    asm = Assembler(_space_of(state, space), problem, params)
    return asm.charge_residual_from_species(state)


def recover_eliminated(state, problem: TransportProblem) -> np.ndarray:
    """Stack the retained concentrations with the recovered eliminated one.

    Returns an (m, n_dofs) array whose last row is the eliminated species'
    coefficients; the recovery is exact per dof because it is linear.
    """
    fields = _fields_of(state)
    conc = fields[1:]
    elim = np.einsum("k,ki->i", problem.recovery_weights, conc)
    return np.vstack([conc, elim[None, :]])
