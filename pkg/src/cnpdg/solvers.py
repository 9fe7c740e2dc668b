"""Composition of the linear solver stack for the coupled block system.

One Newton step solves J delta = -R with flexible GMRES, right-preconditioned
by an upper-block-triangular fieldsplit whose diagonal blocks are inverted
inexactly: conjugate gradients with a geometric-multigrid V-cycle for the
potential block, and GMRES with either multigrid or one-level overlapping
additive Schwarz (ILU0 subdomain solves) for each concentration block.

Multigrid operators are re-assembled on every level of a nested mesh
hierarchy at the L2 projection of the current state, so coarse corrections
see the same nonlinear coefficients as the fine grid.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .assembly import Assembler, BlockMatrix, DgParams
from .fespace import FeSpace
from .linalg import (
    AsmPreconditioner,
    DirectLU,
    FieldsplitPreconditioner,
    GmgHierarchy,
    GmgPreconditioner,
    KrylovConfig,
    asm_dof_sets,
    dg_prolongation,
    fgmres,
    krylov_inner,
    project_to_coarse,
)
from .mesh import Mesh, refined_hierarchy
from .physics import TransportProblem


@dataclass(frozen=True)
class SolverStackConfig:
    """Knobs for the composed block solver.

    conc_method selects the concentration-block preconditioner: "gmg" for
    the multigrid V-cycle, "asm" for one-level additive Schwarz.
    n_subdomains is the Schwarz subdomain count; None resolves to the
    worker-thread count at build time.  smoother_subdomains independently
    sets the subdomain count of the multigrid smoother (ILU0-Schwarz);
    None inherits n_subdomains.  The default smoother is the single-domain
    degenerate Schwarz (one global ILU0 sweep) with no damping, which stays
    effective at higher polynomial orders; multi-subdomain smoothing with
    overlap double-counts the overlapped rows and needs smoother_damping
    around 0.5 to remain contractive.
    """

    outer_rtol: float = 1e-3
    outer_restart: int = 30
    outer_maxiter: int = 200
    inner_rtol: float = 1e-2
    inner_maxiter: int = 50
    conc_method: str = "gmg"
    n_subdomains: int | None = 4
    smoother_subdomains: int | None = 1
    overlap: int = 1
    smoother_damping: float = 1.0
    n_threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.outer_rtol < 1.0:
            raise ValueError("outer_rtol must lie in (0, 1)")
        if not 0.0 < self.inner_rtol < 1.0:
            raise ValueError("inner_rtol must lie in (0, 1)")
        if self.conc_method not in ("gmg", "asm"):
            raise ValueError(f"unknown conc_method {self.conc_method!r}")
        if not 0.0 < self.smoother_damping <= 1.0:
            raise ValueError("smoother_damping must lie in (0, 1]")
        if self.overlap < 0:
            raise ValueError("overlap must be >= 0")

    def resolved_subdomains(self) -> int:
        n = self.n_subdomains if self.n_subdomains is not None else self.n_threads
        return max(1, int(n))

    def resolved_smoother_subdomains(self) -> int:
        if self.smoother_subdomains is None:
            return self.resolved_subdomains()
        return max(1, int(self.smoother_subdomains))


@dataclass
class LevelStack:
    """Nested spaces with per-level assemblers and transfer operators.

    Levels run coarse to fine; the finest space is the one the nonlinear
    problem lives on.  prolongations[i] embeds level i into level i+1,
    children[i] lists the level-(i+1) children of each level-i element,
    and dof_sets[l] partitions level l's dofs for additive Schwarz.
    """

    problem: TransportProblem
    params: DgParams
    spaces: list[FeSpace]
    assemblers: list[Assembler]
    children: list[np.ndarray]
    prolongations: list[sps.csr_matrix]
    dof_sets: list[list[np.ndarray]]
    smoother_dof_sets: list[list[np.ndarray]]

    @property
    def n_levels(self) -> int:
        return len(self.spaces)

    @property
    def space(self) -> FeSpace:
        return self.spaces[-1]

    @property
    def assembler(self) -> Assembler:
        return self.assemblers[-1]

    def project_fields(self, fields: np.ndarray) -> list[np.ndarray]:
        """State on every level (coarse to fine) by elementwise L2 projection."""
        fields = np.asarray(fields, dtype=float)
        p, dim = self.space.p, self.space.mesh.dim
        per_level = [None] * self.n_levels
        per_level[-1] = fields
        for lvl in range(self.n_levels - 2, -1, -1):
            finer = per_level[lvl + 1]
            per_level[lvl] = np.stack(
                [
                    project_to_coarse(p, dim, self.children[lvl], finer[f])
                    for f in range(finer.shape[0])
                ]
            )
        return per_level


def build_level_stack(
    coarse_mesh: Mesh,
    n_refinements: int,
    p: int,
    problem: TransportProblem,
    params: DgParams | None = None,
    cfg: SolverStackConfig | None = None,
) -> LevelStack:
    """Refine coarse_mesh n times and set up spaces, assemblers, transfers."""
    params = params or DgParams()
    cfg = cfg or SolverStackConfig()
    hierarchy = refined_hierarchy(coarse_mesh, n_refinements)
    spaces = [FeSpace.create(m, p) for m in hierarchy.levels]
    assemblers = [Assembler(s, problem, params) for s in spaces]
    dim = coarse_mesh.dim
    children, prolongations = [], []
    for lvl in range(1, len(spaces)):
        ch = hierarchy.children_by_octant(lvl)
        children.append(ch)
        prolongations.append(dg_prolongation(p, dim, ch))
    def sets_for(count):
        return [
            asm_dof_sets(
                s.mesh,
                s.dofs_per_element,
                min(count, s.mesh.n_elements),
                overlap=cfg.overlap,
            )
            for s in spaces
        ]

    n_sub = cfg.resolved_subdomains()
    n_smooth = cfg.resolved_smoother_subdomains()
    dof_sets = sets_for(n_sub)
    smoother_dof_sets = dof_sets if n_smooth == n_sub else sets_for(n_smooth)
    return LevelStack(
        problem=problem,
        params=params,
        spaces=spaces,
        assemblers=assemblers,
        children=children,
        prolongations=prolongations,
        dof_sets=dof_sets,
        smoother_dof_sets=smoother_dof_sets,
    )


@dataclass
class LinearSolveStats:
    """Outcome of one block linear solve.

    applications counts preconditioner applications; inner_totals[i] sums the
    inner Krylov iterations spent on field i across them, so
    inner_totals[i] / applications is the mean inner count per application.
    """

    converged: bool
    outer_iterations: int
    inner_totals: tuple[int, ...]
    inner_max: tuple[int, ...]
    residual_norm: float
    reason: str = ""
    applications: int = 0

    def inner_mean(self, i: int) -> float:
        return self.inner_totals[i] / max(1, self.applications)


class LinearSolveFailure(RuntimeError):
    """The block Krylov solve did not reach its tolerance."""

    def __init__(self, stats: LinearSolveStats):
        self.stats = stats
        super().__init__(
            f"linear solve stalled at relative residual {stats.residual_norm:.3e} "
            f"after {stats.outer_iterations} outer iterations ({stats.reason})"
        )


def _damped(prec, omega: float):
    if omega == 1.0:
        return prec
    return lambda r: omega * prec(r)


def _field_gmg(stack: LevelStack, jacs, field: int, cfg: SolverStackConfig):
    """V(1,1) multigrid preconditioner for one diagonal block."""
    return _gmg_from_mats(stack, [j.block(field, field) for j in jacs], cfg)


def _gmg_from_mats(stack: LevelStack, mats, cfg: SolverStackConfig):
    def smoother_factory(A, lvl):
        prec = AsmPreconditioner(A, stack.smoother_dof_sets[lvl])
        return _damped(prec, cfg.smoother_damping)

    hier = GmgHierarchy.build(mats, stack.prolongations, smoother_factory)
    return GmgPreconditioner(hier)


def build_fieldsplit(
    stack: LevelStack, jacs: list[BlockMatrix], cfg: SolverStackConfig
) -> FieldsplitPreconditioner:
    """Upper-triangular fieldsplit over the finest-level Jacobian.

    jacs holds the block Jacobians on every level (coarse to fine), all
    evaluated at projections of the same state.
    """
    jac = jacs[-1]
    n_fields = len(jac.names)
    inner_cfg = KrylovConfig(
        method="cg", rtol=cfg.inner_rtol, maxiter=cfg.inner_maxiter
    )
    inners = [
        krylov_inner(
            jac.block(0, 0), M=_field_gmg(stack, jacs, 0, cfg), cfg=inner_cfg
        )
    ]
    conc_cfg = dataclasses.replace(inner_cfg, method="gmres")
    for k in range(1, n_fields):
        if cfg.conc_method == "gmg":
            prec = _field_gmg(stack, jacs, k, cfg)
        else:
            prec = AsmPreconditioner(jac.block(k, k), stack.dof_sets[-1])
        inners.append(krylov_inner(jac.block(k, k), M=prec, cfg=conc_cfg))
    sizes = [stack.space.n_dofs] * n_fields
    return FieldsplitPreconditioner(jac.operator(), sizes, inners)


class StackLinearSolver:
    """Callable (state, jacobian, rhs) -> (delta, stats) for Newton steps.

    Re-assembles the coarse-level Jacobians at the projected state, builds
    the fieldsplit preconditioner, and runs flexible GMRES.  The finest-level
    Jacobian is the one handed in by the Newton loop; it is never
    re-assembled here.
    """

    def __init__(self, stack: LevelStack, cfg: SolverStackConfig | None = None):
        self.stack = stack
        self.cfg = cfg or SolverStackConfig()

    def __call__(self, state, jac: BlockMatrix, rhs: np.ndarray):
        stack, cfg = self.stack, self.cfg
        fields = getattr(state, "fields", state)
        level_fields = stack.project_fields(fields)
        jacs = [
            stack.assemblers[lvl].jacobian(level_fields[lvl])
            for lvl in range(stack.n_levels - 1)
        ]
        jacs.append(jac)
        fs = build_fieldsplit(stack, jacs, cfg)
        outer_cfg = KrylovConfig(
            method="fgmres",
            rtol=cfg.outer_rtol,
            maxiter=cfg.outer_maxiter,
            restart=cfg.outer_restart,
        )
        x, res = fgmres(jac.operator(), rhs, fs, outer_cfg)
        n_fields = len(jac.names)
        stats = LinearSolveStats(
            converged=res.converged,
            outer_iterations=res.iterations,
            inner_totals=tuple(
                fs.total_inner_iterations(i) for i in range(n_fields)
            ),
            inner_max=tuple(fs.max_inner_iterations(i) for i in range(n_fields)),
            residual_norm=res.residual_norm,
            reason=res.reason,
            applications=fs.applications,
        )
        if not res.converged:
            raise LinearSolveFailure(stats)
        return x, stats


def stack_phi_solver(
    stack: LevelStack,
    cfg: SolverStackConfig | None = None,
    rtol: float = 1e-2,
    maxiter: int = 200,
):
    """CG + multigrid solver for the potential block of the initial guess.

    The hierarchy is assembled at the inflow state (zero potential, unit
    concentrations), which is exactly what the initial-guess linearization
    uses, so the preconditioner matches the operator it is handed.
    """
    cfg = cfg or SolverStackConfig()

    def solve(A, b):
        from .linalg import cg

        fields = np.ones((len(stack.problem.names), stack.space.n_dofs))
        fields[0] = 0.0
        level_fields = stack.project_fields(fields)
        # keep only the potential block of each level's Jacobian; the full
        # block matrix of a fine level is a large transient
        mats = []
        for lvl in range(stack.n_levels):
            jac_l = stack.assemblers[lvl].jacobian(level_fields[lvl])
            mats.append(jac_l.block(0, 0))
            del jac_l
        prec = _gmg_from_mats(stack, mats, cfg)
        x, res = cg(
            A, b, prec, KrylovConfig(method="cg", rtol=rtol, maxiter=maxiter)
        )
        if not res.converged:
            raise LinearSolveFailure(
                LinearSolveStats(
                    False, res.iterations, (), (), res.residual_norm, res.reason
                )
            )
        return x

    return solve


def direct_block_solver():
    """Exact sparse-LU block solve, for small meshes and reference runs."""

    def solve(state, jac: BlockMatrix, rhs: np.ndarray):
        n = len(jac.names)
        rows = [[jac.blocks.get((i, j)) for j in range(n)] for i in range(n)]
        big = sps.bmat(rows, format="csc")
        lu = DirectLU(big)
        x = lu.solve(np.asarray(rhs, dtype=float))
        rnorm = np.linalg.norm(big @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
        stats = LinearSolveStats(
            converged=True,
            outer_iterations=1,
            inner_totals=(0,) * n,
            inner_max=(0,) * n,
            residual_norm=rnorm,
            reason="direct",
        )
        return x, stats

    return solve
