"""Newton's method with backtracking line search over the block system.

The loop is generic over callbacks: residual_fn(state) -> BlockResidual,
jacobian_fn(state) -> BlockMatrix, and a linear solver
(state, jacobian, rhs) -> (delta, LinearSolveStats).  An Assembler's bound
methods satisfy the first two directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import Assembler
from .fespace import BlockState
from .linalg import DirectLU, KrylovConfig, cg
from .mesh import BoundaryTag
from .solvers import LinearSolveFailure, LinearSolveStats


@dataclass(frozen=True)
class NewtonConfig:
    rtol: float = 1e-6
    atol: float = 0.0
    max_iterations: int = 50
    ls_sufficient_decrease: float = 1e-4
    ls_ratio: float = 0.5
    ls_max_backtracks: int = 25

    def __post_init__(self):
        if self.rtol <= 0.0:
            raise ValueError("rtol must be positive")
        if self.atol < 0.0:
            raise ValueError("atol must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.ls_ratio < 1.0:
            raise ValueError("backtracking ratio must lie in (0, 1)")
        if self.ls_sufficient_decrease <= 0.0:
            raise ValueError("sufficient-decrease factor must be positive")


class NonlinearSolveError(RuntimeError):
    """Base class for Newton-loop failures."""


class LineSearchError(NonlinearSolveError):
    """Backtracking exhausted without sufficient decrease."""


class MaxIterationsError(NonlinearSolveError):
    """Newton hit its iteration cap before reaching tolerance."""


class LinearSolveError(NonlinearSolveError):
    """The inner linear solve failed; carries the solve stats."""

    def __init__(self, iteration: int, stats: LinearSolveStats):
        self.iteration = iteration
        self.stats = stats
        super().__init__(
            f"linear solve failed at Newton iteration {iteration}: "
            f"relative residual {stats.residual_norm:.3e} ({stats.reason})"
        )


@dataclass
class SolveReport:
    """Per-iteration record of one Newton solve.

    residual_norms has one entry per residual evaluation of an accepted
    state, i.e. len = iterations + 1 (the initial norm included).  The
    per-iteration lists (outer_iterations, inner_iterations, backtracks,
    step_lengths) each have len = iterations.
    """

    field_names: tuple[str, ...]
    converged: bool = False
    iterations: int = 0
    residual_norms: list[float] = field(default_factory=list)
    outer_iterations: list[int] = field(default_factory=list)
    inner_iterations: list[tuple[int, ...]] = field(default_factory=list)
    backtracks: list[int] = field(default_factory=list)
    step_lengths: list[float] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def total_outer_iterations(self) -> int:
        return int(sum(self.outer_iterations))

    def total_inner_iterations(self, i: int) -> int:
        return int(sum(t[i] for t in self.inner_iterations))

    def summary(self) -> str:
        lines = [
            f"newton iterations : {self.iterations}"
            f" ({'converged' if self.converged else 'NOT converged'})",
            f"residual norms    : "
            + " ".join(f"{r:.3e}" for r in self.residual_norms),
            f"outer iterations  : {self.outer_iterations}"
            f" (total {self.total_outer_iterations})",
        ]
        for i, name in enumerate(self.field_names):
            lines.append(
                f"inner[{name:<6}]     : total {self.total_inner_iterations(i)}"
            )
        lines.append(f"line searches     : {self.backtracks}")
        lines.append(f"wall time         : {self.wall_time:.3f} s")
        return "\n".join(lines)

    def rows(self) -> list[dict]:
        """Per-iteration dicts, ready for csv.DictWriter."""
        out = []
        for it in range(self.iterations):
            row = {
                "iteration": it + 1,
                "residual_norm": self.residual_norms[it + 1],
                "outer_iterations": self.outer_iterations[it],
                "backtracks": self.backtracks[it],
                "step_length": self.step_lengths[it],
            }
            for i, name in enumerate(self.field_names):
                row[f"inner_{name}"] = self.inner_iterations[it][i]
            out.append(row)
        return out


def newton_solve(
    residual_fn,
    jacobian_fn,
    x0: BlockState,
    linear_solve,
    cfg: NewtonConfig | None = None,
) -> tuple[BlockState, SolveReport]:
    """Damped Newton iteration on the block system.

    Each step solves J delta = -R, then backtracks lambda by the configured
    ratio until ||R(x + lambda*delta)|| <= (1 - c*lambda) ||R(x)||.
    Raises LineSearchError, LinearSolveError, or MaxIterationsError on the
    corresponding failure; the partially filled report rides on the exception
    as the `report` attribute.
    """
    cfg = cfg or NewtonConfig()
    t0 = time.perf_counter()
    x = x0.copy()
    report = SolveReport(field_names=tuple(x.names))

    res = residual_fn(x)
    norm = float(res.norm())
    report.residual_norms.append(norm)
    target = max(cfg.rtol * norm, cfg.atol)

    def _fail(exc):
        report.wall_time = time.perf_counter() - t0
        exc.report = report
        raise exc

    for it in range(cfg.max_iterations):
        if norm <= target:
            report.converged = True
            report.wall_time = time.perf_counter() - t0
            return x, report
        jac = jacobian_fn(x)
        try:
            delta, stats = linear_solve(x, jac, -res.flat())
        except LinearSolveFailure as err:
            _fail(LinearSolveError(it + 1, err.stats))
        delta = np.asarray(delta, dtype=float).reshape(x.fields.shape)
        del jac  # large block matrix; release before the next assembly

        lam = 1.0
        accepted = False
        for bt in range(cfg.ls_max_backtracks + 1):
            trial = BlockState(
                space=x.space, fields=x.fields + lam * delta, names=x.names
            )
            trial_res = residual_fn(trial)
            trial_norm = float(trial_res.norm())
            if np.isfinite(trial_norm) and trial_norm <= (
                1.0 - cfg.ls_sufficient_decrease * lam
            ) * norm:
                accepted = True
                break
            lam *= cfg.ls_ratio
        if not accepted:
            _fail(
                LineSearchError(
                    f"no sufficient decrease after {cfg.ls_max_backtracks} "
                    f"backtracks at Newton iteration {it + 1} "
                    f"(residual {norm:.3e})"
                )
            )

        x, res, norm = trial, trial_res, trial_norm
        report.iterations += 1
        report.residual_norms.append(norm)
        report.outer_iterations.append(stats.outer_iterations)
        report.inner_iterations.append(stats.inner_totals)
        report.backtracks.append(bt)
        report.step_lengths.append(lam)

    if norm <= target:
        report.converged = True
        report.wall_time = time.perf_counter() - t0
        return x, report
    _fail(
        MaxIterationsError(
            f"residual {norm:.3e} above target {target:.3e} after "
            f"{cfg.max_iterations} iterations"
        )
    )


def initial_guess(
    assembler: Assembler,
    *,
    phi_solver=None,
    rtol: float = 1e-2,
    maxiter: int = 500,
) -> BlockState:
    """Inlet concentrations plus a linearized charge solve for the potential.

    Concentrations start at their (scaled) inflow value of one; the potential
    comes from one linear solve of the charge equation frozen at those
    concentrations, i.e. A_pp dphi = -R_p evaluated at (phi=0, c=1).
    phi_solver, when given, is a callable (A, b) -> x (e.g. CG preconditioned
    by the multigrid hierarchy); the default is conjugate gradients, or a
    direct factorization for small systems.  When the potential carries
    neither electrode terms nor boundary data the operator has a constant
    null vector; the right-hand side is then projected and the mean-zero
    solution returned.
    """
    space = assembler.space
    names = assembler.names
    fields = np.ones((len(names), space.n_dofs))
    fields[0] = 0.0

    res = assembler.residual(fields)
    jac = assembler.jacobian(fields)
    A = jac.block(0, 0)
    b = -res.blocks[0]
    del jac, res  # only the potential block and row are needed from here on

    tags = set(int(t) for t in space.mesh.boundary_faces[:, 2])
    pinned = bool(
        tags
        & {
            int(BoundaryTag.EXTERIOR),
            int(BoundaryTag.ELECTRODE_ANODE),
            int(BoundaryTag.ELECTRODE_CATHODE),
        }
    )

    if not pinned:
        b = b - b.mean()

    if phi_solver is not None:
        phi = np.asarray(phi_solver(A, b), dtype=float)
    elif A.shape[0] <= 20000:
        if pinned:
            phi = DirectLU(A).solve(b)
        else:
            phi, result = cg(
                A, b, cfg=KrylovConfig(method="cg", rtol=rtol, maxiter=maxiter)
            )
            if not result.converged:
                raise LinearSolveError(
                    0,
                    LinearSolveStats(
                        False, result.iterations, (), (),
                        result.residual_norm, result.reason,
                    ),
                )
    else:
        phi, result = cg(
            A, b, cfg=KrylovConfig(method="cg", rtol=rtol, maxiter=maxiter)
        )
        if not result.converged:
            raise LinearSolveError(
                0,
                LinearSolveStats(
                    False, result.iterations, (), (),
                    result.residual_norm, result.reason,
                ),
            )

    if not pinned:
        phi = phi - phi.mean()
    fields[0] = phi
    return BlockState(space=space, fields=fields, names=names)
