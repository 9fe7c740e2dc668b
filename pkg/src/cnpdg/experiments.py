"""Experiment harnesses behind the command-line tool.

Three runners share one validated configuration tree: a grid-refinement
error study on the manufactured two-ion problem, the parallel-plate
electrodeposition benchmark, and a first-Newton-step comparison of the
concentration-block preconditioners.  Each runner writes schema-stable CSV
files (plus optional VTK fields) into an output directory and returns a
summary dict.  CSV headers are fixed; runs are serial, so outputs are
bit-for-bit reproducible for a given configuration.
"""

from __future__ import annotations

import csv
import dataclasses
import gc
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import DgParams
from .constants import FARADAY
from .fespace import BlockState, interpolate, l2_error
from .mesh import ChannelSpec, build_channel_mesh, build_unit_box_mesh
from .nonlinear import (
    NewtonConfig,
    NonlinearSolveError,
    initial_guess,
    newton_solve,
)
from .physics import (
    IonSystem,
    Species,
    bortels_cuso4_system,
    mms_problem,
    reactor_problem,
)
from .postprocess import (
    dimensional_currents,
    electrode_currents,
    electrode_flux_density,
    negative_concentration_report,
    recovered_inlet_values,
)
from .solvers import (
    LinearSolveFailure,
    SolverStackConfig,
    StackLinearSolver,
    build_level_stack,
    stack_phi_solver,
)
from .vtk import write_vtk


class ConfigError(ValueError):
    """Raised for malformed, unknown, or inconsistent configuration input."""


# ---------------------------------------------------------------------------
# configuration tree


@dataclass(frozen=True)
class DgOptions:
    """Discretization knobs forwarded to the assembler."""

    eta: float = 4.0
    quadrature: int | None = None

    def params(self) -> DgParams:
        return DgParams(eta=self.eta, quadrature=self.quadrature)


@dataclass(frozen=True)
class NewtonOptions:
    rtol: float = 1e-6
    atol: float = 0.0
    max_iterations: int = 50

    def config(self) -> NewtonConfig:
        return NewtonConfig(
            rtol=self.rtol, atol=self.atol, max_iterations=self.max_iterations
        )


@dataclass(frozen=True)
class SolverOptions:
    """Outer Krylov, per-block inner solves, and preconditioner choice.

    preconditioner selects how the concentration blocks are handled inside
    the fieldsplit: "gmg" (multigrid V-cycle) or "asm" (one-level
    overlapping additive Schwarz with ILU0 subdomain solves).
    """

    preconditioner: str = "gmg"
    outer_rtol: float = 1e-3
    outer_restart: int = 30
    outer_maxiter: int = 200
    inner_rtol: float = 1e-2
    inner_maxiter: int = 50
    n_subdomains: int | None = 4
    smoother_subdomains: int | None = 1
    overlap: int = 1
    smoother_damping: float = 1.0

    def __post_init__(self):
        if self.preconditioner not in ("gmg", "asm"):
            raise ValueError(
                f"preconditioner must be 'gmg' or 'asm', got {self.preconditioner!r}"
            )

    def stack_config(self, n_threads: int = 1) -> SolverStackConfig:
        return SolverStackConfig(
            outer_rtol=self.outer_rtol,
            outer_restart=self.outer_restart,
            outer_maxiter=self.outer_maxiter,
            inner_rtol=self.inner_rtol,
            inner_maxiter=self.inner_maxiter,
            conc_method=self.preconditioner,
            n_subdomains=self.n_subdomains,
            smoother_subdomains=self.smoother_subdomains,
            overlap=self.overlap,
            smoother_damping=self.smoother_damping,
            n_threads=n_threads,
        )


@dataclass(frozen=True)
class MmsOptions:
    """Grid-refinement study on the manufactured problem."""

    dim: int = 3
    coarse_per_axis: int = 4
    n_levels: int = 4
    initial_guess: str = "linearized"  # or "exact": interpolate the target

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.coarse_per_axis < 1:
            raise ValueError("coarse_per_axis must be >= 1")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.initial_guess not in ("linearized", "exact"):
            raise ValueError(
                "initial_guess must be 'linearized' or 'exact', "
                f"got {self.initial_guess!r}"
            )


@dataclass(frozen=True)
class SpeciesRow:
    name: str
    z: float
    D: float
    c_in: float


@dataclass(frozen=True)
class IonsOptions:
    """Electrolyte: a named preset, or an inline species table."""

    preset: str | None = "bortels-cuso4"
    species: tuple[SpeciesRow, ...] = ()
    eliminated_index: int | None = None
    temperature: float = 298.15

    def __post_init__(self):
        if self.preset is not None and self.species:
            raise ValueError("give either a preset or an inline species table")
        if self.preset is None:
            if len(self.species) < 2:
                raise ValueError("an inline table needs at least two species")
            if self.eliminated_index is None:
                raise ValueError("an inline table needs eliminated_index")
            if not 0 <= self.eliminated_index < len(self.species):
                raise ValueError("eliminated_index out of range")
        elif self.preset != "bortels-cuso4":
            raise ValueError(f"unknown ion-system preset {self.preset!r}")

    def system(self) -> IonSystem | None:
        """The inline IonSystem, or None for the default preset."""
        if self.preset is not None:
            return None
        return IonSystem(
            species=tuple(
                Species(name=s.name, z=s.z, D=s.D, c_in=s.c_in)
                for s in self.species
            ),
            eliminated_index=self.eliminated_index,
            T=self.temperature,
        )


@dataclass(frozen=True)
class ReactorOptions:
    """Channel geometry, electrolyte, and electrode kinetics."""

    L_a: float = 0.05
    L: float = 0.02
    L_b: float = 0.05
    h: float = 0.01
    w: float = 0.06
    nx: int = 16
    ny: int = 4
    nz: int = 2
    grading_strength: float = 0.5
    refinements: int = 2
    u_avg: float = 0.03
    j0_bar: float = 30.0
    phi_app_cathode: float = 0.03
    phi_app_anode: float = 0.0
    gamma: float = 1.0
    alpha1: float = 0.5
    alpha2: float = 0.5
    n_electrons: int = 2
    ions: IonsOptions = field(default_factory=IonsOptions)

    def __post_init__(self):
        if self.refinements < 0:
            raise ValueError("refinements must be >= 0")

    def channel(self) -> ChannelSpec:
        return ChannelSpec(
            L_a=self.L_a,
            L=self.L,
            L_b=self.L_b,
            h=self.h,
            w=self.w,
            nx=self.nx,
            ny=self.ny,
            nz=self.nz,
            grading_strength=self.grading_strength,
        )


@dataclass(frozen=True)
class SolvecheckOptions:
    """Preconditioner-comparison grid on first-Newton-step systems."""

    refinements: tuple[int, ...] = (1, 2)
    subdomains: tuple[int, ...] = (1, 4, 16, 64)
    outer_maxiter: int = 10
    inner_maxiter: int = 100

    def __post_init__(self):
        if not self.refinements:
            raise ValueError("refinements must be nonempty")
        if any(r < 0 for r in self.refinements):
            raise ValueError("refinements must be >= 0")
        if not self.subdomains or any(s < 1 for s in self.subdomains):
            raise ValueError("subdomains must be positive")


_SECTIONS = {
    "dg": DgOptions,
    "newton": NewtonOptions,
    "solver": SolverOptions,
    "mms": MmsOptions,
    "reactor": ReactorOptions,
    "solvecheck": SolvecheckOptions,
}


@dataclass(frozen=True)
class RunConfig:
    """One experiment invocation, schema-validated before any computation."""

    kind: str
    p: int = 1
    dg: DgOptions = field(default_factory=DgOptions)
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    solver: SolverOptions = field(default_factory=SolverOptions)
    mms: MmsOptions = field(default_factory=MmsOptions)
    reactor: ReactorOptions = field(default_factory=ReactorOptions)
    solvecheck: SolvecheckOptions = field(default_factory=SolvecheckOptions)
    write_fields: bool = False
    deterministic: bool = False
    n_threads: int = 1

    def __post_init__(self):
        if self.kind not in ("mms", "reactor", "solvecheck"):
            raise ValueError(
                f"kind must be mms, reactor, or solvecheck, got {self.kind!r}"
            )
        if self.p not in (1, 2, 3):
            raise ValueError(f"p must be 1, 2, or 3, got {self.p}")
        if self.n_threads < 1:
            raise ValueError("n_threads must be >= 1")

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        return _build_section(cls, data, "config")


def _build_section(cls, data, where: str):
    """Instantiate a config dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{where}.{name}"
        if cls is RunConfig and name in _SECTIONS:
            kwargs[name] = _build_section(_SECTIONS[name], value, sub)
        elif cls is ReactorOptions and name == "ions":
            kwargs[name] = _build_section(IonsOptions, value, sub)
        elif cls is IonsOptions and name == "species":
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list of species rows")
            kwargs[name] = tuple(
                _build_section(SpeciesRow, row, f"{sub}[{i}]")
                for i, row in enumerate(value)
            )
        elif cls is SolvecheckOptions and name in ("refinements", "subdomains"):
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list of integers")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


# ---------------------------------------------------------------------------
# CSV helpers


def _write_csv(path: Path, rows: list[dict], header: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)


def _solver_log_header(field_names) -> list[str]:
    return [
        "level",
        "iteration",
        "residual_norm",
        "outer_iterations",
        "backtracks",
        "step_length",
    ] + [f"inner_{n}" for n in field_names]


def _log_rows(level: int, report) -> list[dict]:
    rows = report.rows()
    for row in rows:
        row["level"] = level
    return rows


# ---------------------------------------------------------------------------
# manufactured-solution refinement study


def run_mms(cfg: RunConfig, out_dir) -> dict:
    """Solve the manufactured problem on nested refinements and tabulate
    L2 errors and observed rates per field.

    Writes convergence.csv, summary.csv, solver_log.csv, and (optionally)
    fields_levelK.vtk.  A nonlinear failure on any level persists the rows
    collected so far before re-raising.
    """
    out_dir = Path(out_dir)
    opts = cfg.mms
    problem, exact = mms_problem(opts.dim)
    coarse = build_unit_box_mesh(opts.dim, opts.coarse_per_axis)
    params = cfg.dg.params()
    stack_cfg = cfg.solver.stack_config(cfg.n_threads)
    newton_cfg = cfg.newton.config()
    names = problem.names

    conv_header = (
        ["level", "elements", "dofs"]
        + [f"err_{n}" for n in names]
        + [f"rate_{n}" for n in names]
    )
    sum_header = [
        "level",
        "elements",
        "dofs",
        "newton_iterations",
        "converged",
        "wall_time_s",
    ]
    conv_rows: list[dict] = []
    sum_rows: list[dict] = []
    log_rows: list[dict] = []
    prev_errors = None

    def persist():
        _write_csv(out_dir / "convergence.csv", conv_rows, conv_header)
        _write_csv(out_dir / "summary.csv", sum_rows, sum_header)
        _write_csv(
            out_dir / "solver_log.csv", log_rows, _solver_log_header(names)
        )

    for level in range(opts.n_levels):
        t0 = time.perf_counter()
        stack = build_level_stack(coarse, level, cfg.p, problem, params, stack_cfg)
        asmb = stack.assembler
        if opts.initial_guess == "exact":
            fields = np.stack(
                [interpolate(stack.space, exact[n]) for n in names]
            )
            x0 = BlockState(space=stack.space, fields=fields, names=names)
        else:
            x0 = initial_guess(
                asmb, phi_solver=stack_phi_solver(stack, stack_cfg)
            )
        solver = StackLinearSolver(stack, stack_cfg)
        try:
            x, report = newton_solve(
                asmb.residual, asmb.jacobian, x0, solver, newton_cfg
            )
        except NonlinearSolveError as exc:
            report = getattr(exc, "report", None)
            if report is not None:
                sum_rows.append(
                    {
                        "level": level,
                        "elements": stack.space.mesh.n_elements,
                        "dofs": asmb.n_dofs,
                        "newton_iterations": report.iterations,
                        "converged": False,
                        "wall_time_s": f"{time.perf_counter() - t0:.3f}",
                    }
                )
                log_rows.extend(_log_rows(level, report))
            persist()
            raise

        errors = [l2_error(stack.space, x.fields[i], exact[n])
                  for i, n in enumerate(names)]
        row = {
            "level": level,
            "elements": stack.space.mesh.n_elements,
            "dofs": asmb.n_dofs,
        }
        for n, e in zip(names, errors):
            row[f"err_{n}"] = f"{e:.12e}"
        for i, n in enumerate(names):
            row[f"rate_{n}"] = (
                f"{np.log2(prev_errors[i] / errors[i]):.6f}"
                if prev_errors is not None
                else ""
            )
        conv_rows.append(row)
        sum_rows.append(
            {
                "level": level,
                "elements": stack.space.mesh.n_elements,
                "dofs": asmb.n_dofs,
                "newton_iterations": report.iterations,
                "converged": report.converged,
                "wall_time_s": f"{time.perf_counter() - t0:.3f}",
            }
        )
        log_rows.extend(_log_rows(level, report))
        if cfg.write_fields:
            write_vtk(
                out_dir / f"fields_level{level}.vtk",
                stack.space,
                {n: x.fields[i] for i, n in enumerate(names)},
            )
        prev_errors = errors
        del stack, asmb, x0, solver, x, report
        gc.collect()

    persist()
    last = conv_rows[-1]
    return {
        "levels": opts.n_levels,
        "errors": {n: float(last[f"err_{n}"]) for n in names},
        "rates": {
            n: (float(last[f"rate_{n}"]) if last[f"rate_{n}"] else None)
            for n in names
        },
    }


# ---------------------------------------------------------------------------
# parallel-plate reactor benchmark


def run_reactor(cfg: RunConfig, out_dir) -> dict:
    """Solve the electrodeposition benchmark and report dimensional results.

    Writes summary.csv (integrated currents, inlet trace, Newton stats),
    solver_log.csv (per-iteration solver record), electrodes.csv (local
    current density over both electrode faces), and fields_levelK.vtk with
    dimensional fields on the finest level.
    """
    out_dir = Path(out_dir)
    opts = cfg.reactor
    problem, scales, channel_hat = reactor_problem(
        channel=opts.channel(),
        u_avg=opts.u_avg,
        j0_bar=opts.j0_bar,
        phi_app_anode=opts.phi_app_anode,
        phi_app_cathode=opts.phi_app_cathode,
        system=opts.ions.system(),
        gamma=opts.gamma,
        alpha1=opts.alpha1,
        alpha2=opts.alpha2,
        n_electrons=opts.n_electrons,
    )
    system = opts.ions.system()
    if system is None:
        system = bortels_cuso4_system()
    params = cfg.dg.params()
    stack_cfg = cfg.solver.stack_config(cfg.n_threads)
    mesh = build_channel_mesh(channel_hat)
    stack = build_level_stack(
        mesh, opts.refinements, cfg.p, problem, params, stack_cfg
    )
    asmb = stack.assembler
    t0 = time.perf_counter()
    x0 = initial_guess(asmb, phi_solver=stack_phi_solver(stack, stack_cfg))
    solver = StackLinearSolver(stack, stack_cfg)
    names = problem.names

    try:
        x, report = newton_solve(
            asmb.residual, asmb.jacobian, x0, solver, cfg.newton.config()
        )
    except NonlinearSolveError as exc:
        report = getattr(exc, "report", None)
        if report is not None:
            _write_csv(
                out_dir / "solver_log.csv",
                _log_rows(stack.n_levels - 1, report),
                _solver_log_header(names),
            )
        raise
    wall = time.perf_counter() - t0

    currents = electrode_currents(asmb, x)
    dim_currents = dimensional_currents(asmb, x, scales)
    cancellation = abs(currents["anode"] + currents["cathode"]) / max(
        abs(currents["anode"]), abs(currents["cathode"])
    )
    inlet = recovered_inlet_values(asmb, x)
    c_in_elim = system.species[system.eliminated_index].c_in
    inlet_molar = inlet * c_in_elim / 1000.0  # mol/m^3 -> M
    negative = negative_concentration_report(asmb, x)

    level = stack.n_levels - 1
    summary_row = {
        "elements": stack.space.mesh.n_elements,
        "dofs": asmb.n_dofs,
        "newton_iterations": report.iterations,
        "converged": report.converged,
        "residual_norm": f"{report.residual_norms[-1]:.6e}",
        "current_cathode_A": f"{dim_currents['cathode']:.9e}",
        "current_anode_A": f"{dim_currents['anode']:.9e}",
        "current_cancellation_rel": f"{cancellation:.6e}",
        "inlet_recovered_min_M": f"{inlet_molar.min():.12f}",
        "inlet_recovered_max_M": f"{inlet_molar.max():.12f}",
        "min_concentration_warning": "" if negative is None else repr(negative),
        "wall_time_s": f"{wall:.3f}",
    }
    _write_csv(
        out_dir / "summary.csv", [summary_row], list(summary_row.keys())
    )
    _write_csv(
        out_dir / "solver_log.csv",
        _log_rows(level, report),
        _solver_log_header(names),
    )

    flux = electrode_flux_density(asmb, x)
    electrode_rows = []
    for name in sorted(flux):
        entry = flux[name]
        ox = entry["oxidant"]
        # scaled species flux -> A/m^2: F * z_ox * c_in_ox * u_avg
        to_current = (
            FARADAY
            * scales.c_ref
            * scales.u_avg
            * float(problem.charge_w_ret[ox])
        )
        pts = scales.x(entry["points"])
        for p_row, j in zip(pts, entry["flux"] * to_current):
            electrode_rows.append(
                {
                    "electrode": name,
                    "x_m": f"{p_row[0]:.9e}",
                    "y_m": f"{p_row[1]:.9e}",
                    "z_m": f"{p_row[2]:.9e}",
                    "current_density_A_m2": f"{j:.9e}",
                }
            )
    _write_csv(
        out_dir / "electrodes.csv",
        electrode_rows,
        ["electrode", "x_m", "y_m", "z_m", "current_density_A_m2"],
    )

    fields = {"phi_V": scales.phi(x.fields[0])}
    for i, name in enumerate(names[1:]):
        c_in = system.species[system.retained[i]].c_in
        fields[f"c_{name}_M"] = x.fields[1 + i] * c_in / 1000.0
    recovered = problem.recover_eliminated(x.fields[1:])
    fields[
        f"c_{system.species[system.eliminated_index].name}_M"
    ] = recovered * c_in_elim / 1000.0
    write_vtk(out_dir / f"fields_level{level}.vtk", stack.space, fields)

    return {
        "newton_iterations": report.iterations,
        "currents_A": dim_currents,
        "cancellation": float(cancellation),
        "inlet_recovered_M": (float(inlet_molar.min()), float(inlet_molar.max())),
        "negative_concentrations": negative,
    }


# ---------------------------------------------------------------------------
# preconditioner comparison on first-Newton-step systems


def run_solvecheck(cfg: RunConfig, out_dir) -> dict:
    """Compare concentration-block preconditioners on the linearized system.

    For each refinement level of the reactor channel, assembles the Jacobian
    at the initial guess and solves the first Newton step with the multigrid
    preconditioner and with one-level additive Schwarz at each configured
    subdomain count, recording outer iterations, per-block inner iterations
    per application, and wall time into solver_log.csv.
    """
    out_dir = Path(out_dir)
    opts = cfg.solvecheck
    ropts = cfg.reactor
    problem, scales, channel_hat = reactor_problem(
        channel=ropts.channel(),
        u_avg=ropts.u_avg,
        j0_bar=ropts.j0_bar,
        phi_app_anode=ropts.phi_app_anode,
        phi_app_cathode=ropts.phi_app_cathode,
        system=ropts.ions.system(),
    )
    params = cfg.dg.params()
    mesh = build_channel_mesh(channel_hat)
    names = problem.names

    header = (
        ["level", "elements", "dofs", "preconditioner", "n_subdomains",
         "converged", "outer_iterations"]
        + [f"inner_mean_{n}" for n in names]
        + [f"inner_max_{n}" for n in names]
        + ["wall_time_s"]
    )
    rows: list[dict] = []
    gmg_outer: dict[int, int] = {}

    for n_ref in opts.refinements:
        base_cfg = cfg.solver.stack_config(cfg.n_threads)
        stack = build_level_stack(mesh, n_ref, cfg.p, problem, params, base_cfg)
        asmb = stack.assembler
        x0 = initial_guess(asmb, phi_solver=stack_phi_solver(stack, base_cfg))
        jac = asmb.jacobian(x0)
        rhs = -asmb.residual(x0).flat()

        def record(tag: str, nsub, solve_cfg):
            solver = StackLinearSolver(stack, solve_cfg)
            t0 = time.perf_counter()
            try:
                _, stats = solver(x0, jac, rhs)
                converged = True
            except LinearSolveFailure as err:
                stats, converged = err.stats, False
            wall = time.perf_counter() - t0
            row = {
                "level": n_ref,
                "elements": stack.space.mesh.n_elements,
                "dofs": asmb.n_dofs,
                "preconditioner": tag,
                "n_subdomains": nsub,
                "converged": converged,
                "outer_iterations": stats.outer_iterations,
                "wall_time_s": f"{wall:.3f}",
            }
            for i, n in enumerate(names):
                row[f"inner_mean_{n}"] = f"{stats.inner_mean(i):.3f}"
                row[f"inner_max_{n}"] = stats.inner_max[i]
            rows.append(row)
            return stats

        gmg_cfg = dataclasses.replace(
            base_cfg, conc_method="gmg", outer_maxiter=opts.outer_maxiter
        )
        stats = record("gmg", base_cfg.resolved_smoother_subdomains(), gmg_cfg)
        gmg_outer[n_ref] = stats.outer_iterations

        for nsub in opts.subdomains:
            asm_cfg = dataclasses.replace(
                base_cfg,
                conc_method="asm",
                n_subdomains=nsub,
                inner_maxiter=opts.inner_maxiter,
                outer_maxiter=opts.outer_maxiter,
            )
            record("asm", nsub, asm_cfg)

        del stack, asmb, x0, jac, rhs
        gc.collect()

    _write_csv(out_dir / "solver_log.csv", rows, header)
    refs = sorted(gmg_outer)
    growth = (
        gmg_outer[refs[-1]] / max(1, gmg_outer[refs[0]])
        if len(refs) > 1
        else 1.0
    )
    summary_row = {
        "levels": len(refs),
        "gmg_outer_first": gmg_outer[refs[0]],
        "gmg_outer_last": gmg_outer[refs[-1]],
        "gmg_outer_growth": f"{growth:.3f}",
    }
    _write_csv(out_dir / "summary.csv", [summary_row], list(summary_row.keys()))
    return {"rows": rows, "gmg_outer_growth": float(growth)}
