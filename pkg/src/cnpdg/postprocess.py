"""Solution postprocessing: electrode currents, boundary traces, and
redimensionalization of the scaled fields."""

from __future__ import annotations

import numpy as np

from .assembly import Assembler, recover_eliminated
from .constants import FARADAY
from .mesh import BoundaryTag

_ELECTRODE_NAMES = {
    int(BoundaryTag.ELECTRODE_ANODE): "anode",
    int(BoundaryTag.ELECTRODE_CATHODE): "cathode",
}


def _fields_of(state) -> np.ndarray:
    return np.asarray(getattr(state, "fields", state), dtype=float)


def boundary_values(assembler: Assembler, coeffs: np.ndarray, tag) -> np.ndarray:
    """Trace of a single scalar field on all faces with the given tag.

    coeffs is a per-dof vector on the assembler's space; the result is a
    flat array of values at every face quadrature point of that tag.
    """
    coeffs = np.asarray(coeffs, dtype=float).reshape(
        assembler.n_el, assembler.ndpe
    )
    out = []
    for g in assembler.boundary:
        if int(g.tag) != int(tag):
            continue
        out.append(np.einsum("fi,iq->fq", coeffs[g.elems], g.vb).ravel())
    if not out:
        return np.empty(0)
    return np.concatenate(out)


def boundary_quadrature(assembler: Assembler, tag):
    """(points, weights) of the quadrature on all faces with the given tag."""
    pts, wts = [], []
    for g in assembler.boundary:
        if int(g.tag) != int(tag):
            continue
        pts.append(g.points.reshape(-1, g.points.shape[-1]))
        wts.append(np.broadcast_to(g.w, g.points.shape[:2]).ravel())
    if not pts:
        dim = assembler.space.mesh.dim
        return np.empty((0, dim)), np.empty(0)
    return np.concatenate(pts), np.concatenate(wts)


def electrode_flux_density(assembler: Assembler, state) -> dict[str, dict]:
    """Per-electrode oxidant flux density at face quadrature points.

    Returns {"anode"|"cathode": {"points", "weights", "flux"}} in scaled
    units; flux is the Butler-Volmer normal flux of the reacting species.
    """
    fields = assembler.check_state(_fields_of(state))
    F = fields.reshape(assembler.n_fields, assembler.n_el, assembler.ndpe)
    out: dict[str, dict] = {}
    for g in assembler.boundary:
        name = _ELECTRODE_NAMES.get(int(g.tag))
        if name is None:
            continue
        kin = g.kinetics
        ox = 1 + kin.oxidant_field
        c_ox = np.einsum("fi,iq->fq", F[ox][g.elems], g.vb)
        phi = np.einsum("fi,iq->fq", F[0][g.elems], g.vb)
        gh, _, _ = kin.flux(c_ox, phi, g.j0)
        entry = out.setdefault(
            name, {"points": [], "weights": [], "flux": [], "oxidant": ox - 1}
        )
        entry["points"].append(g.points.reshape(-1, g.points.shape[-1]))
        entry["weights"].append(np.broadcast_to(g.w, gh.shape).ravel())
        entry["flux"].append(gh.ravel())
    for entry in out.values():
        entry["points"] = np.concatenate(entry["points"])
        entry["weights"] = np.concatenate(entry["weights"])
        entry["flux"] = np.concatenate(entry["flux"])
    return out


def electrode_currents(assembler: Assembler, state) -> dict[str, float]:
    """Integrated charge flux through each electrode, in scaled units.

    The integrand is the charge-weighted Butler-Volmer flux — exactly the
    electrode term of the assembled charge equation — so on a converged
    solution the anode and cathode values cancel.
    """
    prob = assembler.problem
    densities = electrode_flux_density(assembler, state)
    out = {}
    for name, entry in densities.items():
        cw = prob.charge_w_ret[entry["oxidant"]]
        out[name] = float(cw * (entry["weights"] * entry["flux"]).sum())
    return out


def dimensional_currents(
    assembler: Assembler, state, scales
) -> dict[str, float]:
    """Electrode currents in amperes.

    Fluxes are scaled by u_avg * c_in per species and areas by L^2, so the
    integrated charge flux redimensionalizes by F * c_ref * u_avg * L^2.
    """
    current_scale = FARADAY * scales.c_ref * scales.u_avg * scales.L**2
    return {
        name: current_scale * value
        for name, value in electrode_currents(assembler, state).items()
    }


def recovered_inlet_values(assembler: Assembler, state) -> np.ndarray:
    """Trace of the recovered (eliminated-species) field on the inlet."""
    full = recover_eliminated(_fields_of(state), assembler.problem)
    return boundary_values(assembler, full[-1], BoundaryTag.INLET)


def negative_concentration_report(assembler: Assembler, state):
    """(min value, field name, location) over all concentrations, or None.

    Concentrations include the recovered eliminated species; locations are
    the mesh coordinates of the offending nodal dof.
    """
    fields = _fields_of(state)
    prob = assembler.problem
    full = recover_eliminated(fields, prob)
    names = list(assembler.names[1:]) + ["recovered"]
    coords = assembler.space.node_coordinates().reshape(
        -1, assembler.space.mesh.dim
    )
    worst = None
    for row, name in zip(full, names):
        i = int(np.argmin(row))
        if row[i] < 0.0 and (worst is None or row[i] < worst[0]):
            worst = (float(row[i]), name, tuple(coords[i]))
    return worst
