"""Legacy-ASCII VTK output for box meshes and DG fields, plus a minimal
reader used to verify round-trips.

Each element is written as its own VTK cell (quad or hexahedron) with
distinct points, so the discontinuous nodal values survive unaveraged.
For p >= 2 the element's full nodal lattice is subdivided into p^dim
sub-cells.  Cell data carries the element ids; point data carries the
fields.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .fespace import FeSpace

_VTK_QUAD = 9
_VTK_HEXAHEDRON = 12


def _cell_corner_offsets(p: int, dim: int) -> np.ndarray:
    """Corner node indices of each p-subdivision cell, VTK corner order."""
    stride_y = p + 1
    cells = []
    if dim == 2:
        for j in range(p):
            for i in range(p):
                base = j * stride_y + i
                cells.append(
                    [base, base + 1, base + 1 + stride_y, base + stride_y]
                )
    else:
        stride_z = (p + 1) * (p + 1)
        for k in range(p):
            for j in range(p):
                for i in range(p):
                    b = k * stride_z + j * stride_y + i
                    quad = [b, b + 1, b + 1 + stride_y, b + stride_y]
                    cells.append(quad + [v + stride_z for v in quad])
    return np.asarray(cells, dtype=np.int64)


def write_vtk(
    path,
    space: FeSpace,
    fields: dict[str, np.ndarray],
    cell_data: dict[str, np.ndarray] | None = None,
    title: str = "cnpdg fields",
) -> Path:
    """Write nodal DG fields as an unstructured legacy-ASCII VTK file.

    fields maps name -> per-dof vector; cell_data maps name -> per-element
    vector (e.g. subdomain ids).  Returns the written path.
    """
    path = Path(path)
    mesh = space.mesh
    dim, p = mesh.dim, space.p
    nd = space.dofs_per_element
    n_el = mesh.n_elements

    coords = space.node_coordinates().reshape(-1, dim)
    if dim == 2:
        coords = np.column_stack([coords, np.zeros(len(coords))])

    offsets = _cell_corner_offsets(p, dim)
    cells_per_el = len(offsets)
    corners = offsets.shape[1]
    base = (np.arange(n_el, dtype=np.int64) * nd)[:, None, None]
    conn = (base + offsets[None, :, :]).reshape(-1, corners)
    cell_type = _VTK_QUAD if dim == 2 else _VTK_HEXAHEDRON

    for name, vec in fields.items():
        if np.asarray(vec).shape != (space.n_dofs,):
            raise ValueError(
                f"field '{name}' has shape {np.shape(vec)}, "
                f"expected ({space.n_dofs},)"
            )

    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(coords)} double",
    ]
    lines.extend(" ".join(f"{v:.10g}" for v in row) for row in coords)
    n_cells = len(conn)
    lines.append(f"CELLS {n_cells} {n_cells * (corners + 1)}")
    lines.extend(
        f"{corners} " + " ".join(str(v) for v in row) for row in conn
    )
    lines.append(f"CELL_TYPES {n_cells}")
    lines.extend(str(cell_type) for _ in range(n_cells))

    lines.append(f"POINT_DATA {len(coords)}")
    for name, vec in fields.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{v:.10g}" for v in np.asarray(vec, dtype=float))

    if cell_data:
        lines.append(f"CELL_DATA {n_cells}")
        for name, vec in cell_data.items():
            vec = np.asarray(vec)
            if vec.shape != (n_el,):
                raise ValueError(
                    f"cell data '{name}' has shape {vec.shape}, "
                    f"expected ({n_el},)"
                )
            per_cell = np.repeat(vec, cells_per_el)
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.10g}" for v in per_cell.astype(float))

    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk(path) -> dict:
    """Parse a legacy-ASCII unstructured VTK file written by write_vtk.

    Returns {"points", "cells", "cell_types", "point_data", "cell_data"}.
    """
    tokens_iter = iter(Path(path).read_text().split("\n"))
    out = {"point_data": {}, "cell_data": {}}

    def data_lines(n):
        vals = []
        while len(vals) < n:
            vals.extend(next(tokens_iter).split())
        return vals

    section = None
    for line in tokens_iter:
        parts = line.split()
        if not parts:
            continue
        key = parts[0].upper()
        if key == "POINTS":
            n = int(parts[1])
            vals = np.array(data_lines(3 * n), dtype=float)
            out["points"] = vals.reshape(n, 3)
        elif key == "CELLS":
            n, total = int(parts[1]), int(parts[2])
            vals = np.array(data_lines(total), dtype=np.int64)
            cells, i = [], 0
            for _ in range(n):
                c = vals[i]
                cells.append(vals[i + 1 : i + 1 + c])
                i += 1 + c
            out["cells"] = np.asarray(cells)
        elif key == "CELL_TYPES":
            n = int(parts[1])
            out["cell_types"] = np.array(data_lines(n), dtype=np.int64)
        elif key == "POINT_DATA":
            section = "point_data"
            out["_n_" + section] = int(parts[1])
        elif key == "CELL_DATA":
            section = "cell_data"
            out["_n_" + section] = int(parts[1])
        elif key == "SCALARS":
            name = parts[1]
            next(tokens_iter)  # LOOKUP_TABLE line
            n = out["_n_" + section]
            out[section][name] = np.array(data_lines(n), dtype=float)
    out.pop("_n_point_data", None)
    out.pop("_n_cell_data", None)
    return out
