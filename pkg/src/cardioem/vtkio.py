"""Legacy-ASCII VTK unstructured-grid writer for meshes and point fields."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh

_VTK_CELL_TYPE = {2: 9, 3: 12}  # quad, hexahedron


def write_vtk(
    path,
    mesh: Mesh,
    point_scalars: dict[str, np.ndarray] | None = None,
    point_vectors: dict[str, np.ndarray] | None = None,
    displaced_by: np.ndarray | None = None,
    title: str = "cardioem output",
):
    """Write mesh and per-vertex fields as a legacy ASCII VTK file (LF endings).

    displaced_by: optional (nv, dim) displacement added to the coordinates
    (warped snapshot); the displacement itself should also be passed in
    point_vectors if it is to be inspected.
    """
    coords = np.zeros((mesh.num_vertices, 3))
    pts = mesh.vertices.copy()
    if displaced_by is not None:
        pts = pts + displaced_by.reshape(mesh.num_vertices, mesh.dim)
    coords[:, : mesh.dim] = pts

    nn = mesh.cells.shape[1]
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.num_vertices} double",
    ]
    for p in coords:
        lines.append(f"{p[0]:.10g} {p[1]:.10g} {p[2]:.10g}")
    lines.append(f"CELLS {mesh.num_cells} {mesh.num_cells * (nn + 1)}")
    for c in mesh.cells:
        lines.append(str(nn) + " " + " ".join(str(int(v)) for v in c))
    lines.append(f"CELL_TYPES {mesh.num_cells}")
    ct = _VTK_CELL_TYPE[mesh.dim]
    lines.extend([str(ct)] * mesh.num_cells)

    if point_scalars or point_vectors:
        lines.append(f"POINT_DATA {mesh.num_vertices}")
        for name, arr in (point_scalars or {}).items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            for v in np.asarray(arr).ravel():
                lines.append(f"{v:.10g}")
        for name, arr in (point_vectors or {}).items():
            lines.append(f"VECTORS {name} double")
            a = np.zeros((mesh.num_vertices, 3))
            a[:, : mesh.dim] = np.asarray(arr).reshape(mesh.num_vertices, mesh.dim)
            for v in a:
                lines.append(f"{v[0]:.10g} {v[1]:.10g} {v[2]:.10g}")

    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
