"""Legacy ASCII VTK output of nodal fields on the hexahedral mesh."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .meshdd import HexMesh

VTK_HEXAHEDRON = 12


def write_vtk(mesh: HexMesh, state, path, title: str = "weldbench") -> Path:
    """Write temperature and displacement point data; returns the path written."""
    path = Path(path)
    u = np.asarray(state.u, dtype=float).reshape(mesh.n_nodes, 3)
    theta = np.asarray(state.theta, dtype=float).reshape(mesh.n_nodes)
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.node_coords]
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {9 * ne}")
    lines += ["8 " + " ".join(map(str, c)) for c in mesh.elem_conn.tolist()]
    lines.append(f"CELL_TYPES {ne}")
    lines += [str(VTK_HEXAHEDRON)] * ne
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    lines += ["SCALARS temperature double 1", "LOOKUP_TABLE default"]
    lines += [f"{t:.17g}" for t in theta]
    lines.append("VECTORS displacement double")
    lines += [f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in u]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def read_vtk_point_data(path) -> dict[str, np.ndarray]:
    """Read back points and point arrays from a file written by :func:`write_vtk`."""
    tokens = Path(path).read_text().split("\n")
    out: dict[str, np.ndarray] = {}
    i = 0
    n_points = 0
    while i < len(tokens):
        line = tokens[i].split()
        if not line:
            i += 1
            continue
        head = line[0]
        if head == "POINTS":
            n_points = int(line[1])
            out["points"] = np.loadtxt(tokens[i + 1:i + 1 + n_points], ndmin=2)
            i += 1 + n_points
        elif head == "CELLS":
            n = int(line[1])
            out["cells"] = np.loadtxt(tokens[i + 1:i + 1 + n], dtype=np.int64, ndmin=2)[:, 1:]
            i += 1 + n
        elif head == "CELL_TYPES":
            n = int(line[1])
            out["cell_types"] = np.array([int(t) for t in tokens[i + 1:i + 1 + n]])
            i += 1 + n
        elif head == "SCALARS":
            out[line[1]] = np.array([float(t) for t in tokens[i + 2:i + 2 + n_points]])
            i += 2 + n_points
        elif head == "VECTORS":
            out[line[1]] = np.loadtxt(tokens[i + 1:i + 1 + n_points], ndmin=2)
            i += 1 + n_points
        else:
            i += 1
    return out
