"""Legacy ASCII VTK output of cell data on triangle meshes.

Discontinuous fields are written as per-cell means (scalars and 3-component
vectors with z = 0), which is the honest primitive for DG data.  Output is
byte-stable for identical inputs: fixed float formatting, no timestamps.
"""

import numpy as np

_FLOAT = "%.16e"


def write_vtk(mesh, cell_fields, path):
    """Write a DATASET UNSTRUCTURED_GRID file with CELL_DATA.

    cell_fields: mapping name -> array of shape (ne,) for scalars or
    (ne, 2) / (ne, 3) for vectors (z defaults to 0).
    """
    ne = mesh.n_elements
    lines = []
    lines.append("# vtk DataFile Version 3.0")
    lines.append("driftdg cell data")
    lines.append("ASCII")
    lines.append("DATASET UNSTRUCTURED_GRID")
    lines.append(f"POINTS {mesh.n_vertices} double")
    for x, y in mesh.vertices:
        lines.append(f"{_FLOAT % x} {_FLOAT % y} {_FLOAT % 0.0}")
    lines.append(f"CELLS {ne} {4 * ne}")
    for v0, v1, v2 in mesh.elements:
        lines.append(f"3 {v0} {v1} {v2}")
    lines.append(f"CELL_TYPES {ne}")
    lines.extend(["5"] * ne)
    lines.append(f"CELL_DATA {ne}")
    for name, values in cell_fields.items():
        values = np.asarray(values, dtype=float)
        if values.shape[0] != ne:
            raise ValueError(f"field {name!r}: length {values.shape[0]} != {ne} cells")
        if values.ndim == 1:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_FLOAT % v for v in values)
        else:
            if values.shape[1] == 2:
                values = np.column_stack([values, np.zeros(ne)])
            if values.shape[1] != 3:
                raise ValueError(f"field {name!r}: vectors need 2 or 3 components")
            lines.append(f"VECTORS {name} double")
            lines.extend(" ".join(_FLOAT % c for c in row) for row in values)
    text = "\n".join(lines) + "\n"
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def read_vtk(path):
    """Round-trip reader: returns (points, cells, cell_data dict)."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    it = iter(range(len(tokens)))
    idx = 0

    def line():
        nonlocal idx
        out = tokens[idx]
        idx += 1
        return out

    header = [line() for _ in range(4)]
    if "UNSTRUCTURED_GRID" not in header[3]:
        raise ValueError("not an unstructured-grid VTK file")
    npts = int(line().split()[1])
    points = np.array([[float(c) for c in line().split()] for _ in range(npts)])
    ncells = int(line().split()[1])
    cells = np.array([[int(c) for c in line().split()[1:]] for _ in range(ncells)])
    nt = int(line().split()[1])
    for _ in range(nt):
        line()
    nd = int(line().split()[1])
    data = {}
    while idx < len(tokens):
        head = line().strip()
        if not head:
            continue
        parts = head.split()
        if parts[0] == "SCALARS":
            name = parts[1]
            line()  # LOOKUP_TABLE
            data[name] = np.array([float(line()) for _ in range(nd)])
        elif parts[0] == "VECTORS":
            name = parts[1]
            data[name] = np.array([[float(c) for c in line().split()]
                                   for _ in range(nd)])
        else:
            raise ValueError(f"unexpected attribute line: {head!r}")
    return points, cells, data
