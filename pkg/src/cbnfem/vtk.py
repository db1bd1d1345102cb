"""Legacy VTK (ASCII, STRUCTURED_POINTS) writer and reader for grid fields.

Floats are written with 17 significant digits so a write/read round trip
returns identical arrays and identical inputs give identical bytes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fem import element_strains
from .mesh import MeshHierarchy


def _fmt(values: np.ndarray, per_line: int) -> str:
    flat = np.asarray(values, dtype=float).reshape(-1, per_line)
    return "".join(" ".join("%.17g" % v for v in row) + "\n" for row in flat)


def cell_strains(hierarchy: MeshHierarchy, u: np.ndarray) -> np.ndarray:
    """Gauss-point averaged engineering strain per fine element."""
    return element_strains(hierarchy.global_counts, hierarchy.fine_size, u).mean(axis=1)


def write_vtk(path: str | Path, hierarchy: MeshHierarchy, displacement: np.ndarray,
              modulus: np.ndarray | None = None, strain: np.ndarray | None = None,
              title: str = "cbnfem field") -> Path:
    """Write point displacements plus optional cell modulus and strain.

    2D fields are padded with a zero third component, as VTK vectors are 3D.
    """
    path = Path(path)
    d = hierarchy.dim
    n_pts, n_cells = hierarchy.n_nodes, hierarchy.n_elements
    u = np.asarray(displacement, dtype=float)
    if u.size != d * n_pts:
        raise ValueError(f"displacement has {u.size} values, grid needs {d * n_pts}")
    u3 = np.zeros((n_pts, 3))
    u3[:, :d] = u.reshape(n_pts, d)
    dims = [c + 1 for c in hierarchy.global_counts] + [1] * (3 - d)
    spacing = list(hierarchy.fine_size) + [1.0] * (3 - d)
    out = ["# vtk DataFile Version 3.0\n", title.replace("\n", " ")[:255] + "\n", "ASCII\n",
           "DATASET STRUCTURED_POINTS\n",
           "DIMENSIONS %d %d %d\n" % tuple(dims),
           "ORIGIN 0 0 0\n",
           "SPACING %s\n" % " ".join("%.17g" % s for s in spacing),
           f"POINT_DATA {n_pts}\n", "VECTORS displacement double\n", _fmt(u3, 3)]
    if modulus is not None or strain is not None:
        out.append(f"CELL_DATA {n_cells}\n")
    if modulus is not None:
        E = np.asarray(modulus, dtype=float)
        if E.size != n_cells:
            raise ValueError(f"modulus has {E.size} values, grid has {n_cells} cells")
        out += ["SCALARS young_modulus double 1\n", "LOOKUP_TABLE default\n", _fmt(E, 1)]
    if strain is not None:
        s = np.asarray(strain, dtype=float).reshape(n_cells, -1)
        out += ["FIELD cell_fields 1\n", f"strain {s.shape[1]} {n_cells} double\n",
                _fmt(s, s.shape[1])]
    path.write_text("".join(out))
    return path


@dataclass
class VtkGrid:
    dimensions: tuple
    origin: tuple
    spacing: tuple
    point_data: dict = field(default_factory=dict)
    cell_data: dict = field(default_factory=dict)


def read_vtk(path: str | Path) -> VtkGrid:
    """Parse files written by :func:`write_vtk` (and the same subset of the format)."""
    tokens = Path(path).read_text().split("\n")
    if not tokens[0].startswith("# vtk DataFile"):
        raise ValueError(f"{path}: not a legacy VTK file")
    if tokens[2].strip() != "ASCII":
        raise ValueError(f"{path}: only ASCII files are supported")
    words = " ".join(tokens[3:]).split()
    pos = 0

    def take(n=1):
        nonlocal pos
        pos += n
        return words[pos - n:pos] if n > 1 else words[pos - 1]

    def floats(n):
        return np.array(take(n) if n > 1 else [take()], dtype=float)

    grid = VtkGrid((), (), ())
    target, count = None, 0
    while pos < len(words):
        key = take()
        if key == "DATASET":
            if take() != "STRUCTURED_POINTS":
                raise ValueError(f"{path}: only STRUCTURED_POINTS is supported")
        elif key == "DIMENSIONS":
            grid.dimensions = tuple(int(v) for v in take(3))
        elif key == "ORIGIN":
            grid.origin = tuple(float(v) for v in take(3))
        elif key == "SPACING":
            grid.spacing = tuple(float(v) for v in take(3))
        elif key in ("POINT_DATA", "CELL_DATA"):
            count = int(take())
            target = grid.point_data if key == "POINT_DATA" else grid.cell_data
        elif key == "VECTORS":
            name, _ = take(2)
            target[name] = floats(3 * count).reshape(count, 3)
        elif key == "SCALARS":
            name, _ = take(2)
            ncomp = 1
            if words[pos] != "LOOKUP_TABLE":
                ncomp = int(take())
            take(2)                                  # LOOKUP_TABLE name
            vals = floats(ncomp * count)
            target[name] = vals if ncomp == 1 else vals.reshape(count, ncomp)
        elif key == "FIELD":
            _, narr = take(2)
            for _ in range(int(narr)):
                name, ncomp, ntup, _ = take(4)
                target[name] = floats(int(ncomp) * int(ntup)).reshape(int(ntup), int(ncomp))
        else:
            raise ValueError(f"{path}: unsupported section {key!r}")
    return grid
