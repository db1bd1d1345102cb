"""Boundary interpolation matrices mapping CBN displacements to boundary nodes.

Rows follow the boundary node order of :class:`~cbnfem.mesh.NodeSets`
(``dim`` rows per node, component-interleaved); columns follow the local CBN
order of the layout (``dim`` columns per CBN).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError
from .mesh import CbnLayout, CoarseElementMesh, NodeSets

# Bernstein basis in monomial form: psi(t) = [1, t, t^2, t^3] @ BERNSTEIN_MONOMIAL
BERNSTEIN_MONOMIAL = np.array([[1, 0, 0, 0], [-3, 3, 0, 0], [3, -6, 3, 0], [-1, 3, -3, 1]],
                              dtype=float)


def bernstein_cubic(t):
    """Cubic Bernstein values ``C(3,i) t^i (1-t)^(3-i)``; shape (..., 4)."""
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    return np.stack([comb(3, i) * t ** i * s ** (3 - i) for i in range(4)], axis=-1)


def hat_cubic_stations(t):
    """Piecewise-linear interpolation weights over stations 0, 1/3, 2/3, 1."""
    t = np.asarray(t, dtype=float)
    w = np.zeros(t.shape + (4,))
    k = np.minimum(np.floor(3.0 * t), 2).astype(int)
    s = 3.0 * t - k
    np.put_along_axis(w, k[..., None], (1.0 - s)[..., None], axis=-1)
    np.put_along_axis(w, (k + 1)[..., None], s[..., None], axis=-1)
    return w


@dataclass(frozen=True)
class BezierMap:
    """Sparse ``(dim*b) x (dim*n_cbn)`` interpolation matrix of one element."""

    matrix: sp.csr_matrix
    boundary_nodes: np.ndarray
    kind: str

    @property
    def shape(self):
        return self.matrix.shape


def _param(i, start, end):
    return (i - start) / (end - start)


def _assemble(rows: list, dim: int, n_cols: int, boundary: np.ndarray, kind: str) -> BezierMap:
    r, c, v = [], [], []
    for j, (cols, weights) in enumerate(rows):
        for comp in range(dim):
            r.extend([dim * j + comp] * len(cols))
            c.extend(dim * np.asarray(cols) + comp)
            v.extend(weights)
    M = sp.csr_matrix((v, (r, c)), shape=(dim * len(rows), dim * n_cols))
    M.eliminate_zeros()
    return BezierMap(M, boundary, kind)


def _segment_rows(element, layout, node_sets, weights_fn):
    idx = element.local_index()
    rows = []
    for node in node_sets.boundary:
        p = idx[node]
        found = []
        for seg in layout.segments:
            if p[1 - seg.axis] == seg.fixed and seg.start <= p[seg.axis] <= seg.end:
                t = _param(p[seg.axis], seg.start, seg.end)
                found.append((np.array(seg.cbn), weights_fn(t)))
        if not found:
            raise AssemblyError(f"boundary node {node} of element {element.id} lies on no "
                                f"bridge segment")
        _check_agree(found, node)
        # the lowest segment owns the row; coincident endpoint rows are written once
        cols, w = found[0]
        keep = w != 0
        rows.append((cols[keep], w[keep]))
    return rows


def _check_agree(found, node):
    ref = _dense_row(*found[0])
    for cols, w in found[1:]:
        if _dense_row(cols, w) != ref:
            raise AssemblyError(f"bridge pieces disagree at shared boundary node {node}")


def _dense_row(cols, w):
    out = {}
    for c, x in zip(np.ravel(cols).tolist(), np.ravel(w).tolist()):
        if x != 0:
            out[c] = out.get(c, 0.0) + x
    return out


def build_psi_2d(layout: CbnLayout, node_sets: NodeSets, element: CoarseElementMesh) -> BezierMap:
    """Cubic Bezier interpolation along bridge segments."""
    rows = _segment_rows(element, layout, node_sets, bernstein_cubic)
    return _assemble(rows, 2, layout.n_cbn, node_sets.boundary, "bezier")


def build_psi_linear(layout: CbnLayout, node_sets: NodeSets,
                     element: CoarseElementMesh) -> BezierMap:
    """Piecewise-linear interpolation between consecutive CBN stations."""
    if layout.dim != 2:
        raise AssemblyError("linear CBN interpolation is implemented for 2D layouts only")
    rows = _segment_rows(element, layout, node_sets, hat_cubic_stations)
    return _assemble(rows, 2, layout.n_cbn, node_sets.boundary, "linear")


def build_psi_3d(layout: CbnLayout, node_sets: NodeSets, element: CoarseElementMesh) -> BezierMap:
    """Bicubic tensor-product Bezier interpolation on bridge face patches."""
    idx = element.local_index()
    rows = []
    for node in node_sets.boundary:
        p = idx[node]
        found = []
        for patch in layout.patches:
            u, v = patch.axes
            if (p[patch.normal] == patch.fixed
                    and patch.start[0] <= p[u] <= patch.end[0]
                    and patch.start[1] <= p[v] <= patch.end[1]):
                wu = bernstein_cubic(_param(p[u], patch.start[0], patch.end[0]))
                wv = bernstein_cubic(_param(p[v], patch.start[1], patch.end[1]))
                found.append((patch.cbn.ravel(), np.outer(wu, wv).ravel()))
        if not found:
            raise AssemblyError(f"boundary node {node} of element {element.id} lies on no "
                                f"bridge face")
        _check_agree(found, node)
        cols, w = found[0]
        keep = w != 0
        rows.append((cols[keep], w[keep]))
    return _assemble(rows, 3, layout.n_cbn, node_sets.boundary, "bezier")


def build_psi(layout: CbnLayout, node_sets: NodeSets, element: CoarseElementMesh,
              kind: str = "bezier") -> BezierMap:
    if kind == "linear":
        return build_psi_linear(layout, node_sets, element)
    if kind != "bezier":
        raise AssemblyError(f"unknown interpolation kind {kind!r}")
    if layout.dim == 2:
        return build_psi_2d(layout, node_sets, element)
    return build_psi_3d(layout, node_sets, element)


def identity_map(node_sets: NodeSets, dim: int) -> BezierMap:
    """Trace map of plain substructuring: every boundary dof is a coarse dof."""
    n = dim * len(node_sets.boundary)
    return BezierMap(sp.identity(n, format="csr"), node_sets.boundary, "identity")


def cbn_dof_count_3d(r: int) -> float:
    """Closed-form 3D CBN dof count for ``r`` bridge nodes on a cube surface."""
    x = 1.0 + np.sqrt(6.0 * r - 12.0) / 6.0
    return 3.0 * (54.0 * x * x - 108.0 * x + 56.0)
