"""Coarse analysis with curved-bridge-node shape functions.

Pipeline per coarse element: trace map ``Psi`` -> interior factorization ->
``Phi~ = [Psi; -k_i^{-1} k_ib Psi]`` -> ``K^alpha = Phi~^T k^alpha Phi~``.
The elements are then assembled into a global coarse system on the shared
trace dofs, solved, and mapped back to the fine grid.

Three trace spaces share this pipeline:

* ``"bezier"``: cubic Bezier curves (2D) / bicubic patches (3D) through CBNs;
* ``"linear"``: piecewise-linear interpolation between the same CBNs;
* ``"identity"``: every boundary node is a coarse node (plain substructuring).
"""
from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .bezier import BezierMap, build_psi, identity_map
from .condense import (CondensedBasis, load_basis, local_stiffness, node_dofs, partition,
                       save_basis, condense)
from .errors import AssemblyError, DomainError, PlacementError
from .fem import (BoundaryConditions, SparseSpdSystem, check_rigid_constraints,
                  element_dofs, element_stiffnesses, gauss_strain_matrices, shape_functions,
                  solve, strain_matrix, transfer_dirichlet)
from .material import MaterialField
from .mesh import (BridgePolicy, CbnLayout, CoarseElementMesh, MeshHierarchy, NodeSets,
                   build_layouts, classify_nodes, flat_index, master_corners)

log = logging.getLogger(__name__)

STEPS = ("Prepare Psi", "Prepare M", "Construct Phi", "Construct N",
         "Compute K_alpha", "Assemble K", "Compute Q")
TRACE_KINDS = ("bezier", "linear", "identity")


# ---------------------------------------------------------------------------
# trace spaces


@dataclass(frozen=True)
class TraceSpace:
    """Global numbering of coarse dofs and the per-element trace layouts."""

    kind: str
    dim: int
    n_points: int
    coords: np.ndarray                     # (n_points, dim) coarse point coordinates
    element_points: tuple[np.ndarray, ...]  # global point ids per element (column order)
    node_sets: tuple[NodeSets, ...]
    layouts: tuple[CbnLayout, ...] | None
    policy: BridgePolicy

    @property
    def n_dofs(self) -> int:
        return self.dim * self.n_points

    def element_dofs(self, e: int) -> np.ndarray:
        return node_dofs(self.element_points[e], self.dim)

    def point_coords(self, e: int) -> np.ndarray:
        return self.coords[self.element_points[e]]

    def signature(self, e: int, element: CoarseElementMesh) -> bytes:
        """Translation-invariant layout key used for caching."""
        if self.layouts is None:
            return b"identity|" + np.array(element.fine_counts).tobytes()
        return self.kind.encode() + b"|" + self.layouts[e].signature()

    def bridge_points(self, e: int, element: CoarseElementMesh) -> np.ndarray:
        """Element-local coarse points located at bridge nodes (exact interpolation)."""
        if self.layouts is None:
            return np.arange(len(self.element_points[e]))
        layout = self.layouts[e]
        nodes = 3 * (element.local_index()[layout.bridge_nodes] + np.array(element.offset))
        wanted = {tuple(k) for k in nodes.tolist()}
        return np.array([j for j, k in enumerate(layout.keys.tolist()) if tuple(k) in wanted])

    def psi(self, e: int, element: CoarseElementMesh) -> BezierMap:
        if self.layouts is None:
            return identity_map(self.node_sets[e], self.dim)
        return build_psi(self.layouts[e], self.node_sets[e], element, self.kind)


def build_trace_space(hierarchy: MeshHierarchy, kind: str = "bezier",
                      policy: BridgePolicy | None = None) -> TraceSpace:
    if kind not in TRACE_KINDS:
        raise AssemblyError(f"unknown trace space {kind!r}")
    policy = policy or BridgePolicy()
    if kind == "identity":
        skeleton = hierarchy.skeleton_nodes()
        lookup = np.full(hierarchy.n_nodes, -1, dtype=np.int64)
        lookup[skeleton] = np.arange(len(skeleton))
        sets = tuple(classify_nodes(el) for el in hierarchy.elements)
        points = tuple(lookup[el.node_ids[ns.boundary]]
                       for el, ns in zip(hierarchy.elements, sets))
        coords = hierarchy.node_coords()[skeleton]
        return TraceSpace(kind, hierarchy.dim, len(skeleton), coords, points, sets, None,
                          BridgePolicy("all"))
    numbering = build_layouts(hierarchy, policy)
    points = tuple(l.global_ids for l in numbering.layouts)
    return TraceSpace(kind, hierarchy.dim, numbering.n_cbn, numbering.coords, points,
                      numbering.node_sets, numbering.layouts, policy)


# ---------------------------------------------------------------------------
# element operators


@dataclass
class CoarseElementOperator:
    """Discrete shape functions and stiffness of one coarse element."""

    element: CoarseElementMesh
    dofs: np.ndarray                # global coarse dofs (columns of phi_tilde)
    phi_tilde: np.ndarray           # (n_local_dofs, m), natural local dof order
    K: np.ndarray                   # (m, m)
    point_coords: np.ndarray        # coordinates of the coarse points of the columns
    basis: CondensedBasis | None = field(default=None, repr=False)
    rhs_columns: int = 0
    bridge_points: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.element.dim

    @property
    def n_cols(self) -> int:
        return self.phi_tilde.shape[1]


def coarse_element_stiffness(phi_tilde: np.ndarray, k_local: sp.spmatrix | None = None,
                             element: CoarseElementMesh | None = None,
                             material: MaterialField | None = None,
                             per_fine_element: bool = False) -> np.ndarray:
    """``K^alpha = Phi~^T k^alpha Phi~``, symmetric by construction.

    With ``per_fine_element`` the sum over fine elements of
    ``Phi~_e^T k_e Phi~_e`` is formed instead of the single triple product.
    """
    if per_fine_element:
        if element is None or material is None:
            raise AssemblyError("per-fine-element stiffness needs the element and material")
        sub = material.subset(element.element_ids)
        kes = element_stiffnesses(sub.tensors(), element.fine_size)
        edofs = element_dofs(element.connectivity(), element.dim)
        pe = phi_tilde[edofs]                       # (n_fine, 2^d*d, m)
        K = np.einsum("eim,eij,ejn->mn", pe, kes, pe, optimize=True)
    else:
        if k_local is None or k_local.shape[0] != phi_tilde.shape[0]:
            raise AssemblyError("local stiffness does not match the condensed basis")
        K = phi_tilde.T @ (k_local @ phi_tilde)
    return 0.5 * (K + K.T)


def _element_key(material: MaterialField, element: CoarseElementMesh, signature: bytes):
    return material.subset(element.element_ids).digest(), hashlib.sha256(signature).hexdigest()


def _compute(space: TraceSpace, e: int, element: CoarseElementMesh,
             material: MaterialField, per_fine_element: bool, cache_dir: Path | None):
    timings = dict.fromkeys(STEPS[:5], 0.0)
    t0 = time.perf_counter()
    psi = space.psi(e, element)
    ns = space.node_sets[e]
    timings["Prepare Psi"] = time.perf_counter() - t0
    k = local_stiffness(element, material)
    part = partition(k, ns, element.dim)
    key = _element_key(material, element, space.signature(e, element))
    cached = None
    if cache_dir is not None:
        path = cache_dir / (hashlib.sha256("|".join(key).encode()).hexdigest()[:32] + ".phi")
        if path.exists():
            cached = load_basis(path, key[0], key[1])
    basis = None
    if cached is None:
        basis = condense(part, psi, element.id)
        timings["Prepare M"] = basis.timings["factorize"]
        timings["Construct Phi"] = basis.timings["solve"]
        t0 = time.perf_counter()
        phi_tilde = basis.natural()
        timings["Construct N"] = time.perf_counter() - t0
        if cache_dir is not None:
            save_basis(path, phi_tilde, key[0], key[1])
    else:
        phi_tilde = cached
    t0 = time.perf_counter()
    K = coarse_element_stiffness(phi_tilde, k, element, material, per_fine_element)
    timings["Compute K_alpha"] = time.perf_counter() - t0
    rhs = basis.rhs_columns if basis is not None else 0
    return phi_tilde, K, basis, rhs, timings


@dataclass
class OperatorSet:
    operators: list[CoarseElementOperator]
    space: TraceSpace
    timings: dict
    unique: int                     # number of distinct element bases computed

    @property
    def rhs_columns(self) -> int:
        """Total interior solves issued over all distinct coarse elements."""
        return sum(op.rhs_columns for op in self.operators)

    @property
    def rhs_per_element(self) -> int:
        """Interior solves per condensed coarse element (``6r``, ``q`` or ``2b``/``3b``)."""
        return max(op.rhs_columns for op in self.operators)


def build_operators(hierarchy: MeshHierarchy, material: MaterialField, space: TraceSpace,
                    threads: int = 1, per_fine_element: bool = False, use_cache: bool = True,
                    cache_dir: str | Path | None = None) -> OperatorSet:
    """Condense every coarse element; identical elements are computed once."""
    material.check(hierarchy)
    cache_dir = Path(cache_dir) if cache_dir is not None else None
    keys, first = [], {}
    for e, el in enumerate(hierarchy.elements):
        key = _element_key(material, el, space.signature(e, el)) if use_cache else e
        keys.append(key)
        first.setdefault(key, e)
    todo = sorted(first.values())

    def work(e):
        return _compute(space, e, hierarchy.elements[e], material, per_fine_element, cache_dir)

    if threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(zip(todo, pool.map(work, todo)))
    else:
        results = {e: work(e) for e in todo}

    timings = dict.fromkeys(STEPS, 0.0)
    for e in todo:
        for name, t in results[e][4].items():
            timings[name] += t
    ops = []
    for e, el in enumerate(hierarchy.elements):
        src = first[keys[e]]
        phi_tilde, K, basis, rhs, _ = results[src]
        ops.append(CoarseElementOperator(el, space.element_dofs(e), phi_tilde, K,
                                         space.point_coords(e), basis,
                                         rhs if src == e else 0,
                                         space.bridge_points(e, el)))
    return OperatorSet(ops, space, timings, len(todo))


# ---------------------------------------------------------------------------
# shape functions


def _locate(op: CoarseElementOperator, x, tol: float = 1e-12):
    el = op.element
    x = np.asarray(x, dtype=float)
    if x.shape != (el.dim,):
        raise DomainError(f"point must have {el.dim} coordinates")
    h = np.array(el.fine_size)
    n = np.array(el.fine_counts)
    local = (x - el.origin) / h
    if np.any(local < -tol * n) or np.any(local > n * (1 + tol)):
        raise DomainError(f"point {x.tolist()} lies outside coarse element {el.id}")
    local = np.clip(local, 0, n)
    cell = np.minimum(np.floor(local).astype(int), n - 1)
    xi = 2.0 * (local - cell) - 1.0
    offsets = (master_corners(el.dim) + 1) // 2
    nodes = flat_index(cell + offsets, el.fine_counts)
    return local, cell, xi, nodes


def _rows(op, nodes):
    d = op.dim
    return op.phi_tilde[(d * nodes[:, None] + np.arange(d)).ravel()]


def shape_eval(op: CoarseElementOperator, x) -> np.ndarray:
    """``N^alpha(x)``: ``(dim, m)`` map from coarse dofs to the displacement at ``x``."""
    _, _, xi, nodes = _locate(op, x)
    N, _ = shape_functions(xi)
    rows = _rows(op, nodes).reshape(len(nodes), op.dim, -1)
    return np.einsum("a,acm->cm", N, rows)


def shape_gradient(op: CoarseElementOperator, x, tol: float = 1e-9) -> np.ndarray:
    """``B^alpha(x)``: strain-displacement matrix, defined strictly inside a fine element."""
    local, cell, xi, nodes = _locate(op, x)
    if np.any(np.abs(local - np.round(local)) < tol):
        raise DomainError(f"point {np.asarray(x).tolist()} lies on a fine-element border; "
                          f"the strain is two-valued there")
    _, dN = shape_functions(xi)
    B = strain_matrix(dN * (2.0 / np.array(op.element.fine_size)))
    return B @ _rows(op, nodes)


# ---------------------------------------------------------------------------
# global coarse system


def owner_elements(hierarchy: MeshHierarchy) -> np.ndarray:
    """Lowest coarse element id containing each fine node."""
    owner = np.full(hierarchy.n_nodes, -1, dtype=np.int64)
    for el in hierarchy.elements:
        ids = el.node_ids[owner[el.node_ids] < 0]
        owner[ids] = el.id
    return owner


def prolongation(hierarchy: MeshHierarchy, operators: list[CoarseElementOperator],
                 n_coarse: int) -> sp.csr_matrix:
    """Sparse ``P`` with ``u_fine = P Q``; shared node rows come from the owner element."""
    d = hierarchy.dim
    owner = owner_elements(hierarchy)
    rows, cols, vals = [], [], []
    for op in operators:
        el = op.element
        mine = np.flatnonzero(owner[el.node_ids] == el.id)
        local = node_dofs(mine, d)
        block = op.phi_tilde[local]
        r, c = np.nonzero(block)
        rows.append(node_dofs(el.node_ids[mine], d)[r])
        cols.append(op.dofs[c])
        vals.append(block[r, c])
    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(hierarchy.n_dofs, n_coarse)).tocsr()
    return P


def scatter_dense(operators: list[CoarseElementOperator], n: int) -> sp.csr_matrix:
    rows = np.concatenate([np.repeat(op.dofs, len(op.dofs)) for op in operators])
    cols = np.concatenate([np.tile(op.dofs, len(op.dofs)) for op in operators])
    vals = np.concatenate([op.K.ravel() for op in operators])
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    K.eliminate_zeros()
    return K


def check_determined(space: TraceSpace):
    """Refuse layouts whose boundary nodes cannot pin down all trace dofs.

    A segment (or patch direction) spanning exactly two fine elements has
    three nodes for four cubic control values, which leaves a displacement
    mode with no effect on the fine field and a singular coarse matrix.
    Spans of one fine element are fine: the extra stations are simply unused.
    """
    if space.layouts is None:
        return
    for layout in space.layouts:
        spans = [s.end - s.start for s in layout.segments]
        spans += [e - s for p in layout.patches for s, e in zip(p.start, p.end)]
        if 2 in spans:
            raise PlacementError(
                "bridge segments spanning exactly 2 fine elements leave the cubic "
                "interpolation under-determined; choose a bridge count with spans of 1 or "
                ">= 3 fine elements")


@dataclass
class CoarseSystem:
    system: SparseSpdSystem
    P: sp.csr_matrix
    inactive: np.ndarray

    @property
    def K(self) -> sp.csr_matrix:
        return self.system.K

    @property
    def f(self) -> np.ndarray:
        return self.system.f

    @property
    def nnz(self) -> int:
        return int(self.system.K.nnz)


def assemble_coarse(hierarchy: MeshHierarchy, opset: OperatorSet,
                    bcs: BoundaryConditions) -> CoarseSystem:
    """Global coarse stiffness, work-equivalent loads and transferred constraints."""
    check_determined(opset.space)
    n = opset.space.n_dofs
    K = scatter_dense(opset.operators, n)
    P = prolongation(hierarchy, opset.operators, n)
    f = P.T @ bcs.force_vector(hierarchy.n_dofs, hierarchy.dim)
    dofs, values = bcs.fixed(hierarchy.dim)
    check_rigid_constraints(hierarchy.node_coords(), dofs)
    inactive = np.flatnonzero(np.asarray(abs(P).sum(axis=0)).ravel() == 0)
    constraints = transfer_dirichlet(P, dofs, values, inactive)
    return CoarseSystem(SparseSpdSystem(K, np.asarray(f).ravel(), constraints), P, inactive)


def solve_coarse(coarse: CoarseSystem, kind: str = "direct", tol: float = 1e-10) -> np.ndarray:
    return solve(coarse.system, kind, tol)


def local_fields(operators: list[CoarseElementOperator], Q: np.ndarray) -> list[np.ndarray]:
    """Per-element fine displacement ``q = Phi~ Q^alpha``."""
    return [op.phi_tilde @ Q[op.dofs] for op in operators]


def reconstruct_fine(hierarchy: MeshHierarchy, operators: list[CoarseElementOperator],
                     Q: np.ndarray) -> np.ndarray:
    d = hierarchy.dim
    u = np.zeros(hierarchy.n_dofs)
    for op, q in zip(reversed(operators), reversed(local_fields(operators, Q))):
        # reversed so that the lowest element id writes last (owner convention)
        u[node_dofs(op.element.node_ids, d)] = q
    return u


def interface_jump(hierarchy: MeshHierarchy, operators: list[CoarseElementOperator],
                   Q: np.ndarray) -> float:
    """Largest difference between element-local values at shared fine nodes."""
    d = hierarchy.dim
    ref = np.full(hierarchy.n_dofs, np.nan)
    jump = 0.0
    for op, q in zip(operators, local_fields(operators, Q)):
        g = node_dofs(op.element.node_ids, d)
        seen = ~np.isnan(ref[g])
        if seen.any():
            jump = max(jump, float(np.abs(ref[g][seen] - q[seen]).max()))
        ref[g] = q
    return jump


def reconstruct_strain(hierarchy: MeshHierarchy, operators: list[CoarseElementOperator],
                       Q: np.ndarray) -> np.ndarray:
    """Gauss-point strains ``B^alpha Q^alpha`` of every global fine element."""
    d = hierarchy.dim
    Bs, _ = gauss_strain_matrices(hierarchy.fine_size)
    out = np.zeros((hierarchy.n_elements, len(Bs), Bs.shape[1]))
    for op in operators:
        el = op.element
        edofs = element_dofs(el.connectivity(), d)
        Be = np.einsum("gsi,eim->egsm", Bs, op.phi_tilde[edofs])
        out[el.element_ids] = Be @ Q[op.dofs]
    return out


# ---------------------------------------------------------------------------
# end-to-end


@dataclass
class CbnSolution:
    Q: np.ndarray
    u: np.ndarray
    energy: float
    coarse: CoarseSystem
    opset: OperatorSet
    timings: dict

    @property
    def operators(self):
        return self.opset.operators

    @property
    def space(self):
        return self.opset.space


def solve_cbn(hierarchy: MeshHierarchy, material: MaterialField, bcs: BoundaryConditions,
              policy: BridgePolicy | None = None, interpolation: str = "bezier",
              solver: str = "direct", tol: float = 1e-10, threads: int = 1,
              per_fine_element: bool = False, cache_dir=None) -> CbnSolution:
    """Run the full coarse analysis and map the result back to the fine grid."""
    space = build_trace_space(hierarchy, interpolation, policy)
    opset = build_operators(hierarchy, material, space, threads=threads,
                            per_fine_element=per_fine_element, cache_dir=cache_dir)
    timings = dict(opset.timings)
    t0 = time.perf_counter()
    coarse = assemble_coarse(hierarchy, opset, bcs)
    timings["Assemble K"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    Q = solve_coarse(coarse, solver, tol)
    timings["Compute Q"] = time.perf_counter() - t0
    u = reconstruct_fine(hierarchy, opset.operators, Q)
    energy = 0.5 * float(Q @ (coarse.K @ Q))
    return CbnSolution(Q, u, energy, coarse, opset, timings)
