"""Reference methods: homogenized bilinear coarse FEM and exact substructuring.

The fine-mesh benchmark itself is :func:`cbnfem.fem.solve_fine`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cbn import CbnSolution, solve_cbn
from .condense import DEFAULT_CAP, local_stiffness, node_dofs, partition
from .errors import CapExceededError, SolverError
from .fem import (BoundaryConditions, DirectSolver, SparseSpdSystem, assemble_lattice,
                  check_rigid_constraints, n_strain, shape_functions, solve,
                  transfer_dirichlet)
from .material import MaterialField
from .mesh import BridgePolicy, CoarseElementMesh, MeshHierarchy, classify_nodes, grid_connectivity


def unit_strain_fields(coords: np.ndarray) -> np.ndarray:
    """Displacements ``u = E x`` for the unit engineering strains; (n_strain, n*dim)."""
    n, dim = coords.shape
    x = coords
    fields = np.zeros((n_strain(dim), n, dim))
    for a in range(dim):
        fields[a, :, a] = x[:, a]
    # shear with engineering strain gamma = 1, i.e. tensor component 1/2
    pairs = [(0, 1)] if dim == 2 else [(1, 2), (0, 2), (0, 1)]
    for s, (a, b) in enumerate(pairs, start=dim):
        fields[s, :, a] = 0.5 * x[:, b]
        fields[s, :, b] = 0.5 * x[:, a]
    return fields.reshape(len(fields), -1)


@dataclass(frozen=True)
class EffectiveTensor:
    D: np.ndarray
    rhs_columns: int


def homogenize(element: CoarseElementMesh, material: MaterialField) -> EffectiveTensor:
    """Effective elasticity from kinematic uniform boundary conditions.

    Each unit strain is imposed as a linear displacement on the element
    boundary; ``D_H[k, l] = u_k^T k u_l / V`` with the relaxed interior.
    """
    k = local_stiffness(element, material)
    ns = classify_nodes(element)
    part = partition(k, ns, element.dim)
    x = element.node_coords() - element.origin
    U = unit_strain_fields(x).T                    # (n_dofs, n_strain)
    ub = U[part.boundary_dofs]
    if len(part.interior_dofs):
        try:
            solver = DirectSolver(part.k_i)
        except SolverError as exc:
            raise SolverError(f"homogenization of coarse element {element.id}: {exc}") from exc
        U[part.interior_dofs] = solver.solve(-(part.k_ib @ ub))
        rhs = solver.columns_solved
    else:
        rhs = 0
    V = float(np.prod(element.size))
    D = U.T @ (k @ U) / V
    return EffectiveTensor(0.5 * (D + D.T), rhs)


def homogenize_all(hierarchy: MeshHierarchy, material: MaterialField) -> list[EffectiveTensor]:
    """Effective tensors of all coarse elements; identical elements are solved once."""
    material.check(hierarchy)
    seen: dict[str, EffectiveTensor] = {}
    out = []
    for el in hierarchy.elements:
        key = material.subset(el.element_ids).digest()
        if key not in seen:
            seen[key] = homogenize(el, material)
            out.append(seen[key])
        else:
            out.append(EffectiveTensor(seen[key].D, 0))
    return out


def coarse_prolongation(hierarchy: MeshHierarchy) -> sp.csr_matrix:
    """Bilinear/trilinear interpolation from coarse grid nodes to fine nodes."""
    d = hierarchy.dim
    conn = grid_connectivity(hierarchy.coarse_counts)
    n_coarse_nodes = int(np.prod([c + 1 for c in hierarchy.coarse_counts]))
    owner = np.full(hierarchy.n_nodes, -1, dtype=np.int64)
    rows, cols, vals = [], [], []
    for el in hierarchy.elements:
        mine = owner[el.node_ids] < 0
        owner[el.node_ids[mine]] = el.id
        xi = 2.0 * (el.node_coords()[mine] - el.origin) / el.size - 1.0
        N = np.array([shape_functions(p)[0] for p in xi])          # (n, 2^d)
        for c in range(d):
            rows.append(np.repeat(d * el.node_ids[mine] + c, N.shape[1]))
            cols.append(np.tile(d * conn[el.id] + c, len(N)))
            vals.append(N.ravel())
    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(hierarchy.n_dofs, d * n_coarse_nodes)).tocsr()
    P.eliminate_zeros()
    return P


@dataclass
class HomogenizedSolution:
    Q: np.ndarray
    u: np.ndarray
    energy: float
    system: SparseSpdSystem
    P: sp.csr_matrix
    tensors: list

    @property
    def nnz(self) -> int:
        return int(self.system.K.nnz)

    @property
    def rhs_columns(self) -> int:
        return sum(t.rhs_columns for t in self.tensors)

    @property
    def rhs_per_element(self) -> int:
        return max(t.rhs_columns for t in self.tensors)


def homogenized_solve(hierarchy: MeshHierarchy, tensors, bcs: BoundaryConditions,
                      solver: str = "direct", tol: float = 1e-10) -> HomogenizedSolution:
    """Bilinear coarse FEM on effective tensors; loads and constraints via interpolation."""
    Ds = np.array([t.D if isinstance(t, EffectiveTensor) else t for t in tensors])
    K = assemble_lattice(hierarchy.coarse_counts, hierarchy.coarse_size, Ds)
    P = coarse_prolongation(hierarchy)
    f = P.T @ bcs.force_vector(hierarchy.n_dofs, hierarchy.dim)
    dofs, values = bcs.fixed(hierarchy.dim)
    check_rigid_constraints(hierarchy.node_coords(), dofs)
    system = SparseSpdSystem(K, np.asarray(f).ravel(), transfer_dirichlet(P, dofs, values))
    Q = solve(system, solver, tol)
    return HomogenizedSolution(Q, P @ Q, 0.5 * float(Q @ (K @ Q)), system, P, list(tensors))


@dataclass
class SubstructureSolution:
    u: np.ndarray
    energy: float
    cbn: CbnSolution

    @property
    def nnz(self) -> int:
        return self.cbn.coarse.nnz

    @property
    def rhs_columns(self) -> int:
        return self.cbn.opset.rhs_columns

    @property
    def rhs_per_element(self) -> int:
        return self.cbn.opset.rhs_per_element


def substructure_solve(hierarchy: MeshHierarchy, material: MaterialField,
                       bcs: BoundaryConditions, cap: int = DEFAULT_CAP,
                       solver: str = "direct", tol: float = 1e-10) -> SubstructureSolution:
    """Exact static condensation onto all coarse-element boundary nodes.

    Each element needs one interior solve per boundary dof (``2b``/``3b``),
    which is refused above ``cap``.  Interior loads are added back through the
    clamped-boundary response ``k_i^{-1} f_i``.
    """
    el0 = hierarchy.elements[0]
    nb = hierarchy.dim * len(classify_nodes(el0).boundary)
    if nb > cap:
        raise CapExceededError(
            f"substructuring needs {nb} right-hand sides per coarse element (one per boundary "
            f"dof), above the cap of {cap}")
    sol = solve_cbn(hierarchy, material, bcs, BridgePolicy("all"), "identity", solver, tol)
    u = sol.u.copy()
    d = hierarchy.dim
    f = bcs.force_vector(hierarchy.n_dofs, d)
    energy = 0.0
    for op in sol.operators:
        el = op.element
        basis = op.basis
        idofs = basis.partitioned.interior_dofs if basis is not None else np.array([], int)
        gdofs = node_dofs(el.node_ids, d)
        fi = f[gdofs[idofs]]
        if np.any(fi):
            u[gdofs[idofs]] += basis.bubble(fi)
        q = u[gdofs]
        energy += 0.5 * float(q @ (basis.partitioned.k @ q)) if basis is not None else \
            0.5 * float(q @ (local_stiffness(el, material) @ q))
    return SubstructureSolution(u, energy, sol)
