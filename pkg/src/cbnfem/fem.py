"""Fine-scale finite element kernel on structured grids.

Bilinear (2D) and trilinear (3D) elements with 2**d Gauss points,
vectorised stiffness assembly, Dirichlet elimination and direct/CG solvers.
The fine-mesh benchmark solve is :func:`solve_fine`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ConfigError, MaterialError, SolverError
from .material import MaterialField
from .mesh import MeshHierarchy, grid_connectivity, lattice_index, master_corners

log = logging.getLogger(__name__)

GAUSS_1D = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def gauss_rule(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor 2-point Gauss rule on [-1, 1]**dim (points, weights)."""
    pts = np.array(np.meshgrid(*([GAUSS_1D] * dim), indexing="ij")).reshape(dim, -1).T
    return pts[:, ::-1].copy(), np.ones(len(pts))


def bilinear_shape(xi) -> tuple[np.ndarray, np.ndarray]:
    """Values (4,) and natural-coordinate gradients (4, 2) at ``xi``."""
    x, y = xi
    c = master_corners(2)
    fx, fy = 1 + c[:, 0] * x, 1 + c[:, 1] * y
    N = 0.25 * fx * fy
    dN = 0.25 * np.stack([c[:, 0] * fy, c[:, 1] * fx], axis=1)
    return N, dN


def trilinear_shape(xi) -> tuple[np.ndarray, np.ndarray]:
    """Values (8,) and natural-coordinate gradients (8, 3) at ``xi``."""
    x, y, z = xi
    c = master_corners(3)
    fx, fy, fz = 1 + c[:, 0] * x, 1 + c[:, 1] * y, 1 + c[:, 2] * z
    N = 0.125 * fx * fy * fz
    dN = 0.125 * np.stack([c[:, 0] * fy * fz, c[:, 1] * fx * fz, c[:, 2] * fx * fy], axis=1)
    return N, dN


def shape_functions(xi) -> tuple[np.ndarray, np.ndarray]:
    return bilinear_shape(xi) if len(xi) == 2 else trilinear_shape(xi)


def n_strain(dim: int) -> int:
    return 3 if dim == 2 else 6


def strain_matrix(dN_dx: np.ndarray) -> np.ndarray:
    """Engineering-Voigt strain-displacement matrix from physical gradients."""
    n, dim = dN_dx.shape
    B = np.zeros((n_strain(dim), dim * n))
    gx = dN_dx[:, 0]
    gy = dN_dx[:, 1]
    if dim == 2:
        B[0, 0::2] = gx
        B[1, 1::2] = gy
        B[2, 0::2] = gy
        B[2, 1::2] = gx
    else:
        gz = dN_dx[:, 2]
        B[0, 0::3] = gx
        B[1, 1::3] = gy
        B[2, 2::3] = gz
        B[3, 1::3] = gz
        B[3, 2::3] = gy
        B[4, 0::3] = gz
        B[4, 2::3] = gx
        B[5, 0::3] = gy
        B[5, 1::3] = gx
    return B


def gauss_strain_matrices(size: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """B at every Gauss point of a box element and the matching ``w * detJ``."""
    size = np.asarray(size, dtype=float)
    pts, w = gauss_rule(len(size))
    scale = 2.0 / size
    Bs = np.array([strain_matrix(shape_functions(p)[1] * scale) for p in pts])
    return Bs, w * np.prod(size / 2.0)


def _check_spd(D: np.ndarray):
    D = np.asarray(D)
    if D.ndim == 2:
        D = D[None]
    if not np.allclose(D, np.swapaxes(D, 1, 2), rtol=0, atol=1e-12 * np.abs(D).max()):
        raise MaterialError("elasticity matrix is not symmetric")
    if np.linalg.eigvalsh(D).min() <= 0:
        raise MaterialError("elasticity matrix is not positive definite")


def element_stiffness(D: np.ndarray, size: Sequence[float], check: bool = True) -> np.ndarray:
    """Stiffness of one box element with constant ``D`` (exact with 2**d points)."""
    if check:
        _check_spd(D)
    Bs, wd = gauss_strain_matrices(size)
    ke = np.einsum("g,gki,kl,glj->ij", wd, Bs, D, Bs)
    return 0.5 * (ke + ke.T)


def element_stiffnesses(Ds: np.ndarray, size: Sequence[float]) -> np.ndarray:
    """Element matrices for a stack of D's, computed once per distinct D."""
    flat = Ds.reshape(len(Ds), -1)
    unique, inverse = np.unique(flat, axis=0, return_inverse=True)
    uD = unique.reshape(-1, *Ds.shape[1:])
    _check_spd(uD)
    kes = np.array([element_stiffness(D, size, check=False) for D in uD])
    return kes[inverse.ravel()]


def element_dofs(conn: np.ndarray, dim: int) -> np.ndarray:
    return (dim * conn[:, :, None] + np.arange(dim)).reshape(len(conn), -1)


def scatter(edofs: np.ndarray, kes: np.ndarray, n_dofs: int) -> sp.csr_matrix:
    """Sum element matrices into a global sparse matrix."""
    ne, m = edofs.shape
    rows = np.repeat(edofs, m, axis=1).ravel()
    cols = np.tile(edofs, (1, m)).ravel()
    K = sp.coo_matrix((kes.ravel(), (rows, cols)), shape=(n_dofs, n_dofs)).tocsr()
    K.sum_duplicates()
    return K


def assemble_lattice(counts: Sequence[int], size: Sequence[float], Ds: np.ndarray) -> sp.csr_matrix:
    """Stiffness of a structured lattice of ``counts`` cells of box ``size``."""
    dim = len(counts)
    conn = grid_connectivity(counts)
    if len(Ds) != len(conn):
        raise AssemblyError(f"{len(Ds)} elasticity matrices for {len(conn)} cells")
    n_dofs = dim * int(np.prod([c + 1 for c in counts]))
    K = scatter(element_dofs(conn, dim), element_stiffnesses(Ds, size), n_dofs)
    if np.any(K.diagonal() <= 0):
        raise AssemblyError("dangling degrees of freedom with zero stiffness")
    return K


def assemble_stiffness(hierarchy: MeshHierarchy, material: MaterialField) -> sp.csr_matrix:
    material.check(hierarchy)
    return assemble_lattice(hierarchy.global_counts, hierarchy.fine_size, material.tensors())


def element_strains(counts: Sequence[int], size: Sequence[float], u: np.ndarray) -> np.ndarray:
    """Strains at Gauss points of every cell, shape (n_cells, 2**d, n_strain)."""
    dim = len(counts)
    conn = grid_connectivity(counts)
    ue = np.asarray(u).reshape(-1, dim)[conn].reshape(len(conn), -1)
    Bs, _ = gauss_strain_matrices(size)
    return np.einsum("gsi,ei->egs", Bs, ue)


def rigid_modes(coords: np.ndarray) -> tuple[np.ndarray, list[str]]:
    """Rigid-body displacement modes sampled at ``coords`` (n_dofs, 3|6)."""
    n, dim = coords.shape
    x = coords - coords.mean(axis=0)
    if dim == 2:
        R = np.zeros((n, 2, 3))
        R[:, 0, 0] = 1
        R[:, 1, 1] = 1
        R[:, 0, 2] = -x[:, 1]
        R[:, 1, 2] = x[:, 0]
        return R.reshape(2 * n, 3), ["translation-x", "translation-y", "rotation-z"]
    R = np.zeros((n, 3, 6))
    R[:, 0, 0] = R[:, 1, 1] = R[:, 2, 2] = 1
    # columns 3..5: rotations about x, y, z (theta x r)
    R[:, 1, 3], R[:, 2, 3] = -x[:, 2], x[:, 1]
    R[:, 0, 4], R[:, 2, 4] = x[:, 2], -x[:, 0]
    R[:, 0, 5], R[:, 1, 5] = -x[:, 1], x[:, 0]
    return R.reshape(3 * n, 6), ["translation-x", "translation-y", "translation-z",
                                 "rotation-x", "rotation-y", "rotation-z"]


def check_rigid_constraints(coords: np.ndarray, fixed_dofs: np.ndarray):
    """Raise :class:`SolverError` naming any rigid mode left free by ``fixed_dofs``."""
    R, names = rigid_modes(coords)
    sub = R[np.asarray(fixed_dofs, dtype=int)]
    if len(sub) == 0:
        raise SolverError(f"no Dirichlet constraints: rigid modes {', '.join(names)} are free")
    lam, V = np.linalg.eigh(sub.T @ sub)
    free = [V[:, i] for i in range(len(lam)) if lam[i] <= 1e-12 * lam.max()]
    if free:
        modes = sorted({names[int(np.argmax(np.abs(v)))] for v in free})
        raise SolverError(f"singular system: unconstrained rigid mode(s) {', '.join(modes)}")


# ---------------------------------------------------------------------------
# boundary conditions


def select_nodes(coords: np.ndarray, box: Sequence, tol: float | None = None) -> np.ndarray:
    """Ids of nodes inside an axis-aligned box; ``None`` bounds are open."""
    coords = np.asarray(coords)
    if len(box) != coords.shape[1]:
        raise ConfigError(f"selector box needs {coords.shape[1]} axis ranges")
    if tol is None:
        tol = 1e-9 * max(1.0, float(np.abs(coords).max()))
    mask = np.ones(len(coords), dtype=bool)
    for k, rng in enumerate(box):
        if rng is None:
            continue
        lo, hi = rng if isinstance(rng, (list, tuple)) else (rng, rng)
        if lo is not None:
            mask &= coords[:, k] >= lo - tol
        if hi is not None:
            mask &= coords[:, k] <= hi + tol
    return np.flatnonzero(mask)


@dataclass
class BoundaryConditions:
    """Dirichlet values and nodal forces on fine nodes.

    ``dirichlet`` and ``forces`` hold ``(node_ids, component, values)``
    triples; ``traction`` is an already-integrated nodal force vector.
    """

    dirichlet: list = field(default_factory=list)
    forces: list = field(default_factory=list)
    traction: np.ndarray | None = None

    def fix(self, nodes, comp: int, value=0.0) -> "BoundaryConditions":
        nodes = np.atleast_1d(np.asarray(nodes, dtype=int))
        self.dirichlet.append((nodes, int(comp), np.broadcast_to(value, nodes.shape).astype(float)))
        return self

    def load(self, nodes, comp: int, value) -> "BoundaryConditions":
        nodes = np.atleast_1d(np.asarray(nodes, dtype=int))
        self.forces.append((nodes, int(comp), np.broadcast_to(value, nodes.shape).astype(float)))
        return self

    def add_traction(self, f: np.ndarray) -> "BoundaryConditions":
        self.traction = f.copy() if self.traction is None else self.traction + f
        return self

    def fixed(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        values: dict[int, float] = {}
        for nodes, comp, vals in self.dirichlet:
            if not 0 <= comp < dim:
                raise ConfigError(f"component {comp} out of range for {dim}D")
            for dof, v in zip((dim * nodes + comp).tolist(), vals.tolist()):
                if dof in values and values[dof] != v:
                    raise ConfigError(f"dof {dof} fixed twice with values {values[dof]} and {v}")
                values[dof] = v
        dofs = np.array(sorted(values), dtype=int)
        return dofs, np.array([values[d] for d in dofs.tolist()])

    def force_vector(self, n_dofs: int, dim: int) -> np.ndarray:
        f = np.zeros(n_dofs)
        for nodes, comp, vals in self.forces:
            if not 0 <= comp < dim:
                raise ConfigError(f"component {comp} out of range for {dim}D")
            np.add.at(f, dim * nodes + comp, vals)
        explicit = f.copy()
        if self.traction is not None:
            f += self.traction
        fixed, _ = self.fixed(dim)
        clash = np.intersect1d(fixed, np.flatnonzero(explicit))
        if len(clash):
            raise ConfigError(f"dofs {clash[:5].tolist()} are both fixed and loaded")
        return f


def traction_load(hierarchy: MeshHierarchy, axis: int, side: str,
                  traction: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Consistent nodal forces of a traction field on a domain face.

    ``side`` is ``"min"`` or ``"max"`` along ``axis``; ``traction(x)`` maps
    ``(n, dim)`` points to ``(n, dim)`` traction vectors.
    """
    dim = hierarchy.dim
    counts = hierarchy.global_counts
    h = np.array(hierarchy.fine_size)
    face_axes = [a for a in range(dim) if a != axis]
    face_counts = [counts[a] for a in face_axes]
    fixed = 0 if side == "min" else counts[axis]
    cells = grid_connectivity(face_counts)                      # facet -> face-lattice nodes
    face_idx = lattice_index(face_counts)
    full_idx = np.zeros((len(face_idx), dim), dtype=np.int64)
    full_idx[:, axis] = fixed
    full_idx[:, face_axes] = face_idx
    strides = np.cumprod([1] + [c + 1 for c in counts[:-1]])
    node_ids = full_idx @ strides
    pts, w = gauss_rule(dim - 1)
    fh = h[face_axes]
    jac = np.prod(fh / 2.0)
    f = np.zeros(hierarchy.n_dofs)
    lo = face_idx[cells[:, 0]] * fh                             # facet origin in face coords
    for p, wg in zip(pts, w):
        N = (bilinear_shape(p)[0] if dim == 3 else 0.5 * (1 + np.array([-1, 1]) * p[0]))
        x = np.zeros((len(cells), dim))
        x[:, axis] = fixed * h[axis]
        x[:, face_axes] = lo + (p + 1) / 2 * fh
        t = np.asarray(traction(x), dtype=float).reshape(len(cells), dim)
        for a in range(cells.shape[1]):
            dofs = dim * node_ids[cells[:, a]][:, None] + np.arange(dim)
            np.add.at(f, dofs, (wg * jac * N[a]) * t)
    return f


# ---------------------------------------------------------------------------
# constraints and solvers


@dataclass
class Constraints:
    """Affine parametrisation ``u = u0 + T y`` of the admissible displacements.

    ``T`` selects the ``free`` dofs and, if present, adds ``basis`` columns
    spanning the null space of under-determined constraint blocks.
    """

    n: int
    free: np.ndarray
    u0: np.ndarray
    fixed: np.ndarray
    basis: sp.csr_matrix | None = None

    @property
    def n_reduced(self) -> int:
        return len(self.free) + (0 if self.basis is None else self.basis.shape[1])

    def transform(self) -> sp.csr_matrix:
        sel = sp.csr_matrix((np.ones(len(self.free)), (self.free, np.arange(len(self.free)))),
                            shape=(self.n, len(self.free)))
        return sel if self.basis is None else sp.hstack([sel, self.basis]).tocsr()

    def reduce(self, K: sp.spmatrix, f: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
        rhs = f - (K @ self.u0 if np.any(self.u0) else 0.0)
        if self.basis is None:
            Kr = K[self.free][:, self.free].tocsr()
            return Kr, rhs[self.free]
        T = self.transform()
        return (T.T @ K @ T).tocsr(), T.T @ rhs

    def expand(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        u = np.repeat(self.u0[:, None], y.shape[1], axis=1) if y.ndim == 2 else self.u0.copy()
        nf = len(self.free)
        u[self.free] += y[:nf]
        if self.basis is not None:
            u += self.basis @ y[nf:]
        return u


def constraints_from_dofs(n: int, dofs: np.ndarray, values: np.ndarray) -> Constraints:
    dofs = np.asarray(dofs, dtype=int)
    u0 = np.zeros(n)
    u0[dofs] = values
    mask = np.ones(n, dtype=bool)
    mask[dofs] = False
    return Constraints(n, np.flatnonzero(mask), u0, dofs)


def transfer_dirichlet(P: sp.spmatrix, dofs: np.ndarray, values: np.ndarray,
                       inactive: np.ndarray | None = None, rtol: float = 1e-9) -> Constraints:
    """Impose fine-level Dirichlet values ``u[dofs] = values`` on ``u = P Q``.

    Coarse dofs touched by constrained rows are determined by least squares.
    Non-representable prescriptions (non-zero residual) are refused; if the
    touched block is rank deficient, its null space stays free.  ``inactive``
    coarse dofs (zero columns of P) are pinned to zero.
    """
    P = sp.csr_matrix(P)
    n = P.shape[1]
    dofs = np.asarray(dofs, dtype=int)
    values = np.asarray(values, dtype=float)
    A = P[dofs]
    A.eliminate_zeros()
    S = np.unique(A.indices)
    inactive = np.setdiff1d(np.asarray(inactive if inactive is not None else [], dtype=int), S)
    u0 = np.zeros(n)
    basis = None
    if len(dofs):
        As = A[:, S].toarray()
        if (A.getnnz(axis=1) == 1).all() and np.all(A.data == 1.0) and len(S) == len(dofs):
            x = As.T @ values                       # pure selector
            null = np.zeros((len(S), 0))
        else:
            U, s, Vt = np.linalg.svd(As, full_matrices=True)
            rank = int(np.sum(s > rtol * 1e-3 * s.max())) if len(s) else 0
            x = Vt[:rank].T @ ((U[:, :rank].T @ values) / s[:rank])
            null = Vt[rank:].T
        resid = np.abs(As @ x - values).max() if len(values) else 0.0
        if resid > rtol * max(np.abs(values).max(), 1e-300):
            raise ConfigError(
                f"prescribed displacements are not representable by the coarse basis "
                f"(max mismatch {resid:.3e}); constrain whole segments/faces with "
                f"constant or linear values")
        u0[S] = x
        if null.shape[1]:
            basis = sp.csr_matrix(_embed_rows(null, S, n))
    pinned = np.union1d(S, inactive)
    free = np.setdiff1d(np.arange(n), pinned)
    return Constraints(n, free, u0, pinned, basis)


def _embed_rows(block: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, block.shape[1]))
    out[rows] = block
    return out


class DirectSolver:
    """Sparse LU (SuperLU, symmetric mode) retained for repeated solves."""

    def __init__(self, K: sp.spmatrix):
        self.n = K.shape[0]
        self.columns_solved = 0
        if self.n == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(sp.csc_matrix(K), permc_spec="MMD_AT_PLUS_A",
                                 diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        self.columns_solved += b.shape[1] if b.ndim == 2 else 1
        if self.n == 0:
            return np.zeros_like(b)
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolverError("direct solve produced non-finite values")
        return x


@dataclass
class SparseSpdSystem:
    """Stiffness, load and constraints of a linear elastic problem."""

    K: sp.csr_matrix
    f: np.ndarray
    constraints: Constraints
    _reduced: tuple | None = field(default=None, repr=False)
    _solver: DirectSolver | None = field(default=None, repr=False)

    @property
    def n_dofs(self) -> int:
        return self.K.shape[0]

    def reduced(self, f: np.ndarray | None = None):
        if f is not None:
            return self.constraints.reduce(self.K, f)
        if self._reduced is None:
            self._reduced = self.constraints.reduce(self.K, self.f)
        return self._reduced

    def factorize(self) -> DirectSolver:
        if self._solver is None:
            self._solver = DirectSolver(self.reduced()[0])
        return self._solver


def _relative_residual(K, x, b) -> float:
    nb = np.linalg.norm(b)
    return 0.0 if nb == 0 else float(np.linalg.norm(K @ x - b) / nb)


def solve_direct(system: SparseSpdSystem, loads: np.ndarray | None = None,
                 max_residual: float = 1e-10) -> np.ndarray:
    """Solve with a cached factorization; ``loads`` may hold several columns."""
    Kr, fr = system.reduced()
    if loads is not None:
        loads = np.asarray(loads, dtype=float)
        cols = loads if loads.ndim == 2 else loads[:, None]
        fr = np.column_stack([system.constraints.reduce(system.K, c)[1] for c in cols.T])
        if loads.ndim == 1:
            fr = fr[:, 0]
    y = system.factorize().solve(fr)
    res = _relative_residual(Kr, y, fr)
    if not res <= max_residual:
        raise SolverError(f"direct solve relative residual {res:.2e} exceeds {max_residual:.0e}; "
                          f"system is singular or severely ill-conditioned")
    return system.constraints.expand(y)


@dataclass
class CgResult:
    u: np.ndarray
    iterations: int
    converged: bool
    residual: float


def solve_cg(system: SparseSpdSystem, tol: float = 1e-8, max_iters: int = 10000,
             preconditioner: str | None = "jacobi") -> CgResult:
    """Preconditioned conjugate gradients on the reduced system."""
    if not 0 < tol < 1:
        raise ConfigError(f"CG tolerance must lie in (0, 1), got {tol}")
    Kr, fr = system.reduced()
    if not np.any(fr):
        return CgResult(system.constraints.expand(np.zeros(len(fr))), 0, True, 0.0)
    M = None
    if preconditioner == "jacobi":
        d = Kr.diagonal()
        if np.any(d <= 0):
            raise SolverError("non-positive diagonal: matrix is not SPD")
        M = sp.diags(1.0 / d)
    elif preconditioner is not None:
        raise ConfigError(f"unknown preconditioner {preconditioner!r}")
    count = [0]

    def step(_):
        count[0] += 1

    y, info = spla.cg(Kr, fr, rtol=tol, atol=0.0, maxiter=max_iters, M=M, callback=step)
    if not np.all(np.isfinite(y)):
        raise SolverError("CG diverged (non-finite iterate)")
    res = _relative_residual(Kr, y, fr)
    if info < 0:
        raise SolverError(f"CG breakdown (info={info})")
    if info > 0:
        log.warning("CG stopped after %d iterations at relative residual %.2e", count[0], res)
    return CgResult(system.constraints.expand(y), count[0], info == 0, res)


def solve(system: SparseSpdSystem, kind: str = "direct", tol: float = 1e-10,
          max_iters: int = 20000) -> np.ndarray:
    if kind == "direct":
        return solve_direct(system)
    if kind == "cg":
        return solve_cg(system, tol=tol, max_iters=max_iters).u
    raise ConfigError(f"unknown solver {kind!r}")


def assemble(hierarchy: MeshHierarchy, material: MaterialField,
             bcs: BoundaryConditions) -> SparseSpdSystem:
    """Global fine-mesh system with Dirichlet constraints eliminated."""
    K = assemble_stiffness(hierarchy, material)
    f = bcs.force_vector(hierarchy.n_dofs, hierarchy.dim)
    dofs, values = bcs.fixed(hierarchy.dim)
    check_rigid_constraints(hierarchy.node_coords(), dofs)
    return SparseSpdSystem(K, f, constraints_from_dofs(hierarchy.n_dofs, dofs, values))


def strain_energy(K: sp.spmatrix, u: np.ndarray) -> float:
    return 0.5 * float(u @ (K @ u))


@dataclass
class FineSolution:
    u: np.ndarray
    energy: float
    system: SparseSpdSystem


def solve_fine(hierarchy: MeshHierarchy, material: MaterialField, bcs: BoundaryConditions,
               kind: str = "direct", tol: float = 1e-10) -> FineSolution:
    """Direct fine-mesh benchmark solve."""
    system = assemble(hierarchy, material, bcs)
    u = solve(system, kind, tol)
    return FineSolution(u, strain_energy(system.K, u), system)
