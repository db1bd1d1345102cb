"""Boundary/interior partitioning and condensation of local fine stiffness.

The condensed basis of a coarse element is ``Phi~ = [Psi; Phi]`` with
``Phi = -k_i^{-1} k_ib Psi``: it maps coarse (trace) dofs to every local fine
dof.  Only as many right-hand sides as ``Psi`` has columns are solved.
"""
from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .bezier import BezierMap
from .errors import AssemblyError, CapExceededError, ConfigError, SolverError
from .fem import DirectSolver, assemble_lattice
from .material import MaterialField
from .mesh import CoarseElementMesh, NodeSets

DEFAULT_CAP = 2000


def node_dofs(nodes: np.ndarray, dim: int) -> np.ndarray:
    """Component-interleaved dof ids of ``nodes``."""
    return (dim * np.asarray(nodes, dtype=np.int64)[:, None] + np.arange(dim)).ravel()


def local_stiffness(element: CoarseElementMesh, material: MaterialField) -> sp.csr_matrix:
    """Unconstrained fine stiffness ``k^alpha`` of one coarse element."""
    sub = material.subset(element.element_ids)
    return assemble_lattice(element.fine_counts, element.fine_size, sub.tensors())


@dataclass(frozen=True)
class PartitionedStiffness:
    k: sp.csr_matrix
    boundary_dofs: np.ndarray
    interior_dofs: np.ndarray
    k_b: sp.csr_matrix
    k_i: sp.csc_matrix
    k_ib: sp.csr_matrix
    k_bi: sp.csr_matrix
    dim: int

    @property
    def perm(self) -> np.ndarray:
        """Local dof ids in ``[boundary; interior]`` order."""
        return np.concatenate([self.boundary_dofs, self.interior_dofs])

    def reassemble(self) -> sp.csr_matrix:
        """Undo the partition; reproduces ``k`` exactly."""
        blocks = sp.bmat([[self.k_b, self.k_bi], [self.k_ib, self.k_i]]).tocsr()
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return blocks[inv][:, inv].tocsr()


def partition(k: sp.spmatrix, node_sets: NodeSets, dim: int) -> PartitionedStiffness:
    n_nodes = k.shape[0] // dim
    b, i = np.asarray(node_sets.boundary), np.asarray(node_sets.interior)
    if k.shape[0] != dim * n_nodes or k.shape[0] != k.shape[1]:
        raise AssemblyError(f"local stiffness of shape {k.shape} does not fit {dim}D nodes")
    allnodes = np.concatenate([b, i])
    if len(allnodes) != n_nodes or not np.array_equal(np.sort(allnodes), np.arange(n_nodes)):
        raise AssemblyError(f"node sets ({len(b)} boundary + {len(i)} interior) do not "
                            f"partition the {n_nodes} local nodes")
    k = sp.csr_matrix(k)
    bd, idofs = node_dofs(b, dim), node_dofs(i, dim)
    kb_rows, ki_rows = k[bd], k[idofs]
    return PartitionedStiffness(
        k=k, boundary_dofs=bd, interior_dofs=idofs,
        k_b=kb_rows[:, bd].tocsr(), k_i=ki_rows[:, idofs].tocsc(),
        k_ib=ki_rows[:, bd].tocsr(), k_bi=kb_rows[:, idofs].tocsr(), dim=dim)


@dataclass
class CondensedBasis:
    """Discrete shape functions of one coarse element."""

    phi: np.ndarray                 # (d*i, m) interior block
    psi: BezierMap
    partitioned: PartitionedStiffness
    rhs_columns: int
    timings: dict = field(default_factory=dict)
    solver: DirectSolver | None = field(default=None, repr=False)

    @property
    def n_cols(self) -> int:
        return self.psi.shape[1]

    def stacked(self) -> np.ndarray:
        """``[Psi; Phi]`` in ``[boundary; interior]`` dof order."""
        return np.vstack([self.psi.matrix.toarray(), self.phi])

    def natural(self) -> np.ndarray:
        """``Phi~`` rows in natural local dof order."""
        out = np.empty((self.partitioned.k.shape[0], self.n_cols))
        out[self.partitioned.boundary_dofs] = self.psi.matrix.toarray()
        out[self.partitioned.interior_dofs] = self.phi
        return out

    def bubble(self, f_interior: np.ndarray) -> np.ndarray:
        """Interior response ``k_i^{-1} f_i`` to interior loads with a clamped boundary."""
        if self.solver is None:
            self.solver = DirectSolver(self.partitioned.k_i)
        return self.solver.solve(f_interior)


def _factorize(k_i, element_id):
    try:
        return DirectSolver(k_i)
    except SolverError as exc:
        raise SolverError(f"interior factorization failed on coarse element {element_id}: "
                          f"{exc}") from exc


def condense(partitioned: PartitionedStiffness, psi: BezierMap,
             element_id: int | None = None, check: bool = True) -> CondensedBasis:
    """Solve ``k_i Phi = -k_ib Psi`` with one factorization."""
    if psi.shape[0] != len(partitioned.boundary_dofs):
        raise AssemblyError(f"Psi has {psi.shape[0]} rows for "
                            f"{len(partitioned.boundary_dofs)} boundary dofs")
    t0 = time.perf_counter()
    solver = _factorize(partitioned.k_i, element_id)
    t1 = time.perf_counter()
    rhs = -(partitioned.k_ib @ psi.matrix)
    rhs = rhs.toarray() if sp.issparse(rhs) else np.asarray(rhs)
    phi = solver.solve(rhs) if rhs.shape[0] else np.zeros((0, psi.shape[1]))
    phi = np.asarray(phi).reshape(rhs.shape)
    t2 = time.perf_counter()
    if check and rhs.size:
        res = partitioned.k_i @ phi - rhs
        scale = max(np.abs(rhs).max(), 1e-300)
        if np.abs(res).max() > 1e-9 * scale:
            raise SolverError(f"condensation residual {np.abs(res).max() / scale:.2e} on coarse "
                              f"element {element_id}")
    return CondensedBasis(phi, psi, partitioned, solver.columns_solved,
                          {"factorize": t1 - t0, "solve": t2 - t1}, solver)


def full_boundary_map(partitioned: PartitionedStiffness, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Dense ``M = -k_i^{-1} k_ib`` (one solve per boundary dof; small cases only)."""
    nb = len(partitioned.boundary_dofs)
    if nb > cap:
        raise CapExceededError(
            f"full boundary map needs {nb} right-hand sides (one per boundary dof), above the "
            f"cap of {cap}; use the CBN condensation instead")
    if not len(partitioned.interior_dofs):
        return np.zeros((0, nb))
    solver = _factorize(partitioned.k_i, None)
    return solver.solve(-partitioned.k_ib.toarray())


# ---------------------------------------------------------------------------
# on-disk cache of Phi~

MAGIC = b"CBNPHI\x00\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIQQ32s32s")


def _digest(x) -> bytes:
    if isinstance(x, bytes) and len(x) == 32:
        return x
    if isinstance(x, str):
        x = x.encode()
    return hashlib.sha256(x).digest()


def save_basis(path: str | Path, phi_tilde: np.ndarray, material_key, layout_key) -> Path:
    """Write ``Phi~`` as little-endian float64 rows after a fixed header."""
    path = Path(path)
    a = np.ascontiguousarray(phi_tilde, dtype="<f8")
    header = _HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1],
                          _digest(material_key), _digest(layout_key))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + a.tobytes())
    return path


def load_basis(path: str | Path, material_key=None, layout_key=None) -> np.ndarray:
    """Read a cached ``Phi~``; hashes are checked when keys are given."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigError(f"{path}: truncated basis cache")
    magic, version, rows, cols, mh, lh = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise ConfigError(f"{path}: not a version-{VERSION} basis cache")
    if material_key is not None and mh != _digest(material_key):
        raise ConfigError(f"{path}: material hash mismatch")
    if layout_key is not None and lh != _digest(layout_key):
        raise ConfigError(f"{path}: layout hash mismatch")
    body = raw[_HEADER.size:]
    if len(body) != 8 * rows * cols:
        raise ConfigError(f"{path}: expected {rows}x{cols} values")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(float)
