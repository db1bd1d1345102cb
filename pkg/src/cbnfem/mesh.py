"""Two-level structured grids, node classification and CBN placement.

Index conventions used throughout the package:

* Tuples of per-axis counts/sizes are given in axis order ``(x, y[, z])``.
* Nodes and elements are numbered lexicographically by ``(z, y, x)`` grid
  index, i.e. ``x`` varies fastest (the same order VTK structured points use).
* Curved-bridge-node stations are identified by integer keys on a lattice
  three times finer than the fine grid, so stations at 1/3 and 2/3 of a
  segment have exact integer coordinates and can be matched across elements
  without floating point comparisons.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product
from typing import Sequence

import numpy as np

from .errors import ConfigError, PlacementError


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def lattice_index(counts: Sequence[int]) -> np.ndarray:
    """Grid indices of all lattice points ``0..counts[k]`` per axis.

    Returns an ``(n_points, dim)`` int array in lexicographic (z, y, x) order.
    """
    dim = len(counts)
    grids = np.indices([c + 1 for c in reversed(counts)]).reshape(dim, -1)
    return grids[::-1].T.copy()


def flat_index(idx: np.ndarray, counts: Sequence[int]) -> np.ndarray:
    """Flatten per-axis lattice indices (points ``0..counts[k]``)."""
    idx = np.asarray(idx)
    flat = np.zeros(idx.shape[:-1], dtype=np.int64)
    stride = 1
    for k, c in enumerate(counts):
        flat = flat + idx[..., k] * stride
        stride *= c + 1
    return flat


# corner sign patterns of the master element, in the order of the
# linear/bilinear/trilinear shape functions
CORNERS_1D = np.array([[-1], [1]])
CORNERS_2D = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]])
CORNERS_3D = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
                       [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]])


def master_corners(dim: int) -> np.ndarray:
    return {1: CORNERS_1D, 2: CORNERS_2D, 3: CORNERS_3D}[dim]


def grid_connectivity(counts: Sequence[int]) -> np.ndarray:
    """Node ids of every cell of a structured lattice.

    ``counts`` are cells per axis.  Rows are in lexicographic cell order and
    each row lists the ``2**dim`` corner nodes in master-element order.
    """
    dim = len(counts)
    cells = np.indices([c for c in reversed(counts)]).reshape(dim, -1)[::-1].T
    offsets = (master_corners(dim) + 1) // 2
    return flat_index(cells[:, None, :] + offsets[None, :, :], counts)


@dataclass(frozen=True)
class CoarseElementMesh:
    """One coarse element and the bookkeeping of its local fine grid."""

    id: int
    index: tuple[int, ...]
    origin: np.ndarray
    fine_counts: tuple[int, ...]
    fine_size: tuple[float, ...]
    offset: tuple[int, ...]          # global fine index of the local origin
    node_ids: np.ndarray             # global node id of every local node
    element_ids: np.ndarray          # global fine element id of every local cell

    @property
    def dim(self) -> int:
        return len(self.fine_counts)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_fine(self) -> int:
        return len(self.element_ids)

    @property
    def size(self) -> np.ndarray:
        return np.array(self.fine_counts) * np.array(self.fine_size)

    def local_index(self) -> np.ndarray:
        return lattice_index(self.fine_counts)

    def connectivity(self) -> np.ndarray:
        """Local connectivity (local node ids) of the fine cells."""
        return grid_connectivity(self.fine_counts)

    def node_coords(self) -> np.ndarray:
        gidx = self.local_index() + np.array(self.offset)
        return gidx * np.array(self.fine_size)


@dataclass(frozen=True)
class MeshHierarchy:
    dim: int
    coarse_counts: tuple[int, ...]
    fine_counts: tuple[int, ...]
    coarse_size: tuple[float, ...]
    elements: tuple[CoarseElementMesh, ...] = field(repr=False)

    @property
    def n_coarse(self) -> int:
        return int(np.prod(self.coarse_counts))

    @property
    def fine_per_coarse(self) -> int:
        return int(np.prod(self.fine_counts))

    @property
    def global_counts(self) -> tuple[int, ...]:
        return tuple(c * f for c, f in zip(self.coarse_counts, self.fine_counts))

    @property
    def fine_size(self) -> tuple[float, ...]:
        return tuple(s / f for s, f in zip(self.coarse_size, self.fine_counts))

    @property
    def n_nodes(self) -> int:
        return int(np.prod([c + 1 for c in self.global_counts]))

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.global_counts))

    @property
    def n_dofs(self) -> int:
        return self.dim * self.n_nodes

    @property
    def domain_size(self) -> np.ndarray:
        return np.array(self.coarse_counts) * np.array(self.coarse_size)

    def node_index(self) -> np.ndarray:
        return lattice_index(self.global_counts)

    def node_coords(self) -> np.ndarray:
        return self.node_index() * np.array(self.fine_size)

    def connectivity(self) -> np.ndarray:
        return grid_connectivity(self.global_counts)

    def element_centroids(self) -> np.ndarray:
        dim = self.dim
        cells = np.indices(list(reversed(self.global_counts))).reshape(dim, -1)[::-1].T
        return (cells + 0.5) * np.array(self.fine_size)

    def nodal_weights(self) -> np.ndarray:
        """Lumped nodal volumes: each cell gives volume / 2**dim to its corners."""
        w = np.zeros(self.n_nodes)
        vol = float(np.prod(self.fine_size))
        np.add.at(w, self.connectivity().ravel(), vol / 2 ** self.dim)
        return w

    def skeleton_nodes(self) -> np.ndarray:
        """Global ids of fine nodes lying on some coarse element boundary."""
        idx = self.node_index()
        on = np.zeros(len(idx), dtype=bool)
        for k, f in enumerate(self.fine_counts):
            on |= idx[:, k] % f == 0
        return np.flatnonzero(on)


def build_hierarchy(dim: int, coarse_counts: Sequence[int], fine_counts: Sequence[int],
                    sizes: Sequence[float]) -> MeshHierarchy:
    """Build a conforming two-level grid.

    ``sizes`` is the edge length of one coarse element per axis.
    """
    if dim not in (2, 3):
        raise ConfigError(f"dim must be 2 or 3, got {dim}")
    coarse_counts, fine_counts = tuple(coarse_counts), tuple(fine_counts)
    sizes = tuple(float(s) for s in sizes)
    for name, seq in (("coarse_counts", coarse_counts), ("fine_counts", fine_counts),
                      ("sizes", sizes)):
        if len(seq) != dim:
            raise ConfigError(f"{name} needs {dim} entries, got {len(seq)}")
    if any(int(c) != c or c < 1 for c in coarse_counts + fine_counts):
        raise ConfigError(f"counts must be integers >= 1: coarse={coarse_counts}, "
                          f"fine={fine_counts}")
    if any(not np.isfinite(s) or s <= 0 for s in sizes):
        raise ConfigError(f"sizes must be positive: {sizes}")
    coarse_counts = tuple(int(c) for c in coarse_counts)
    fine_counts = tuple(int(c) for c in fine_counts)
    global_counts = tuple(c * f for c, f in zip(coarse_counts, fine_counts))
    fine_size = tuple(s / f for s, f in zip(sizes, fine_counts))

    local_nodes = lattice_index(fine_counts)
    local_cells = np.indices(list(reversed(fine_counts))).reshape(dim, -1)[::-1].T
    elements = []
    for eid, cidx in enumerate(product(*(range(c) for c in reversed(coarse_counts)))):
        cidx = tuple(reversed(cidx))
        offset = tuple(i * f for i, f in zip(cidx, fine_counts))
        node_ids = flat_index(local_nodes + np.array(offset), global_counts)
        # cell lattice has counts-1 "points" per axis
        cell_ids = flat_index(local_cells + np.array(offset), [g - 1 for g in global_counts])
        elements.append(CoarseElementMesh(
            id=eid, index=cidx,
            origin=_freeze(np.array(offset) * np.array(fine_size)),
            fine_counts=fine_counts, fine_size=fine_size, offset=offset,
            node_ids=_freeze(node_ids), element_ids=_freeze(cell_ids)))
    return MeshHierarchy(dim, coarse_counts, fine_counts, sizes, tuple(elements))


# ---------------------------------------------------------------------------
# node sets and bridge policies


@dataclass(frozen=True)
class BridgePolicy:
    """Selection of bridge nodes on every side of a coarse element.

    ``kind`` is ``"corners"``, ``"per_side"`` (``k`` equally spaced bridge
    nodes per side, corners included) or ``"all"``.  In 3D the same count is
    used along both directions of each face, giving a ``k x k`` grid.
    """

    kind: str = "corners"
    k: int | None = None

    def __post_init__(self):
        if self.kind not in ("corners", "per_side", "all"):
            raise ConfigError(f"unknown bridge policy {self.kind!r}")
        if self.kind == "per_side" and (self.k is None or self.k < 2):
            raise PlacementError(f"per_side bridge policy needs k >= 2, got {self.k}")

    def count(self, n: int) -> int:
        """Bridge nodes along a side with ``n`` fine elements."""
        if self.kind == "corners":
            return 2
        if self.kind == "all":
            return n + 1
        if n % (self.k - 1):
            raise PlacementError(
                f"{self.k} bridge nodes per side do not divide a side of {n} fine "
                f"elements evenly ((n_nodes - 1) % (k - 1) != 0)")
        return self.k

    def step(self, n: int) -> int:
        return n // (self.count(n) - 1)

    def describe(self) -> str:
        return self.kind if self.k is None else f"{self.kind}:{self.k}"


@dataclass(frozen=True)
class NodeSets:
    corner: np.ndarray
    boundary: np.ndarray
    interior: np.ndarray
    bridge: np.ndarray


def classify_nodes(element: CoarseElementMesh,
                   policy: BridgePolicy | None = None) -> NodeSets:
    """Corner/boundary/interior/bridge local node ids, each sorted ascending."""
    policy = policy or BridgePolicy()
    idx = element.local_index()
    n = np.array(element.fine_counts)
    at_min, at_max = idx == 0, idx == n
    extreme = at_min | at_max
    boundary = extreme.any(axis=1)
    corner = extreme.all(axis=1)

    steps = np.array([policy.step(int(c)) for c in n])
    on_bridge_line = idx % steps == 0
    if element.dim == 2:
        # a side node is a bridge node if its along-side index hits the step
        bridge = boundary & on_bridge_line.all(axis=1)
    else:
        # node on a face: both in-face indices must hit the step
        bridge = np.zeros(len(idx), dtype=bool)
        for f in range(3):
            on_face = extreme[:, f]
            others = [a for a in range(3) if a != f]
            bridge |= on_face & on_bridge_line[:, others].all(axis=1)
    return NodeSets(*(_freeze(np.flatnonzero(m)) for m in (corner, boundary, ~boundary, bridge)))


@dataclass(frozen=True)
class Segment:
    """Straight 2D bridge segment; parameter t runs along +axis."""

    axis: int
    fixed: int               # local index on the other axis
    start: int
    end: int
    cbn: tuple[int, ...]     # local CBN indices at t = 0, 1/3, 2/3, 1


@dataclass(frozen=True)
class Patch:
    """Bicubic bridge face patch on a coarse element face."""

    normal: int              # axis held fixed
    fixed: int               # local index along the normal axis
    axes: tuple[int, int]    # in-face axes (u, v)
    start: tuple[int, int]
    end: tuple[int, int]
    cbn: np.ndarray          # (4, 4) local CBN indices, [i_u, i_v]


@dataclass(frozen=True)
class CbnLayout:
    """Curved-bridge-node stations of one coarse element.

    ``keys`` are global third-lattice integer coordinates, sorted
    lexicographically by (z, y, x); the local CBN index is the row index.
    """

    dim: int
    segments: tuple[Segment, ...]
    patches: tuple[Patch, ...]
    keys: np.ndarray
    coords: np.ndarray
    bridge_nodes: np.ndarray
    global_ids: np.ndarray | None = None

    @property
    def n_cbn(self) -> int:
        return len(self.keys)

    @property
    def dof_count(self) -> int:
        return self.dim * self.n_cbn

    def global_dofs(self) -> np.ndarray:
        if self.global_ids is None:
            raise ConfigError("CBN layout has not been globally numbered")
        d = self.dim
        return (d * self.global_ids[:, None] + np.arange(d)).ravel()

    def signature(self) -> bytes:
        """Translation-invariant description used for caching."""
        rel = self.keys - self.keys.min(axis=0)
        parts = [rel.tobytes(), np.array([self.dim]).tobytes()]
        for s in self.segments:
            parts.append(np.array([s.axis, s.fixed, s.start, s.end, *s.cbn]).tobytes())
        for p in self.patches:
            parts.append(np.array([p.normal, p.fixed, *p.start, *p.end]).tobytes())
            parts.append(p.cbn.tobytes())
        return b"|".join(parts)


def _sort_keys(keys: np.ndarray) -> np.ndarray:
    order = np.lexsort(keys.T)  # last column is the primary key: (z, y, x)
    return keys[order]


def place_cbns(element: CoarseElementMesh, node_sets: NodeSets,
               policy: BridgePolicy | None = None) -> CbnLayout:
    """Place CBN stations on every bridge segment (2D) or bridge patch (3D)."""
    policy = policy or BridgePolicy()
    boundary = set(node_sets.boundary.tolist())
    stray = [int(b) for b in node_sets.bridge if int(b) not in boundary]
    if stray:
        raise PlacementError(f"bridge nodes {stray[:5]} are not boundary nodes")
    if not set(node_sets.corner.tolist()) <= set(node_sets.bridge.tolist()):
        raise PlacementError("bridge nodes must include every corner node")
    expected = classify_nodes(element, policy).bridge
    if not np.array_equal(np.sort(node_sets.bridge), expected):
        raise PlacementError("bridge node set does not match the requested policy "
                             f"{policy.describe()}")

    n = element.fine_counts
    off3 = 3 * np.array(element.offset)
    steps = [policy.step(c) for c in n]
    raw_keys: list[tuple[int, ...]] = []
    seg_specs, patch_specs = [], []

    def lines(axis):
        return list(range(0, n[axis] + 1, steps[axis]))

    if element.dim == 2:
        # sides in counter-clockwise order, each oriented along +axis
        sides = [(0, 0), (1, n[0]), (0, n[1]), (1, 0)]
        for axis, fixed in sides:
            stops = lines(axis)
            for a, b in zip(stops[:-1], stops[1:]):
                keys = []
                for j in range(4):
                    key = [0, 0]
                    key[axis] = 3 * a + j * (b - a)
                    key[1 - axis] = 3 * fixed
                    keys.append(tuple(key + off3))
                raw_keys.extend(keys)
                seg_specs.append((axis, fixed, a, b, keys))
    else:
        for normal in range(3):
            u, v = [a for a in range(3) if a != normal]
            for fixed in (0, n[normal]):
                su, sv = lines(u), lines(v)
                for (a0, a1), (b0, b1) in product(zip(su[:-1], su[1:]), zip(sv[:-1], sv[1:])):
                    keys = np.empty((4, 4), dtype=object)
                    for i, j in product(range(4), range(4)):
                        key = [0, 0, 0]
                        key[normal] = 3 * fixed
                        key[u] = 3 * a0 + i * (a1 - a0)
                        key[v] = 3 * b0 + j * (b1 - b0)
                        keys[i, j] = tuple(key + off3)
                        raw_keys.append(keys[i, j])
                    patch_specs.append((normal, fixed, (u, v), (a0, b0), (a1, b1), keys))

    keys = _sort_keys(np.unique(np.array(raw_keys, dtype=np.int64), axis=0))
    lookup = {tuple(k): i for i, k in enumerate(keys.tolist())}
    segments = tuple(Segment(axis, fixed, a, b, tuple(lookup[k] for k in ks))
                     for axis, fixed, a, b, ks in seg_specs)
    patches = []
    for normal, fixed, axes, start, end, ks in patch_specs:
        ids = np.array([[lookup[ks[i, j]] for j in range(4)] for i in range(4)])
        patches.append(Patch(normal, fixed, axes, start, end, _freeze(ids)))
    coords = (keys / 3.0) * np.array(element.fine_size)
    return CbnLayout(element.dim, segments, tuple(patches), _freeze(keys), _freeze(coords),
                     node_sets.bridge)


@dataclass(frozen=True)
class CbnNumbering:
    """Global CBN numbering over a hierarchy."""

    layouts: tuple[CbnLayout, ...]
    node_sets: tuple[NodeSets, ...]
    keys: np.ndarray
    coords: np.ndarray
    policy: BridgePolicy

    @property
    def n_cbn(self) -> int:
        return len(self.keys)

    @property
    def n_dofs(self) -> int:
        return self.layouts[0].dim * self.n_cbn


def build_layouts(hierarchy: MeshHierarchy, policy: BridgePolicy | None = None) -> CbnNumbering:
    """Classify, place and globally number CBNs for every coarse element."""
    policy = policy or BridgePolicy()
    sets, layouts = [], []
    for el in hierarchy.elements:
        ns = classify_nodes(el, policy)
        sets.append(ns)
        layouts.append(place_cbns(el, ns, policy))
    all_keys = _sort_keys(np.unique(np.concatenate([l.keys for l in layouts]), axis=0))
    lookup = {tuple(k): i for i, k in enumerate(all_keys.tolist())}
    numbered = tuple(replace(l, global_ids=_freeze(np.array([lookup[tuple(k)] for k in l.keys.tolist()])))
                     for l in layouts)
    coords = (all_keys / 3.0) * np.array(hierarchy.fine_size)
    return CbnNumbering(numbered, tuple(sets), _freeze(all_keys), _freeze(coords), policy)
