"""Declarative case files (YAML) and their translation into model objects.

A case file is a nested mapping; every section is a dataclass below and
unknown keys are rejected with the dotted path of the offending entry::

    name: half_mbb
    mesh: {dim: 2, coarse: [4, 2], fine: [10, 10], size: [1.0, 1.0]}
    material:
      matrix: {E: 1000.0, nu: 0.3}
      regions:
        - {shape: ellipse, E: 1.0, center: [0.5, 0.5], semi_axes: [0.3, 0.2], per_coarse: true}
    bridge: {kind: corners}
    boundary:
      fix: [{box: [0, null], components: [0]}, {box: [4, 0], components: [1]}]
      loads: [{box: [0, 2], component: 1, value: -1.0}]
    method: cbn

Boxes list one entry per axis: ``null`` (unbounded), a number (that
coordinate exactly) or ``[lo, hi]``.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .fem import BoundaryConditions, select_nodes, traction_load
from .material import MODELS, MaterialField, Region, load_modulus_array, rasterize_inclusion
from .mesh import BridgePolicy, MeshHierarchy, build_hierarchy

METHODS = ("cbn", "cbn-linear", "homog", "fine", "substructure")


@dataclass
class MeshSpec:
    dim: int = 2
    coarse: list = field(default_factory=lambda: [4, 2])
    fine: list = field(default_factory=lambda: [10, 10])
    size: list | None = None            # coarse element edge lengths; unit cells by default


@dataclass
class MatrixSpec:
    E: float = 1e3
    nu: float = 0.3


@dataclass
class RegionSpec:
    shape: str
    E: float
    nu: float = 0.3
    center: list | None = None
    semi_axes: list | None = None
    lo: list | None = None
    hi: list | None = None
    normal: list | None = None
    offset: float = 0.0
    per_coarse: bool = False


@dataclass
class RandomSpec:
    """Per-fine-element moduli ``E = 10**U(log10_min, log10_max)`` drawn from the case seed."""
    log10_min: float = 0.0
    log10_max: float = 6.0
    nu: float = 0.3


@dataclass
class MaterialSpec:
    model: str | None = None
    matrix: MatrixSpec = field(default_factory=MatrixSpec)
    regions: list[RegionSpec] = field(default_factory=list)
    modulus_file: str | None = None
    random: RandomSpec | None = None


@dataclass
class BridgeSpec:
    kind: str = "corners"
    k: int | None = None


@dataclass
class FixSpec:
    box: list
    components: list | None = None      # all components when omitted
    value: float = 0.0


@dataclass
class LoadSpec:
    """Force ``value`` on every node in ``box``."""
    box: list
    component: int
    value: float


@dataclass
class TractionSpec:
    """Traction on the domain face ``side`` of ``axis``.

    ``profile: parabolic`` scales ``value`` by ``max(0, 1 - ((x_along - center) / half_width)^2)``.
    """
    axis: int
    side: str
    value: list
    profile: str = "constant"
    along: int | None = None
    center: float = 0.0
    half_width: float = 1.0


@dataclass
class BoundarySpec:
    fix: list[FixSpec] = field(default_factory=list)
    loads: list[LoadSpec] = field(default_factory=list)
    tractions: list[TractionSpec] = field(default_factory=list)


@dataclass
class SolverSpec:
    kind: str = "direct"
    tol: float = 1e-10


@dataclass
class OutputSpec:
    vtk: bool = True
    cache_dir: str | None = None


@dataclass
class CaseConfig:
    name: str = "case"
    mesh: MeshSpec = field(default_factory=MeshSpec)
    material: MaterialSpec = field(default_factory=MaterialSpec)
    bridge: BridgeSpec = field(default_factory=BridgeSpec)
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    method: str = "cbn"
    reference: bool = True              # also solve the fine benchmark and report effectivity
    output: OutputSpec = field(default_factory=OutputSpec)
    seed: int = 0
    threads: int = 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def instance_hash(self) -> str:
        """Digest of everything that defines the benchmark problem."""
        d = self.to_dict()
        key = {k: d[k] for k in ("mesh", "material", "boundary")}
        if self.material.random is not None:
            key["seed"] = self.seed
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# parsing


def _unwrap_optional(tp):
    if typing.get_origin(tp) is typing.Union or type(tp).__name__ == "UnionType":
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(map(repr, unknown))}")
    kwargs = {}
    for name, value in data.items():
        tp = _unwrap_optional(hints[name])
        sub = f"{path}.{name}"
        if dataclasses.is_dataclass(tp):
            kwargs[name] = None if value is None else _build(tp, value, sub)
        elif typing.get_origin(tp) is list and typing.get_args(tp) \
                and dataclasses.is_dataclass(typing.get_args(tp)[0]):
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list")
            item = typing.get_args(tp)[0]
            kwargs[name] = [_build(item, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _require(cond: bool, path: str, msg: str):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _number(v, path: str, positive: bool = False) -> float:
    _require(isinstance(v, (int, float)) and not isinstance(v, bool), path,
             f"expected a number, got {v!r}")
    _require(np.isfinite(v), path, "must be finite")
    if positive:
        _require(v > 0, path, f"must be positive, got {v!r}")
    return float(v)


def _int_list(v, n: int, path: str, minimum: int = 1) -> list[int]:
    _require(isinstance(v, list) and len(v) == n, path, f"expected a list of {n} integers")
    for i, x in enumerate(v):
        _require(isinstance(x, int) and not isinstance(x, bool) and x >= minimum,
                 f"{path}[{i}]", f"expected an integer >= {minimum}, got {x!r}")
    return v


def _check_nu(nu, path: str):
    _number(nu, path)
    _require(0 <= nu < 0.5, path, f"Poisson ratio must satisfy 0 <= nu < 0.5, got {nu!r}")


def _check_box(box, dim: int, path: str):
    _require(isinstance(box, list) and len(box) == dim, path,
             f"expected {dim} axis entries (null, a number or [lo, hi])")
    for i, r in enumerate(box):
        if r is None or isinstance(r, (int, float)):
            continue
        _require(isinstance(r, list) and len(r) == 2
                 and all(x is None or isinstance(x, (int, float)) for x in r),
                 f"{path}[{i}]", "expected null, a number or [lo, hi]")


def validate(cfg: CaseConfig) -> CaseConfig:
    """Check every field before any computation; raises :class:`ConfigError`."""
    m = cfg.mesh
    _require(m.dim in (2, 3), "mesh.dim", f"must be 2 or 3, got {m.dim!r}")
    _int_list(m.coarse, m.dim, "mesh.coarse")
    _int_list(m.fine, m.dim, "mesh.fine")
    if m.size is not None:
        _require(isinstance(m.size, list) and len(m.size) == m.dim, "mesh.size",
                 f"expected {m.dim} edge lengths")
        for i, s in enumerate(m.size):
            _number(s, f"mesh.size[{i}]", positive=True)

    mat = cfg.material
    _require(mat.model is None or mat.model in MODELS, "material.model",
             f"must be one of {MODELS}")
    if mat.model is not None:
        _require((mat.model == "3d") == (m.dim == 3), "material.model",
                 f"{mat.model!r} does not fit a {m.dim}D mesh")
    _number(mat.matrix.E, "material.matrix.E", positive=True)
    _check_nu(mat.matrix.nu, "material.matrix.nu")
    for i, r in enumerate(mat.regions):
        p = f"material.regions[{i}]"
        _require(r.shape in ("ellipse", "box", "halfspace"), f"{p}.shape",
                 f"unknown shape {r.shape!r}")
        _number(r.E, f"{p}.E", positive=True)
        _check_nu(r.nu, f"{p}.nu")
        for name in ("center", "semi_axes", "lo", "hi", "normal"):
            v = getattr(r, name)
            if v is not None:
                _require(isinstance(v, list) and len(v) == m.dim, f"{p}.{name}",
                         f"expected {m.dim} numbers")
    sources = [mat.modulus_file is not None, mat.random is not None]
    _require(sum(sources) <= 1, "material", "modulus_file and random are exclusive")
    if mat.random is not None:
        _check_nu(mat.random.nu, "material.random.nu")
        _require(mat.random.log10_min <= mat.random.log10_max, "material.random",
                 "log10_min must not exceed log10_max")

    _require(cfg.bridge.kind in ("corners", "per_side", "all"), "bridge.kind",
             f"unknown policy {cfg.bridge.kind!r}")
    for i, f in enumerate(cfg.boundary.fix):
        p = f"boundary.fix[{i}]"
        _check_box(f.box, m.dim, f"{p}.box")
        if f.components is not None:
            _require(isinstance(f.components, list)
                     and all(c in range(m.dim) for c in f.components),
                     f"{p}.components", f"expected components in 0..{m.dim - 1}")
        _number(f.value, f"{p}.value")
    for i, f in enumerate(cfg.boundary.loads):
        p = f"boundary.loads[{i}]"
        _check_box(f.box, m.dim, f"{p}.box")
        _require(f.component in range(m.dim), f"{p}.component", "out of range")
        _number(f.value, f"{p}.value")
    for i, t in enumerate(cfg.boundary.tractions):
        p = f"boundary.tractions[{i}]"
        _require(t.axis in range(m.dim), f"{p}.axis", "out of range")
        _require(t.side in ("min", "max"), f"{p}.side", "must be 'min' or 'max'")
        _require(isinstance(t.value, list) and len(t.value) == m.dim, f"{p}.value",
                 f"expected {m.dim} traction components")
        _require(t.profile in ("constant", "parabolic"), f"{p}.profile",
                 "must be 'constant' or 'parabolic'")
        if t.along is not None:
            _require(t.along in range(m.dim) and t.along != t.axis, f"{p}.along",
                     "must be a face direction")
        _number(t.half_width, f"{p}.half_width", positive=True)
    _require(cfg.solver.kind in ("direct", "cg"), "solver.kind", "must be 'direct' or 'cg'")
    _number(cfg.solver.tol, "solver.tol", positive=True)
    _require(cfg.method in METHODS, "method", f"must be one of {METHODS}")
    _require(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed", "expected a non-negative int")
    _require(isinstance(cfg.threads, int) and cfg.threads >= 1, "threads",
             "expected a positive int")
    return cfg


def parse_config(data: dict) -> CaseConfig:
    return validate(_build(CaseConfig, copy.deepcopy(data), "config"))


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e3``-style floats as numbers."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                  |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                  |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                  |[-+]?\.(?:inf|Inf|INF)
                  |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_config(path: str | Path) -> CaseConfig:
    path = Path(path)
    try:
        data = yaml.load(path.read_text(), Loader=_Loader)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    try:
        return parse_config(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_config(cfg: CaseConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# ---------------------------------------------------------------------------
# model construction


@dataclass
class Problem:
    config: CaseConfig
    hierarchy: MeshHierarchy
    material: MaterialField
    bcs: BoundaryConditions
    policy: BridgePolicy


def _box(box):
    return [tuple(r) if isinstance(r, list) else r for r in box]


def _traction_fn(t: TractionSpec, dim: int):
    value = np.asarray(t.value, dtype=float)
    along = t.along if t.along is not None else next(a for a in range(dim) if a != t.axis)

    def fn(x):
        if t.profile == "constant":
            scale = np.ones(len(x))
        else:
            scale = np.clip(1.0 - ((x[:, along] - t.center) / t.half_width) ** 2, 0.0, None)
        return scale[:, None] * value[None, :]

    return fn


def build_problem(cfg: CaseConfig) -> Problem:
    """Mesh, material, boundary conditions and bridge policy of a validated case."""
    m = cfg.mesh
    h = build_hierarchy(m.dim, m.coarse, m.fine, m.size or [1.0] * m.dim)
    policy = BridgePolicy(cfg.bridge.kind, cfg.bridge.k)
    mat_spec = cfg.material
    model = mat_spec.model
    if mat_spec.modulus_file is not None:
        material = load_modulus_array(mat_spec.modulus_file, h, mat_spec.matrix.nu, model)
    elif mat_spec.random is not None:
        rng = np.random.default_rng(cfg.seed)
        r = mat_spec.random
        E = 10.0 ** rng.uniform(r.log10_min, r.log10_max, h.n_elements)
        material = MaterialField(E, np.full(h.n_elements, r.nu),
                                 model or ("3d" if m.dim == 3 else "plane_stress"))
    else:
        regions = [Region(**{k: tuple(v) if isinstance(v, list) else v
                             for k, v in dataclasses.asdict(r).items()})
                   for r in mat_spec.regions]
        material = rasterize_inclusion(regions, h, mat_spec.matrix.E, mat_spec.matrix.nu,
                                       model)
    material.check(h)
    X = h.node_coords()
    bcs = BoundaryConditions()
    for i, f in enumerate(cfg.boundary.fix):
        nodes = select_nodes(X, _box(f.box))
        if len(nodes) == 0:
            raise ConfigError(f"boundary.fix[{i}].box selects no nodes")
        for c in (f.components if f.components is not None else range(m.dim)):
            bcs.fix(nodes, c, f.value)
    for i, f in enumerate(cfg.boundary.loads):
        nodes = select_nodes(X, _box(f.box))
        if len(nodes) == 0:
            raise ConfigError(f"boundary.loads[{i}].box selects no nodes")
        bcs.load(nodes, f.component, f.value)
    for t in cfg.boundary.tractions:
        bcs.add_traction(traction_load(h, t.axis, t.side, _traction_fn(t, m.dim)))
    return Problem(cfg, h, material, bcs, policy)
