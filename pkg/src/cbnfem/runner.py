"""Case orchestration: solve, compare against the fine benchmark, write results.

Result files (CSV, VTK) depend only on the case and seed and are byte-stable.
Wall-clock times go to the JSON manifest and to separate ``*_timings.csv``
files so they never perturb the comparison tables.
"""
from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .baselines import homogenize_all, homogenized_solve, substructure_solve
from .cbn import STEPS, assemble_coarse, build_operators, build_trace_space, solve_cbn
from .condense import DEFAULT_CAP
from .config import CaseConfig, Problem, build_problem
from .errors import ConfigError
from .fem import FineSolution, assemble, assemble_lattice, solve_fine
from .mesh import BridgePolicy, classify_nodes
from .metrics import EffectivityReport, property_rows, property_suite, reports_to_csv
from .vtk import cell_strains, write_vtk

log = logging.getLogger(__name__)


class ComparisonError(ConfigError):
    """Cases handed to one comparison do not share a benchmark instance."""


@dataclass
class MethodResult:
    method: str
    u: np.ndarray
    energy: float
    dofs: int
    nnz: int
    rhs_columns: int                 # interior solves per condensed coarse element
    timings: dict = field(default_factory=dict)
    wall: float = 0.0


def solve_method(problem: Problem, method: str, reference: FineSolution | None = None,
                 policy: BridgePolicy | None = None, threads: int | None = None) -> MethodResult:
    """Run one method on ``problem``; ``reference`` is reused for ``method="fine"``."""
    cfg = problem.config
    h, mat, bcs = problem.hierarchy, problem.material, problem.bcs
    policy = policy or problem.policy
    threads = threads or cfg.threads
    kind, tol = cfg.solver.kind, cfg.solver.tol
    t0 = time.perf_counter()
    if method in ("cbn", "cbn-linear"):
        s = solve_cbn(h, mat, bcs, policy, "bezier" if method == "cbn" else "linear", kind, tol,
                      threads=threads, cache_dir=cfg.output.cache_dir)
        res = MethodResult(method, s.u, s.energy, s.space.n_dofs, s.coarse.nnz,
                           s.opset.rhs_per_element, dict(s.timings))
    elif method == "homog":
        s = homogenized_solve(h, homogenize_all(h, mat), bcs, kind, tol)
        res = MethodResult(method, s.u, s.energy, len(s.Q), s.nnz, s.rhs_per_element)
    elif method == "substructure":
        s = substructure_solve(h, mat, bcs, solver=kind, tol=tol)
        res = MethodResult(method, s.u, s.energy, s.cbn.space.n_dofs, s.nnz,
                           s.rhs_per_element, dict(s.cbn.timings))
    elif method == "fine":
        ref = reference if reference is not None else solve_fine(h, mat, bcs, kind, tol)
        res = MethodResult(method, ref.u, ref.energy, h.n_dofs, int(ref.system.K.nnz), 0)
    else:
        raise ConfigError(f"unknown method {method!r}")
    res.wall = time.perf_counter() - t0
    return res


def report(problem: Problem, res: MethodResult, reference: FineSolution,
           label: str | None = None) -> EffectivityReport:
    return EffectivityReport.compare(problem.config.name, label or res.method, res.energy, res.u,
                                     reference.energy, reference.u, problem.hierarchy,
                                     dofs=res.dofs, nnz=res.nnz, rhs_columns=res.rhs_columns)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    return {"cbnfem": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def _check_placement(problem: Problem):
    """Realise the trace space up front so placement errors precede any solve."""
    method = problem.config.method
    if method in ("cbn", "cbn-linear"):
        build_trace_space(problem.hierarchy, "bezier" if method == "cbn" else "linear",
                          problem.policy)


def run_case(cfg: CaseConfig, out: str | Path) -> dict:
    """Solve one case, write displacement VTK, effectivity CSV and a manifest.

    Returns the manifest dictionary (also written as ``<name>_<method>_manifest.json``).
    """
    out = Path(out)
    problem = build_problem(cfg)
    _check_placement(problem)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.name}_{cfg.method}"

    t0 = time.perf_counter()
    reference = None
    if cfg.reference or cfg.method == "fine":
        reference = solve_fine(problem.hierarchy, problem.material, problem.bcs,
                               cfg.solver.kind, cfg.solver.tol)
    t_ref = time.perf_counter() - t0
    res = solve_method(problem, cfg.method, reference)

    files = []
    if cfg.output.vtk:
        path = write_vtk(out / f"{stem}.vtk", problem.hierarchy, res.u,
                         modulus=problem.material.young_modulus,
                         strain=cell_strains(problem.hierarchy, res.u),
                         title=f"{cfg.name} {cfg.method} displacement")
        files.append(path)
    rep = None
    if reference is not None:
        rep = report(problem, res, reference)
        log.info(rep.log_line())
        path = out / f"{stem}.csv"
        reports_to_csv([rep], path)
        files.append(path)
    timings = {name: res.timings.get(name) for name in STEPS} if res.timings else {}
    manifest = {
        "name": cfg.name,
        "method": cfg.method,
        "seed": cfg.seed,
        "versions": _versions(),
        "config": cfg.to_dict(),
        "instance_hash": cfg.instance_hash(),
        "outputs": {p.name: _sha256(p) for p in files},
        "effectivity": None if rep is None else {"r_e": rep.r_e, "r_u": rep.r_u},
        "timings": {"steps": timings, "method_wall": res.wall, "benchmark_wall": t_ref},
    }
    (out / f"{stem}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def compare_cases(configs: list[CaseConfig], out: str | Path | None = None,
                  name: str = "compare") -> list[EffectivityReport]:
    """One row per method on a shared benchmark instance.

    Writes ``<name>.csv`` (method, dofs, nnz, r_e, r_u, local RHS count) and
    ``<name>_timings.csv`` (wall seconds per method) when ``out`` is given.
    """
    if not configs:
        raise ConfigError("nothing to compare")
    base = configs[0]
    for c in configs[1:]:
        if c.instance_hash() != base.instance_hash():
            raise ComparisonError(
                f"cases {base.name!r} and {c.name!r} describe different benchmark instances")
    problem = build_problem(base)
    for c in configs:
        _check_placement(Problem(c, problem.hierarchy, problem.material, problem.bcs,
                                 BridgePolicy(c.bridge.kind, c.bridge.k)))
    reference = solve_fine(problem.hierarchy, problem.material, problem.bcs,
                           base.solver.kind, base.solver.tol)
    rows, times = [], []
    for c in configs:
        p = Problem(c, problem.hierarchy, problem.material, problem.bcs,
                    BridgePolicy(c.bridge.kind, c.bridge.k))
        res = solve_method(p, c.method, reference)
        label = c.method if len(configs) == len({x.method for x in configs}) \
            else f"{c.method}:{c.name}"
        rep = report(p, res, reference, label)
        rep.instance = base.name
        rows.append(rep)
        times.append({"method": label, "seconds": res.wall})
        log.info(rep.log_line())
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        reports_to_csv(rows, out / f"{name}.csv")
        reports_to_csv(times, out / f"{name}_timings.csv")
    return rows


def sparsity_report(cfg: CaseConfig, cap: int = DEFAULT_CAP) -> list[dict]:
    """Global stiffness sizes and nonzeros of each method, without solving."""
    problem = build_problem(cfg)
    h, mat, bcs = problem.hierarchy, problem.material, problem.bcs
    rows = []
    K = assemble(h, mat, bcs).K
    rows.append({"method": "fine", "dofs": K.shape[0], "nnz": int(K.nnz), "rhs_columns": 0})
    for method, kind, policy in (("cbn", "bezier", problem.policy),
                                 ("cbn-linear", "linear", problem.policy),
                                 ("substructure", "identity", BridgePolicy("all"))):
        if method == "substructure":
            nb = h.dim * len(classify_nodes(h.elements[0]).boundary)
            if nb > cap:
                log.warning("substructuring skipped: %d RHS per element above cap %d", nb, cap)
                continue
        opset = build_operators(h, mat, build_trace_space(h, kind, policy), threads=cfg.threads)
        coarse = assemble_coarse(h, opset, bcs)
        rows.append({"method": method, "dofs": coarse.K.shape[0], "nnz": coarse.nnz,
                     "rhs_columns": opset.rhs_per_element})
    tensors = homogenize_all(h, mat)
    Kh = assemble_lattice(h.coarse_counts, h.coarse_size, np.array([t.D for t in tensors]))
    rows.append({"method": "homog", "dofs": Kh.shape[0], "nnz": int(Kh.nnz),
                 "rhs_columns": max(t.rhs_columns for t in tensors)})
    return rows


def property_report(cfg: CaseConfig, trials: int = 100, max_elements: int | None = None
                    ) -> list[dict]:
    """Shape-function property checks on every (or the first few) coarse element(s)."""
    problem = build_problem(cfg)
    h = problem.hierarchy
    kind = "linear" if cfg.method == "cbn-linear" else "bezier"
    opset = build_operators(h, problem.material, build_trace_space(h, kind, problem.policy),
                            threads=cfg.threads)
    rows = []
    for op in opset.operators[:max_elements]:
        rows += property_rows(property_suite(op, trials, seed=cfg.seed + op.element.id),
                              op.element.id)
    return rows

