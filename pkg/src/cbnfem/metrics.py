"""Effectivity indices and shape-function property checks."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .cbn import CoarseElementOperator, shape_eval, shape_gradient
from .errors import NumericalError
from .mesh import MeshHierarchy, flat_index


class UndefinedIndexError(NumericalError):
    """Effectivity index with a zero reference quantity."""


def effectivity_energy(e1: float, e0: float) -> float:
    """``(e1 - e0)^2 / e0^2``."""
    if e0 == 0:
        raise UndefinedIndexError("reference energy is zero; effectivity index undefined")
    return float((e1 - e0) ** 2 / e0 ** 2)


def effectivity_displacement(u1: np.ndarray, u0: np.ndarray,
                             hierarchy: MeshHierarchy | None = None,
                             weights: np.ndarray | None = None) -> float:
    """Discrete ``int (u1-u0)^2 / int u0^2`` with lumped nodal weights."""
    u1, u0 = np.asarray(u1, dtype=float), np.asarray(u0, dtype=float)
    if u1.shape != u0.shape:
        raise ValueError(f"field shapes differ: {u1.shape} vs {u0.shape}")
    if weights is None:
        if hierarchy is None:
            weights = np.ones(len(u0))
        else:
            weights = np.repeat(hierarchy.nodal_weights(), hierarchy.dim)
    den = float(weights @ (u0 * u0))
    if den == 0:
        raise UndefinedIndexError("reference displacement is zero; effectivity index undefined")
    diff = u1 - u0
    return float(weights @ (diff * diff)) / den


@dataclass
class EffectivityReport:
    instance: str
    method: str
    r_e: float
    r_u: float
    e0: float
    e1: float
    dofs: int = 0
    nnz: int = 0
    rhs_columns: int = 0        # interior solves per condensed coarse element

    @classmethod
    def compare(cls, instance: str, method: str, e1: float, u1, e0: float, u0,
                hierarchy: MeshHierarchy, **extra) -> "EffectivityReport":
        return cls(instance, method, effectivity_energy(e1, e0),
                   effectivity_displacement(u1, u0, hierarchy), e0, e1, **extra)

    def log_line(self) -> str:
        return (f"{self.instance} {self.method} r_e={self.r_e:.6e} r_u={self.r_u:.6e} "
                f"e0={self.e0:.17g} e1={self.e1:.17g}")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def reports_to_csv(rows: list, path: str | Path | None = None) -> str:
    """Serialize dataclass rows (or dicts) to CSV with round-trippable floats."""
    if not rows:
        return ""
    dicts = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in rows]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(dicts[0]), lineterminator="\n")
    writer.writeheader()
    for d in dicts:
        writer.writerow({k: _fmt(v) for k, v in d.items()})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_reports(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# shape-function property checks


@dataclass
class PropertyResult:
    name: str
    violation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.violation <= self.tolerance)


DEFAULT_TOLERANCES = {"node_interpolation": 0.0, "partition_of_unity": 1e-12,
                      "rotation_invariance": 1e-10, "rigid_strain": 1e-10}


def rotation_vector(coords: np.ndarray, theta) -> np.ndarray:
    """Infinitesimal rotation ``theta x X`` sampled at ``coords``; flat dof vector."""
    if coords.shape[1] == 2:
        return np.column_stack([-theta * coords[:, 1], theta * coords[:, 0]]).ravel()
    return np.cross(np.asarray(theta, dtype=float), coords).ravel()


def random_interior_points(op: CoarseElementOperator, n: int, rng: np.random.Generator,
                           margin: float = 1e-3) -> np.ndarray:
    """Points strictly inside fine elements of ``op``'s coarse element."""
    el = op.element
    counts = np.array(el.fine_counts)
    cells = rng.integers(0, counts, size=(n, el.dim))
    frac = rng.uniform(margin, 1 - margin, size=(n, el.dim))
    return el.origin + (cells + frac) * np.array(el.fine_size)


def property_suite(op: CoarseElementOperator, trials: int = 100, tolerances: dict | None = None,
                   seed: int = 0, bridge_points: np.ndarray | None = None) -> list[PropertyResult]:
    """Check node interpolation, partition of unity and rotation invariance.

    Node interpolation is checked at the coarse points that coincide with
    fine nodes and carry a unit row of the trace map (bridge nodes).  The
    Bezier stations at 1/3 and 2/3 are control values, not interpolated.
    """
    tol = dict(DEFAULT_TOLERANCES, **(tolerances or {}))
    rng = np.random.default_rng(seed)
    d = op.dim
    m = op.n_cols
    ones = np.ones(m)
    pts = random_interior_points(op, trials, rng)
    X = op.point_coords
    theta = rng.normal(size=1 if d == 2 else 3)
    theta = float(theta[0]) if d == 2 else theta
    rot = rotation_vector(X, theta)

    pu = 0.0
    rv = 0.0
    strain = 0.0
    for x in pts:
        N = shape_eval(op, x)
        pu = max(pu, float(np.abs(N @ ones - 1.0).max()))
        expect = rotation_vector(x[None, :], theta)
        scale = max(1.0, float(np.abs(rot).max()))
        rv = max(rv, float(np.abs(N @ rot - expect).max()) / scale)
        B = shape_gradient(op, x)
        strain = max(strain, float(np.abs(B @ ones).max()), float(np.abs(B @ rot).max()) / scale)

    if bridge_points is None:
        bridge_points = op.bridge_points if op.bridge_points is not None else []
    el = op.element
    ni = 0.0
    for j in bridge_points:
        # read the fine-node rows directly: evaluating N at float coordinates
        # would add roundoff to a property that holds exactly
        node = flat_index(np.rint((X[j] - el.origin) / np.array(el.fine_size)).astype(int),
                          el.fine_counts)
        N = op.phi_tilde[d * int(node) + np.arange(d)]
        sel = np.zeros((d, m))
        sel[np.arange(d), d * j + np.arange(d)] = 1.0
        ni = max(ni, float(np.abs(N - sel).max()))
    return [PropertyResult("node_interpolation", ni, tol["node_interpolation"]),
            PropertyResult("partition_of_unity", pu, tol["partition_of_unity"]),
            PropertyResult("rotation_invariance", rv, tol["rotation_invariance"]),
            PropertyResult("rigid_strain", strain, tol["rigid_strain"])]


def property_rows(results: list[PropertyResult], element_id: int = 0) -> list[dict]:
    return [{"element": element_id, "property": r.name, "violation": r.violation,
             "tolerance": r.tolerance, "verdict": "pass" if r.passed else "fail"}
            for r in results]
