"""Isotropic materials, elasticity matrices and inclusion rasterisation.

Strains use the engineering Voigt convention: ``(e11, e22, g12)`` in 2D and
``(e11, e22, e33, g23, g13, g12)`` in 3D with ``g = 2 e``.  The Mandel form
(``sqrt(2) e12``) yields identical energies and displacements; convert with
``D_mandel = W D W`` where ``W = diag(1, 1, sqrt(2))``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, MaterialError
from .mesh import MeshHierarchy

MODELS = ("plane_stress", "plane_strain", "3d")


def _check_en(E, nu):
    E, nu = np.asarray(E, dtype=float), np.asarray(nu, dtype=float)
    if not np.all(np.isfinite(E)) or np.any(E <= 0):
        raise MaterialError("Young's modulus must be positive and finite")
    if np.any(nu < 0) or np.any(nu >= 0.5) or not np.all(np.isfinite(nu)):
        raise MaterialError(f"Poisson ratio must satisfy 0 <= nu < 0.5, got {nu}")
    return E, nu


def elasticity_tensor(E: float, nu: float, model: str = "plane_stress") -> np.ndarray:
    """Isotropic elasticity matrix in engineering Voigt notation."""
    E, nu = (float(v) for v in _check_en(E, nu))
    if model == "plane_stress":
        c = E / (1.0 - nu * nu)
        return c * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]])
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    if model == "plane_strain":
        return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
    if model == "3d":
        D = np.zeros((6, 6))
        D[:3, :3] = lam
        D[np.arange(3), np.arange(3)] = lam + 2 * mu
        D[np.arange(3, 6), np.arange(3, 6)] = mu
        return D
    raise MaterialError(f"unknown elasticity model {model!r}")


def bulk_shear_to_young_poisson(K: float, G: float) -> tuple[float, float]:
    """(K, G) -> (E, nu) via the standard isotropic relations."""
    if K <= 0 or G <= 0:
        raise MaterialError("bulk and shear moduli must be positive")
    return 9 * K * G / (3 * K + G), (3 * K - 2 * G) / (6 * K + 2 * G)


def default_model(dim: int) -> str:
    return "plane_stress" if dim == 2 else "3d"


@dataclass(frozen=True)
class MaterialField:
    """Per-fine-element isotropic material, in global fine element order."""

    young_modulus: np.ndarray
    poisson_ratio: np.ndarray
    model: str = "plane_stress"

    def __post_init__(self):
        E = np.ascontiguousarray(self.young_modulus, dtype=float)
        nu = np.ascontiguousarray(np.broadcast_to(self.poisson_ratio, E.shape), dtype=float)
        _check_en(E, nu)
        if self.model not in MODELS:
            raise MaterialError(f"unknown elasticity model {self.model!r}")
        E.setflags(write=False)
        nu.setflags(write=False)
        object.__setattr__(self, "young_modulus", E)
        object.__setattr__(self, "poisson_ratio", nu)

    def __len__(self):
        return len(self.young_modulus)

    @classmethod
    def uniform(cls, hierarchy: MeshHierarchy, E: float = 1e3, nu: float = 0.3,
                model: str | None = None) -> "MaterialField":
        n = hierarchy.n_elements
        return cls(np.full(n, float(E)), np.full(n, float(nu)),
                   model or default_model(hierarchy.dim))

    def check(self, hierarchy: MeshHierarchy) -> "MaterialField":
        if len(self) != hierarchy.n_elements:
            raise MaterialError(f"material field has {len(self)} entries, mesh has "
                                f"{hierarchy.n_elements} fine elements")
        if (self.model == "3d") != (hierarchy.dim == 3):
            raise MaterialError(f"model {self.model!r} does not fit a {hierarchy.dim}D mesh")
        return self

    def subset(self, ids: np.ndarray) -> "MaterialField":
        return MaterialField(self.young_modulus[ids], self.poisson_ratio[ids], self.model)

    def scaled(self, factor: float) -> "MaterialField":
        return MaterialField(self.young_modulus * factor, self.poisson_ratio, self.model)

    def tensors(self) -> np.ndarray:
        """Elasticity matrices of all elements, shape (n, 3, 3) or (n, 6, 6)."""
        pairs, inverse = np.unique(np.stack([self.young_modulus, self.poisson_ratio], 1),
                                   axis=0, return_inverse=True)
        unique = np.array([elasticity_tensor(E, nu, self.model) for E, nu in pairs])
        return unique[inverse.ravel()]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.model.encode())
        h.update(self.young_modulus.tobytes())
        h.update(self.poisson_ratio.tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# region rasterisation


@dataclass(frozen=True)
class Region:
    """Material region tested at fine element centroids.

    ``shape`` is ``"ellipse"`` (ellipsoid in 3D; ``center``/``semi_axes``),
    ``"box"`` (``lo``/``hi`` corners) or ``"halfspace"`` (points with
    ``dot(normal, x) >= offset``).  With ``per_coarse`` the geometry is given
    in the coordinates of each coarse element and repeated in all of them.
    """

    shape: str
    E: float
    nu: float = 0.3
    center: tuple[float, ...] | None = None
    semi_axes: tuple[float, ...] | None = None
    lo: tuple[float, ...] | None = None
    hi: tuple[float, ...] | None = None
    normal: tuple[float, ...] | None = None
    offset: float = 0.0
    per_coarse: bool = False

    def __post_init__(self):
        _check_en(self.E, self.nu)
        need = {"ellipse": ("center", "semi_axes"), "box": ("lo", "hi"),
                "halfspace": ("normal",)}
        if self.shape not in need:
            raise ConfigError(f"unknown region shape {self.shape!r}")
        for name in need[self.shape]:
            if getattr(self, name) is None:
                raise ConfigError(f"{self.shape} region needs {name!r}")

    def contains(self, x: np.ndarray) -> np.ndarray:
        if self.shape == "ellipse":
            axes = np.asarray(self.semi_axes, dtype=float)
            if np.any(axes <= 0):
                return np.zeros(len(x), dtype=bool)
            r = (x - np.asarray(self.center)) / axes
            return np.einsum("ij,ij->i", r, r) <= 1.0
        if self.shape == "box":
            return np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=1)
        return x @ np.asarray(self.normal, dtype=float) >= self.offset


def rasterize_inclusion(regions: Sequence[Region], hierarchy: MeshHierarchy,
                        matrix_E: float = 1e3, matrix_nu: float = 0.3,
                        model: str | None = None) -> MaterialField:
    """Assign each fine element the material of the last region holding its centroid."""
    x = hierarchy.element_centroids()
    E = np.full(len(x), float(matrix_E))
    nu = np.full(len(x), float(matrix_nu))
    if any(r.per_coarse for r in regions):
        size = np.array(hierarchy.coarse_size)
        local = x - np.floor(x / size) * size
    for region in regions:
        inside = region.contains(local if region.per_coarse else x)
        E[inside] = region.E
        nu[inside] = region.nu
    return MaterialField(E, nu, model or default_model(hierarchy.dim)).check(hierarchy)


def load_modulus_array(path: str | Path, hierarchy: MeshHierarchy, nu: float = 0.3,
                       model: str | None = None) -> MaterialField:
    """Per-element Young's moduli from CSV, ``.npy`` or raw little-endian float64."""
    path = Path(path)
    if path.suffix == ".csv":
        E = np.loadtxt(path, delimiter=",", dtype=float).ravel()
    elif path.suffix == ".npy":
        E = np.load(path).astype(float).ravel()
    else:
        E = np.fromfile(path, dtype="<f8")
    if len(E) != hierarchy.n_elements:
        raise MaterialError(f"{path}: {len(E)} moduli for {hierarchy.n_elements} elements")
    return MaterialField(E, np.full(len(E), nu), model or default_model(hierarchy.dim))
