import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from cbnfem.errors import ConfigError, SolverError
from cbnfem.fem import (BoundaryConditions, DirectSolver, assemble, assemble_stiffness,
                        check_rigid_constraints, element_stiffness, element_strains, rigid_modes,
                        select_nodes, solve, solve_cg, solve_fine, strain_energy, traction_load,
                        transfer_dirichlet)
from cbnfem.material import MaterialField, elasticity_tensor
from cbnfem.mesh import build_hierarchy

from conftest import cantilever_bcs, random_material


def reference_q4_stiffness(E, nu):
    """Widely published closed form for a unit-square bilinear plane-stress element."""
    k = np.array([1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
                  -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8])
    idx = np.array([[0, 1, 2, 3, 4, 5, 6, 7], [1, 0, 7, 6, 5, 4, 3, 2],
                    [2, 7, 0, 5, 6, 3, 4, 1], [3, 6, 5, 0, 7, 2, 1, 4],
                    [4, 5, 6, 7, 0, 1, 2, 3], [5, 4, 3, 2, 1, 0, 7, 6],
                    [6, 3, 4, 1, 2, 7, 0, 5], [7, 2, 1, 4, 3, 6, 5, 0]])
    return E / (1 - nu ** 2) * k[idx]


@pytest.mark.parametrize("nu", [0.0, 0.3, 0.45])
def test_q4_stiffness_matches_closed_form(nu):
    ke = element_stiffness(elasticity_tensor(1.0, nu), (1.0, 1.0))
    ref = reference_q4_stiffness(1.0, nu)
    # node orderings differ, so compare orthogonal invariants and entry multisets
    assert np.allclose(np.linalg.eigvalsh(ke), np.linalg.eigvalsh(ref), atol=1e-14)
    assert np.allclose(np.sort(ke.ravel()), np.sort(ref.ravel()), atol=1e-14)


def test_element_stiffness_scaling_3d():
    D = elasticity_tensor(2.0, 0.25, "3d")
    k1 = element_stiffness(D, (1.0, 1.0, 1.0))
    k2 = element_stiffness(D, (2.0, 2.0, 2.0))
    assert np.allclose(k2, 2.0 * k1, rtol=1e-13)       # k scales with h^(d-2)
    assert np.allclose(k1, k1.T, atol=0)


@pytest.mark.parametrize("dim, n_rigid", [(2, 3), (3, 6)])
def test_rigid_null_space(dim, n_rigid, rng):
    h = build_hierarchy(dim, (2,) * dim, (2,) * dim, (1.0,) * dim)
    K = assemble_stiffness(h, random_material(h, rng))
    R, names = rigid_modes(h.node_coords())
    assert len(names) == n_rigid
    rel = np.linalg.norm(K @ R) / (sp.linalg.norm(K) * np.linalg.norm(R))
    assert rel <= 1e-8
    lam = np.linalg.eigvalsh(K.toarray())
    assert int((lam <= 1e-10 * lam.max()).sum()) == n_rigid


def test_patch_test_linear_field(rng):
    """Prescribing a linear field on the boundary reproduces it inside (homogeneous)."""
    h = build_hierarchy(2, (1, 1), (5, 4), (1.0, 0.8))
    mat = MaterialField.uniform(h, 3.0, 0.3)
    X = h.node_coords()
    A = rng.normal(size=(2, 2))
    u_lin = (X @ A.T).ravel()
    bnd = np.flatnonzero((X[:, 0] < 1e-12) | (X[:, 0] > 1 - 1e-12) | (X[:, 1] < 1e-12)
                         | (X[:, 1] > 0.8 - 1e-12))
    bcs = BoundaryConditions()
    for c in range(2):
        bcs.fix(bnd, c, u_lin.reshape(-1, 2)[bnd, c])
    u = solve_fine(h, mat, bcs).u
    assert np.allclose(u, u_lin, atol=1e-12)
    eps = element_strains(h.global_counts, h.fine_size, u)
    expect = [A[0, 0], A[1, 1], A[0, 1] + A[1, 0]]
    assert np.allclose(eps, expect, atol=1e-11)


def test_uniaxial_bar_plane_stress():
    E, nu, s = 200.0, 0.3, 2.0
    h = build_hierarchy(2, (2, 1), (3, 3), (1.0, 1.0))
    mat = MaterialField.uniform(h, E, nu)
    X = h.node_coords()
    bcs = BoundaryConditions().fix(select_nodes(X, [(0, 0), None]), 0)
    bcs.fix(select_nodes(X, [None, (0, 0)]), 1)
    bcs.add_traction(traction_load(h, 0, "max", lambda x: np.column_stack([s + 0 * x[:, 0],
                                                                           0 * x[:, 0]])))
    u = solve_fine(h, mat, bcs).u.reshape(-1, 2)
    assert np.allclose(u[:, 0], s / E * X[:, 0], atol=1e-14)
    assert np.allclose(u[:, 1], -nu * s / E * X[:, 1], atol=1e-14)


def test_traction_resultants():
    h = build_hierarchy(2, (4, 2), (5, 5), (1.0, 1.0))
    f = traction_load(h, 1, "max", lambda x: np.column_stack(
        [0 * x[:, 0], -np.clip(1 - x[:, 0] ** 2, 0, None)])).reshape(-1, 2)
    # the parabola has its kink at x = 1, a fine grid line; two-point Gauss is exact per facet
    assert f[:, 1].sum() == pytest.approx(-2.0 / 3.0, rel=1e-14)
    assert np.all(f[:, 0] == 0)
    h3 = build_hierarchy(3, (1, 2, 1), (2, 2, 3), (1.0, 1.0, 2.0))
    f3 = traction_load(h3, 2, "max", lambda x: np.tile([1.0, 0.0, 3.0], (len(x), 1)))
    f3 = f3.reshape(-1, 3)
    assert f3[:, 0].sum() == pytest.approx(2.0, rel=1e-14)       # face area 1 x 2
    assert f3[:, 2].sum() == pytest.approx(6.0, rel=1e-14)


def test_energy_equals_half_work(rng):
    h = build_hierarchy(2, (2, 2), (4, 4), (1.0, 1.0))
    sol = solve_fine(h, random_material(h, rng, 0, 3), cantilever_bcs(h))
    f = sol.system.f
    assert sol.energy == pytest.approx(0.5 * f @ sol.u, rel=1e-10)
    assert sol.energy == pytest.approx(strain_energy(sol.system.K, sol.u), rel=0)


def test_cg_matches_direct(rng):
    h = build_hierarchy(2, (2, 2), (5, 5), (1.0, 1.0))
    system = assemble(h, random_material(h, rng, 0, 2), cantilever_bcs(h))
    u_d = solve(system, "direct")
    res = solve_cg(system, tol=1e-12)
    assert res.converged
    assert np.linalg.norm(res.u - u_d) <= 1e-8 * np.linalg.norm(u_d)
    with pytest.raises(ConfigError):
        solve(system, "magic")


def test_direct_solver_counts_columns():
    K = sp.diags([2.0, 3.0, 4.0]).tocsr()
    s = DirectSolver(K)
    s.solve(np.ones(3))
    s.solve(np.ones((3, 5)))
    assert s.columns_solved == 6


def test_unconstrained_rotation_is_reported():
    h = build_hierarchy(2, (1, 1), (2, 2), (1.0, 1.0))
    X = h.node_coords()
    node = select_nodes(X, [(0, 0), (0, 0)])
    with pytest.raises(SolverError, match="rotation"):
        check_rigid_constraints(X, np.concatenate([2 * node, 2 * node + 1]))
    with pytest.raises(SolverError):
        check_rigid_constraints(X, np.array([], dtype=int))


def test_fixed_and_loaded_dof_rejected():
    h = build_hierarchy(2, (1, 1), (2, 2), (1.0, 1.0))
    bcs = BoundaryConditions().fix([0], 0).load([0], 0, 1.0)
    with pytest.raises(ConfigError):
        bcs.force_vector(h.n_dofs, 2)


@given(vals=st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_transfer_dirichlet_selector(vals):
    P = sp.identity(5, format="csr")
    c = transfer_dirichlet(P, np.array([0, 2, 4]), np.array(vals))
    assert np.array_equal(c.free, [1, 3])
    assert np.allclose(c.u0[[0, 2, 4]], vals, atol=0)


def test_transfer_dirichlet_rejects_unrepresentable():
    # two fine dofs interpolated from one coarse dof cannot hold different values
    P = sp.csr_matrix(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ConfigError):
        transfer_dirichlet(P, np.array([0, 1]), np.array([0.0, 1.0]))
    c = transfer_dirichlet(P, np.array([0, 1]), np.array([0.5, 0.5]))
    assert c.u0[0] == pytest.approx(0.5)
