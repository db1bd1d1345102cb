from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbnfem.bezier import (BERNSTEIN_MONOMIAL, bernstein_cubic, build_psi, build_psi_2d,
                           build_psi_3d, build_psi_linear, cbn_dof_count_3d, hat_cubic_stations,
                           identity_map)
from cbnfem.errors import AssemblyError
from cbnfem.mesh import BridgePolicy, build_hierarchy, classify_nodes, place_cbns


def layout_for(dim, fine, policy=BridgePolicy()):
    el = build_hierarchy(dim, (1,) * dim, (fine,) * dim, (1.0,) * dim).elements[0]
    ns = classify_nodes(el, policy)
    return el, ns, place_cbns(el, ns, policy)


def test_bernstein_values():
    assert np.array_equal(bernstein_cubic(0.0), [1, 0, 0, 0])
    assert np.array_equal(bernstein_cubic(1.0), [0, 0, 0, 1])
    assert np.allclose(bernstein_cubic(0.5), np.array([1, 3, 3, 1]) / 8, atol=0)
    assert np.allclose(bernstein_cubic(1 / 3), np.array([8, 12, 6, 1]) / 27, atol=1e-16)


@given(t=st.floats(0, 1))
def test_bernstein_partition_and_positivity(t):
    b = bernstein_cubic(t)
    assert abs(b.sum() - 1.0) <= 1e-15
    assert np.all(b >= 0)
    # monomial form agrees with the binomial definition
    assert np.allclose(np.array([1, t, t * t, t ** 3]) @ BERNSTEIN_MONOMIAL, b, atol=1e-15)
    assert np.allclose(b, [comb(3, i) * t ** i * (1 - t) ** (3 - i) for i in range(4)])


@given(t=st.floats(0, 1))
def test_hat_weights(t):
    w = hat_cubic_stations(t)
    assert abs(w.sum() - 1) <= 1e-15 and np.all(w >= 0)
    assert np.count_nonzero(w) <= 2


def test_hat_midway():
    assert np.allclose(hat_cubic_stations(1 / 6), [0.5, 0.5, 0, 0])
    assert np.array_equal(hat_cubic_stations(np.array([0.0, 1.0])), [[1, 0, 0, 0], [0, 0, 0, 1]])


def test_psi_corners_10x10_shape_and_rows():
    el, ns, layout = layout_for(2, 10)
    psi = build_psi_2d(layout, ns, el)
    assert psi.shape == (80, 24)
    M = psi.matrix
    assert np.abs(np.asarray(M.sum(axis=1)).ravel() - 1).max() <= 1e-14
    assert M.getnnz(axis=1).max() <= 4
    # per-component block structure: x rows never touch y columns
    assert np.all(M[0::2][:, 1::2].toarray() == 0)


def test_psi_bridge_rows_are_selectors():
    for policy in (BridgePolicy(), BridgePolicy("per_side", 3), BridgePolicy("all")):
        el, ns, layout = layout_for(2, 6, policy)
        psi = build_psi_2d(layout, ns, el).matrix.toarray()
        pos = {n: j for j, n in enumerate(ns.boundary)}
        keys = {tuple(k): i for i, k in enumerate(layout.keys.tolist())}
        for node in ns.bridge:
            j = pos[node]
            i = keys[tuple(3 * el.local_index()[node])]
            for c in range(2):
                row = psi[2 * j + c]
                expect = np.zeros_like(row)
                expect[2 * i + c] = 1.0
                assert np.array_equal(row, expect)


def test_all_boundary_psi_is_a_selector_on_every_row():
    el, ns, layout = layout_for(2, 5, BridgePolicy("all"))
    psi = build_psi_2d(layout, ns, el).matrix.toarray()
    used = psi[:, np.abs(psi).sum(axis=0) > 0]
    assert np.array_equal(used @ used.T, np.eye(len(used)))


def test_linear_psi_midway_weights():
    el, ns, layout = layout_for(2, 6)
    psi = build_psi_linear(layout, ns, el).matrix.toarray()
    # bottom side, node index 1: t = 1/6, halfway between stations 0 and 1/3
    j = list(ns.boundary).index(1)
    row = psi[2 * j]
    assert sorted(row[row != 0]) == pytest.approx([0.5, 0.5])
    assert np.allclose(psi.sum(axis=1), 1.0, atol=1e-15)


def test_psi_3d_face_center_weights():
    el, ns, layout = layout_for(3, 6)
    psi = build_psi_3d(layout, ns, el)
    assert np.abs(np.asarray(psi.matrix.sum(axis=1)).ravel() - 1).max() <= 1e-14
    assert psi.matrix.getnnz(axis=1).max() <= 16
    # center of the z = 0 face, t_u = t_v = 1/2
    center = int(np.flatnonzero((el.local_index() == [3, 3, 0]).all(axis=1))[0])
    j = list(ns.boundary).index(center)
    row = psi.matrix[3 * j].toarray().ravel()
    b = np.array([1, 3, 3, 1]) / 8
    assert np.allclose(np.sort(row[row != 0]), np.sort(np.outer(b, b).ravel()), atol=1e-16)
    # a corner row selects its CBN
    corner = ns.corner[0]
    row = psi.matrix[3 * list(ns.boundary).index(corner)].toarray().ravel()
    assert np.count_nonzero(row) == 1 and row.max() == 1.0


@pytest.mark.parametrize("k", [2, 3, 4])
def test_3d_dof_count_formula(k):
    el, ns, layout = layout_for(3, 6, BridgePolicy("per_side", k))
    psi = build_psi(layout, ns, el)
    assert psi.shape[1] == layout.dof_count == pytest.approx(cbn_dof_count_3d(len(ns.bridge)))


def test_unknown_and_unsupported_kinds():
    el, ns, layout = layout_for(3, 3)
    with pytest.raises(AssemblyError):
        build_psi(layout, ns, el, "linear")
    el, ns, layout = layout_for(2, 3)
    with pytest.raises(AssemblyError):
        build_psi(layout, ns, el, "spline")


def test_identity_map():
    _, ns, _ = layout_for(2, 4)
    m = identity_map(ns, 2)
    assert m.shape == (32, 32) and np.array_equal(m.matrix.toarray(), np.eye(32))
