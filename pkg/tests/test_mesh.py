import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbnfem.bezier import cbn_dof_count_3d
from cbnfem.errors import ConfigError, PlacementError
from cbnfem.mesh import (BridgePolicy, build_hierarchy, build_layouts, classify_nodes,
                         flat_index, grid_connectivity, lattice_index, place_cbns)


def test_lattice_order_is_x_fastest():
    idx = lattice_index((2, 1))
    assert idx.tolist() == [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]]
    assert flat_index(idx, (2, 1)).tolist() == list(range(6))


def test_connectivity_counter_clockwise_corners():
    conn = grid_connectivity((2, 1))
    # nodes (0,0), (1,0), (1,1), (0,1) of the first cell
    assert conn[0].tolist() == [0, 1, 4, 3]
    assert conn[1].tolist() == [1, 2, 5, 4]


def test_hierarchy_counts_half_mbb():
    h = build_hierarchy(2, (4, 2), (10, 10), (1.0, 1.0))
    assert h.n_nodes == 41 * 21
    assert h.n_elements == 800
    assert h.n_coarse == 8
    assert np.allclose(h.domain_size, [4, 2])
    # coarse element ids follow the same x-fastest order
    assert h.elements[1].index == (1, 0)
    assert h.elements[4].index == (0, 1)
    assert h.elements[1].node_ids[0] == 10
    assert h.elements[4].node_ids[0] == 10 * 41


def test_element_ids_partition_the_fine_grid():
    h = build_hierarchy(3, (2, 1, 2), (2, 3, 2), (1.0, 1.5, 1.0))
    ids = np.concatenate([el.element_ids for el in h.elements])
    assert np.array_equal(np.sort(ids), np.arange(h.n_elements))
    # element centroids of a coarse element lie inside its box
    c = h.element_centroids()
    for el in h.elements:
        inside = (c[el.element_ids] > el.origin) & (c[el.element_ids] < el.origin + el.size)
        assert inside.all()


def test_local_and_global_node_coordinates_agree():
    h = build_hierarchy(2, (3, 2), (4, 5), (2.0, 1.0))
    X = h.node_coords()
    for el in h.elements:
        assert np.allclose(X[el.node_ids], el.node_coords())


@pytest.mark.parametrize("bad", [dict(dim=4), dict(coarse=(0, 2)), dict(sizes=(1.0, -1.0)),
                                 dict(fine=(3,))])
def test_hierarchy_validation(bad):
    args = dict(dim=2, coarse=(2, 2), fine=(3, 3), sizes=(1.0, 1.0))
    args.update(bad)
    with pytest.raises(ConfigError):
        build_hierarchy(args["dim"], args["coarse"], args["fine"], args["sizes"])


def test_node_sets_2d():
    el = build_hierarchy(2, (1, 1), (10, 10), (1.0, 1.0)).elements[0]
    ns = classify_nodes(el)
    assert len(ns.corner) == 4 and len(ns.boundary) == 40 and len(ns.interior) == 81
    assert np.array_equal(ns.bridge, ns.corner)
    assert len(classify_nodes(el, BridgePolicy("per_side", 3)).bridge) == 8
    assert np.array_equal(classify_nodes(el, BridgePolicy("all")).bridge, ns.boundary)


def test_node_sets_3d():
    el = build_hierarchy(3, (1, 1, 1), (6, 6, 6), (1.0, 1.0, 1.0)).elements[0]
    ns = classify_nodes(el, BridgePolicy("per_side", 3))
    assert len(ns.corner) == 8
    assert len(ns.boundary) == 7 ** 3 - 5 ** 3
    assert len(ns.bridge) == 3 ** 3 - 1


def test_per_side_divisibility():
    el = build_hierarchy(2, (1, 1), (10, 10), (1.0, 1.0)).elements[0]
    with pytest.raises(PlacementError):
        classify_nodes(el, BridgePolicy("per_side", 4))       # 10 % 3 != 0
    with pytest.raises(PlacementError):
        BridgePolicy("per_side", 1)
    with pytest.raises(ConfigError):
        BridgePolicy("sometimes")


@given(nx=st.integers(1, 12), ny=st.integers(1, 12), k=st.integers(2, 7),
       kind=st.sampled_from(["corners", "per_side", "all"]))
def test_corners_in_bridge_in_boundary(nx, ny, k, kind):
    el = build_hierarchy(2, (1, 1), (nx, ny), (1.0, 1.0)).elements[0]
    policy = BridgePolicy(kind, k if kind == "per_side" else None)
    try:
        ns = classify_nodes(el, policy)
    except PlacementError:
        assert kind == "per_side" and (nx % (k - 1) or ny % (k - 1))
        return
    assert set(ns.corner) <= set(ns.bridge) <= set(ns.boundary)
    assert len(ns.boundary) + len(ns.interior) == el.n_nodes


def test_cbn_count_2d_is_three_per_bridge_node():
    el = build_hierarchy(2, (1, 1), (12, 12), (1.0, 1.0)).elements[0]
    for k in (2, 3, 4, 5, 7):
        policy = BridgePolicy("per_side", k)
        ns = classify_nodes(el, policy)
        layout = place_cbns(el, ns, policy)
        r = len(ns.bridge)
        assert r == 4 * (k - 1)
        assert layout.dof_count == 6 * r


@pytest.mark.parametrize("k, fine", [(2, 6), (3, 6), (4, 6), (7, 6)])
def test_cbn_count_3d_matches_closed_form(k, fine):
    el = build_hierarchy(3, (1, 1, 1), (fine,) * 3, (1.0,) * 3).elements[0]
    policy = BridgePolicy("per_side", k)
    ns = classify_nodes(el, policy)
    layout = place_cbns(el, ns, policy)
    m = 3 * (k - 1) + 1                      # stations per edge
    assert layout.n_cbn == m ** 3 - (m - 2) ** 3
    assert layout.dof_count == pytest.approx(cbn_dof_count_3d(len(ns.bridge)), abs=1e-9)


def test_global_numbering_shares_interface_stations():
    h = build_hierarchy(2, (4, 2), (10, 10), (1.0, 1.0))
    num = build_layouts(h)
    # coarse vertices plus two stations per coarse edge
    n_vertices, n_edges = 5 * 3, 4 * 3 + 5 * 2
    assert num.n_cbn == n_vertices + 2 * n_edges
    a, b = num.layouts[0], num.layouts[1]
    shared = set(a.global_ids) & set(b.global_ids)
    assert len(shared) == 4                  # both end points and two stations


def test_layout_signature_is_translation_invariant():
    h = build_hierarchy(2, (3, 1), (6, 6), (1.0, 1.0))
    num = build_layouts(h, BridgePolicy("per_side", 3))
    assert num.layouts[0].signature() == num.layouts[2].signature()


def test_nodal_weights_sum_to_volume():
    h = build_hierarchy(3, (2, 1, 1), (2, 3, 4), (1.0, 2.0, 0.5))
    assert h.nodal_weights().sum() == pytest.approx(np.prod(h.domain_size), rel=1e-14)


def test_skeleton_nodes():
    h = build_hierarchy(2, (2, 2), (3, 3), (1.0, 1.0))
    sk = h.skeleton_nodes()
    assert len(sk) == h.n_nodes - 4 * 4           # four 2x2 interior patches
