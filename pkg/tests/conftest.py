import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cbnfem.experiments import half_mbb
from cbnfem.fem import BoundaryConditions, select_nodes, solve_fine
from cbnfem.material import MaterialField
from cbnfem.mesh import build_hierarchy

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_material(hierarchy, rng, lo=0.0, hi=6.0, nu=0.3):
    """Per-fine-element moduli ``10**U(lo, hi)``."""
    E = 10.0 ** rng.uniform(lo, hi, hierarchy.n_elements)
    model = "3d" if hierarchy.dim == 3 else "plane_stress"
    return MaterialField(E, np.full(len(E), nu), model)


def cantilever_bcs(hierarchy, load=-1.0):
    """Left edge clamped, downward point load at the top-right node."""
    X = hierarchy.node_coords()
    W = hierarchy.domain_size
    bcs = BoundaryConditions()
    left = select_nodes(X, [(0, 0)] + [None] * (hierarchy.dim - 1))
    for c in range(hierarchy.dim):
        bcs.fix(left, c)
    corner = select_nodes(X, [(w, w) for w in W])
    return bcs.load(corner, 1, load)


@pytest.fixture(scope="session")
def mbb():
    """Half-MBB instance (4 x 2 coarse, 10 x 10 fine) with its fine benchmark."""
    inst = half_mbb()
    return inst, solve_fine(inst.hierarchy, inst.material, inst.bcs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small2d():
    return build_hierarchy(2, (2, 2), (6, 6), (1.0, 1.0))


# ---------------------------------------------------------------------------
# acceptance criteria report

ACCEPTANCE: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str):
    """Store one acceptance verdict; printed as a single line at the end of the run."""
    ACCEPTANCE[number] = (title, bool(ok), detail)
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, f"criterion {number} ({title}): {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
