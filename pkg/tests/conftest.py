import numpy as np
import pytest
from hypothesis import settings

from phasecap.materials import PhysicalParams
from phasecap.mesh import BoundaryTag, TriangleMesh, generate_rectangle_mesh
from phasecap.pnp import SolverTolerances

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def phys():
    return PhysicalParams()


@pytest.fixture
def tols():
    return SolverTolerances()


@pytest.fixture
def unit_triangle():
    """Right triangle (0,0),(1,0),(0,1), all edges insulating."""
    return TriangleMesh(
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        np.array([[0, 1, 2]]),
        np.array([[0, 1], [1, 2], [2, 0]]),
        np.full(3, int(BoundaryTag.GAMMA_ONE)),
    )


@pytest.fixture
def unit_square():
    return generate_rectangle_mesh(1, 1, 1.0, 1.0)


@pytest.fixture
def small_rect():
    """4 x 5 mesh of (0,1) x (0,2): 30 vertices."""
    return generate_rectangle_mesh(4, 5, 1.0, 2.0)


@pytest.fixture
def tiny_rect():
    """3 x 5 mesh: 24 vertices, under the 25-vertex dense-oracle limit."""
    return generate_rectangle_mesh(3, 5, 1.0, 2.0)


# acceptance bookkeeping: criterion -> list of (part, ok, detail)
ACCEPTANCE = {}


def record(criterion: int, part: str, ok: bool, detail: str = "", expected_fail=False):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail, expected_fail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        for part, ok, detail, expected in ACCEPTANCE[crit]:
            tag = "PASS" if ok else "FAIL"
            note = " (known failure, documented in README)" if expected and not ok else ""
            tr.write_line(f"criterion {crit} [{part}]: {tag}{note}  {detail}")
