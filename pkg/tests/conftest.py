import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from maghomog.cell import solve_cell_problems
from maghomog.grid import GeometrySpec, assign_material, build_unit_cell_mesh

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def cell_set(shape="none", mu=(1.0,), n=16, **kw):
    mesh = build_unit_cell_mesh(2, n)
    spec = GeometrySpec(shape, mu, **kw)
    mat = assign_material(mesh, spec)
    return solve_cell_problems(mesh, mat)


@pytest.fixture(scope="session")
def fluid_cells():
    return cell_set("none", (2.0,), 16)


@pytest.fixture(scope="session")
def layered_cells():
    return cell_set("layered", (1.0, 3.0), 16, axis=0)


@pytest.fixture(scope="session")
def disk_cells():
    return cell_set("disk", (1.0, 2.0), 32, radius=0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict = {}


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def key(c):
        head = c.split("[")[0]
        return (int(head) if head.isdigit() else 99, c)

    for c in sorted(ACCEPTANCE, key=key):
        terminalreporter.write_line(ACCEPTANCE[c])
