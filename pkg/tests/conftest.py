import time

import numpy as np
import pytest

from fracms.fine_solver import DAY, YEAR, DirichletBC, TimeGrid, run
from fracms.mesh import LEFT, FracturePolyline, build_coarse_grid, generate_test_mesh
from fracms.physics import ConstantCoefficients, NonlinearCoefficients, StressDependentPermeability
from fracms.scenarios import reference_mesh

SESSION = {"start": time.perf_counter(), "invariant": {}}


def pytest_configure(config):
    config.addinivalue_line("markers", "invariant: module invariant / property suite")


def pytest_collection_modifyitems(session, config, items):
    # acceptance criteria run last so that the invariant suite results are known
    items.sort(key=lambda it: it.nodeid.startswith("tests/test_acceptance.py"))


def pytest_runtest_logreport(report):
    if report.when == "call" or report.outcome == "failed":
        if "invariant" in report.keywords:
            prev = SESSION["invariant"].get(report.nodeid, True)
            SESSION["invariant"][report.nodeid] = prev and report.outcome == "passed"


# small fractured mesh used by most unit tests: 12 x 12 cells on a 12 m square
SMALL_FRACTURES = [
    FracturePolyline(np.array([[1.0, 2.0], [7.0, 6.0], [11.0, 7.5]]), 0.01),
    FracturePolyline(np.array([[2.0, 10.0], [9.0, 3.0]]), 0.02),
]


@pytest.fixture(scope="session")
def small_mesh():
    return generate_test_mesh((12.0, 12.0), SMALL_FRACTURES, 1.0, lock_every=3)


@pytest.fixture(scope="session")
def small_grid():
    return build_coarse_grid((12.0, 12.0), 4, 4)


@pytest.fixture(scope="session")
def constant_model():
    return ConstantCoefficients()


@pytest.fixture(scope="session")
def kappa0_model():
    return NonlinearCoefficients()


@pytest.fixture(scope="session")
def kappam_model():
    return NonlinearCoefficients(permeability=StressDependentPermeability())


@pytest.fixture(scope="session")
def ref_mesh():
    return reference_mesh()


@pytest.fixture(scope="session")
def ref_bc(ref_mesh):
    return DirichletBC.from_markers(ref_mesh, {LEFT: 5000.0})


@pytest.fixture(scope="session")
def ref_time():
    return TimeGrid(10 * DAY, 5 * YEAR)


@pytest.fixture(scope="session")
def ref_c0(ref_mesh):
    return np.full(ref_mesh.n_nodes, 10000.0)


@pytest.fixture(scope="session")
def fine_reference(ref_mesh, ref_bc, ref_time, ref_c0):
    """Fine trajectories of the reference scenario, computed once per session."""
    cache = {}

    def get(name, model):
        if name not in cache:
            cache[name] = np.array([s.c for s in run(ref_c0, ref_mesh, model, ref_bc, ref_time)])
        return cache[name]

    return get


def pytest_terminal_summary(terminalreporter):
    lines = SESSION.get("acceptance")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
