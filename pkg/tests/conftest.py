import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skeleton_ddm.assembly import PlaneWave, SourceSpec, homogeneous_medium, medium_preset
from skeleton_ddm.mesh import build_mesh, disk_mesh
from skeleton_ddm.partition import partition_pie
from skeleton_ddm.solvers import DDMProblem

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


SOURCE = SourceSpec(plane_wave=PlaneWave((1.0, 0.0)))


def small_problem(J=3, inductance="despres", skeleton="thin", medium="homogeneous",
                  h=0.3, kappa=5.0, **kw):
    mesh = disk_mesh(1.0, h)
    med = homogeneous_medium(mesh, kappa) if medium == "homogeneous" else medium_preset(medium, mesh, kappa)
    return DDMProblem(mesh, partition_pie(mesh, J), med, SOURCE, skeleton, inductance, **kw)


# (J, inductance, skeleton policy, medium) combinations assembled by the property suites
CASES = [
    (3, "despres", "thin", "homogeneous"),
    (4, "schur", "thin", "homogeneous"),
    (3, "schur-interface", "thin", "homogeneous"),
    (4, "despres", "layers:1", "homogeneous"),
    (3, "schur", "with-boundary", "homogeneous"),
    (5, "schur", "thin", "flower-dissipative"),
    (4, "despres", "thin", "flower-heterogeneous"),
]


@pytest.fixture(scope="session")
def problems():
    return {case: small_problem(*case) for case in CASES}


@pytest.fixture
def two_triangles():
    return build_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
