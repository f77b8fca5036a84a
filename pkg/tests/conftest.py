import numpy as np
import pytest

from lsenkf.forward import assemble_forward, make_wave_grid
from lsenkf.mesh import build_disk_mesh, square_receivers, triangle_quadrature


@pytest.fixture(scope="session")
def coarse_mesh():
    return build_disk_mesh(1.0, 0.2)


@pytest.fixture(scope="session")
def mesh_01():
    return build_disk_mesh(1.0, 0.1)


@pytest.fixture(scope="session")
def small_op(coarse_mesh):
    """Forward operator on a ~90 node mesh, 8 receivers, 3 frequencies."""
    rec = square_receivers(2.0, 3)
    kgrid = make_wave_grid(50.0, 2000.0, 3)
    return assemble_forward(coarse_mesh, rec, kgrid, triangle_quadrature(2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            lines += [v for k, v in getattr(rep, "user_properties", ()) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
