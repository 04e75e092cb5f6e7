import numpy as np
import pytest

from pcdg.meshgen import (icosphere, refine_and_project, sample_sphere_cloud,
                          sample_torus_cloud, torus_grid_mesh)


@pytest.fixture(scope="session")
def sphere_cloud():
    return sample_sphere_cloud(200, 400)


@pytest.fixture(scope="session")
def torus_cloud():
    return sample_torus_cloud(100, 400)


@pytest.fixture(scope="session")
def sphere_mesh():
    """Subdivided icosahedron, 162 vertices."""
    return icosphere(2)


@pytest.fixture(scope="session")
def sphere_meshes(sphere_cloud):
    """Three refinement levels of the 42-vertex icosahedral seed."""
    out = [icosphere(1)]
    for _ in range(2):
        out.append(refine_and_project(out[-1], sphere_cloud))
    return out


@pytest.fixture(scope="session")
def torus_mesh():
    return torus_grid_mesh(8, 25)


def random_rotation(seed):
    g = np.random.default_rng(seed)
    q, r = np.linalg.qr(g.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# acceptance lines, echoed in the terminal summary whatever the capture mode
ACCEPTANCE_LINES = []


def record(label, ok, detail=""):
    """Log one acceptance check; ``ok=None`` marks an informational line."""
    tag = "INFO" if ok is None else ("PASS" if ok else "FAIL")
    line = f"[{tag}] {label}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
