import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pointfuse.geometry import Mesh

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_mesh(rng, n_tri=50, spread=2.0, size=0.5, labels=False, colors=False):
    """Triangle soup: independent triangles scattered in a cube."""
    centers = rng.uniform(-spread, spread, size=(n_tri, 1, 3))
    verts = (centers + rng.uniform(-size, size, size=(n_tri, 3, 3))).reshape(-1, 3)
    faces = np.arange(3 * n_tri).reshape(n_tri, 3)
    return Mesh(
        verts,
        faces,
        labels=rng.integers(0, 5, size=len(verts)) if labels else None,
        colors=rng.integers(0, 256, size=(len(verts), 3)) if colors else None,
    )


def quad_mesh(z=1.0, half=1.0):
    """Square in the plane z = const, normal +z, two triangles."""
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    return Mesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
