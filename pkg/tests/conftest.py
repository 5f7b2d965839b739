import logging

import numpy as np
import pytest

from lobeforge.geometry import (
    EllipsoidSpec,
    ThicknessField,
    TriMesh,
    assign_thickness,
    default_atl_contour,
    default_ellipsoid,
    flat_patch,
    generate_atl_surface,
    triangulate,
)
from lobeforge.material import Material, default_material
from lobeforge.shell import build_shell


@pytest.fixture(autouse=True)
def _quiet_solver_warnings():
    logging.getLogger("lobeforge").setLevel(logging.ERROR)
    yield


def atl_mesh(target_edge=3.0, thickness=0.93, ellipsoid=None):
    patch = generate_atl_surface(default_atl_contour(), ellipsoid or default_ellipsoid())
    return assign_thickness(triangulate(patch, target_edge), ThicknessField.constant(thickness))


def strip_mesh(length, width, nx, ny, thickness):
    """Flat strip in the xy-plane, x along the length.

    Each grid cell is split into four triangles around its centre. The
    mirror-symmetric pattern keeps bending and twist uncoupled, which a
    one-way diagonal split does not.
    """
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, width, ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    corners = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    cx, cy = np.meshgrid(0.5 * (xs[1:] + xs[:-1]), 0.5 * (ys[1:] + ys[:-1]), indexing="ij")
    centres = np.column_stack([cx.ravel(), cy.ravel(), np.zeros(cx.size)])
    verts = np.vstack([corners, centres])
    idx = np.arange(corners.shape[0]).reshape(nx + 1, ny + 1)
    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            m = len(corners) + i * ny + j
            tris += [[a, b, m], [b, c, m], [c, d, m], [d, a, m]]
    tags = {"hinge": verts[:, 0] == 0.0, "free-edge": verts[:, 0] == length}
    apex = int(idx[nx, ny // 2])
    return TriMesh(verts, np.array(tris), tags, apex, thickness=np.full(len(verts), thickness))


@pytest.fixture(scope="session")
def small_atl():
    return atl_mesh(3.0)


@pytest.fixture(scope="session")
def small_atl_shell(small_atl):
    return build_shell(small_atl, default_material())


@pytest.fixture(scope="session")
def flat_square():
    return assign_thickness(triangulate(flat_patch(1.0, 1.0), 0.5), ThicknessField.constant(1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


__all__ = ["atl_mesh", "strip_mesh", "ACCEPTANCE_LINES", "Material", "EllipsoidSpec"]
