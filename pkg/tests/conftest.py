import dataclasses

import numpy as np
import pytest

from musense.geometry import Box, SolidOutline, build_design, solid_outline
from musense.mesh import boundary_faces, mesh_outline

# coarse but chamber-resolving grid for quick actuator solves
SMALL_RES = (6.25, 8.75, 8.75)


def box_mesh(size, res):
    outline = SolidOutline(envelopes=[Box((0.0, 0.0, 0.0), tuple(size))], cavities=[], channels=[],
                           membrane_band=0.01, wall_margin=0.4)
    return mesh_outline(outline, res)


def with_load_faces(mesh, select):
    """Copy of ``mesh`` whose pressure faces are the boundary faces picked by ``select``."""
    tris, owner = boundary_faces(mesh.vertices, mesh.tets)
    keep = select(mesh.vertices[tris].mean(axis=1))
    return dataclasses.replace(mesh, cavity_tris=tris[keep], cavity_tet=owner[keep],
                               cavity_ids=np.zeros(int(keep.sum()), dtype=int))


@pytest.fixture(scope="session")
def small_design():
    return build_design(1.0, 3, 1)


@pytest.fixture(scope="session")
def small_mesh(small_design):
    return mesh_outline(solid_outline(small_design), SMALL_RES)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def report_criterion(number, status, detail):
    line = f"criterion {number:>2}: {status:<4} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
