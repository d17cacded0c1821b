import numpy as np
import pytest

from hybridcst.geometry import ConvexPolygon, build_beam_layout, ros_polygon
from hybridcst.meshing import build_hybrid_mesh, build_uniform_mesh, centered_rect

L = 10.0
DEMO_SPACING = 0.07 * L


def demo_layout():
    return build_beam_layout(4, 8, DEMO_SPACING, L, clip_to=ConvexPolygon.square(L))


def demo_hybrid(ros=None):
    ros = ros or ConvexPolygon.square(L)
    return build_hybrid_mesh(ros, L / 5, L / 10, centered_rect(0.6 * L))


def demo_uniform(ros=None):
    ros = ros or ConvexPolygon.square(L)
    return build_uniform_mesh(ros, L / 7, centered_rect(5 * L / 7))


def sim_layout():
    return build_beam_layout(4, 8, 1.8, 36.8)


@pytest.fixture(scope="session")
def demo():
    lay = demo_layout()
    return lay, demo_hybrid(), demo_uniform()


@pytest.fixture(scope="session")
def sim():
    lay = sim_layout()
    ros = ros_polygon(lay)
    roi = centered_rect(22.08)
    return lay, ros, build_hybrid_mesh(ros, 3.68, 1.84, roi), build_uniform_mesh(ros, 2.63, roi)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(':'))):
            terminalreporter.write_line(line)
