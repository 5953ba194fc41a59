import numpy as np
import pytest

from vortexlines.curves import Domain, circle, resample_arclength
from vortexlines.torus_field import Grid, current_spectrum, solve_potential

TWO_PI = 2 * np.pi


@pytest.fixture(scope="session")
def torus():
    return Domain.torus(TWO_PI)


def circle_scene(n, radius_frac=0.25, offset=(0.013, 0.021, 0.0), vertices=None):
    dom = Domain.torus(TWO_PI)
    g = Grid.cubic(dom, n)
    ctr = np.full(3, np.pi) + np.asarray(offset)
    c = circle(radius_frac * TWO_PI, dom, ctr, n_vertices=vertices or 400)
    c = resample_arclength(c, g.h) if vertices is None else c
    pot = solve_potential(current_spectrum([c], g))
    return dom, g, c, pot


@pytest.fixture(scope="session")
def circle32():
    return circle_scene(32)


@pytest.fixture(scope="session")
def circle64():
    return circle_scene(64)


ACCEPTANCE = {}


@pytest.fixture
def record():
    """Store ``(passed, detail)`` for an acceptance criterion and echo it."""

    def _record(number, title, passed, detail):
        ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title}: {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title}: {detail}")
