import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import circle_scene
from vortexlines.curves import Domain, circle, distance_to_curve, filament_pair, resample_arclength
from vortexlines.sectors import (PeriodDefect, build_reference_map, enumerate_sectors,
                                 loop_circulation, period_defects, plaquette_residues)
from vortexlines.torus_field import Grid, current_spectrum, solve_potential

L = 2 * np.pi
TOR = Domain.torus(L)


def defect(values, periods=(L, L, L)):
    v = np.asarray(values, float)
    return PeriodDefect(v, v, np.zeros(len(v), int), tuple(periods), np.zeros((len(v), len(v))),
                        np.zeros(len(v)))


@pytest.fixture(scope="module")
def centered():
    """Circle centred in the cell: symmetric under reflections of x1 and x2."""
    return circle_scene(32, 0.25, offset=(0.0, 0.0, 0.0))


@pytest.fixture(scope="module")
def lifted():
    """Circle whose plane sits between grid planes (no edge lies on the curve)."""
    return circle_scene(32, 0.25, offset=(0.013, 0.021, 0.05))


class TestPeriodDefects:
    def test_reflection_symmetric_axes_have_zero_defect(self, centered):
        # the circle is symmetric under x1 -> -x1 and x2 -> -x2 about its centre
        d = period_defects(centered[3])
        assert np.max(np.abs(d.values[:2])) < 0.01 * 2 * np.pi
        assert np.all(d.clearance >= 4 * centered[1].h)

    def test_normal_period_is_area_fraction(self, centered):
        # the x3 cycle crosses the spanning disc: its period is -2 pi * area / L^2 mod 2 pi
        dom, g, c, pot = centered
        n = c.n_vertices
        a = np.linalg.norm(c.vertices[0] - c.vertices.mean(axis=0))
        area = 0.5 * n * a * a * np.sin(2 * np.pi / n)
        d = period_defects(pot)
        assert d.values[2] == pytest.approx(-2 * np.pi * area / L**2, abs=0.01 * 2 * np.pi)

    def test_two_loops_differ_by_lattice_vector(self, circle32):
        dom, g, c, pot = circle32
        a = period_defects(pot, base=[0.3, 0.4, 0.2])
        b = period_defects(pot, base=[np.pi + 0.05, np.pi, np.pi + 0.1])
        k = (a.raw - b.raw) / (2 * np.pi)
        assert np.max(np.abs(k - np.round(k))) < 0.01

    def test_small_circle_far_from_loop(self):
        g = Grid.cubic(TOR, 32)
        c = resample_arclength(circle(0.8, TOR, center=[2.0, 4.1, 3.3], n_vertices=200), g.h)
        d = period_defects(solve_potential(current_spectrum([c], g)))
        # the in-plane cycles do not cross the disc; the normal one picks up the area fraction
        assert np.max(np.abs(d.values[:2])) < 0.01 * 2 * np.pi
        n = c.n_vertices
        area = 0.5 * n * 0.64 * np.sin(2 * np.pi / n)
        assert d.values[2] == pytest.approx(-2 * np.pi * area / L**2, abs=0.01 * 2 * np.pi)

    def test_no_admissible_loop(self, circle32):
        with pytest.raises(ValueError, match="no loop"):
            period_defects(circle32[3], min_clearance=40.0)


class TestEnumerate:
    def test_zero_defect(self):
        secs = enumerate_sectors(defect([0, 0, 0]))
        assert secs[0].label == (0, 0, 0) and secs[0].energy == 0.0
        assert secs[0].minimal and not secs[1].minimal
        assert len(secs) == 27

    def test_half_defect_ties(self):
        secs = enumerate_sectors(defect([np.pi, 0, 0]))
        mins = [s.label for s in secs if s.minimal]
        assert sorted(mins) == [(0, 0, 0), (1, 0, 0)]

    def test_closed_form_energy(self):
        secs = enumerate_sectors(defect([0.3, 0, 0]))
        assert secs[0].label == (0, 0, 0)
        assert secs[0].energy == pytest.approx(L**3 * (0.3 / L) ** 2, rel=1e-14)
        assert secs[1].energy > secs[0].energy

    def test_radius(self):
        with pytest.raises(ValueError):
            enumerate_sectors(defect([0, 0, 0]), radius=0)
        assert len(enumerate_sectors(defect([0, 0], (L, L)), radius=2)) == 25


@settings(max_examples=40, deadline=None)
@given(p=st.lists(st.floats(-np.pi, np.pi, exclude_min=True), min_size=3, max_size=3),
       periods=st.lists(st.floats(1.0, 10.0), min_size=3, max_size=3))
def test_argmin_is_rounding(p, periods):
    secs = enumerate_sectors(defect(p, periods))
    want = tuple(int(v) for v in np.round(np.asarray(p) / (2 * np.pi)))
    best = secs[0]
    assert best.label == want or np.isclose(best.energy, secs[1].energy, rtol=1e-9)
    # energies are the exact quadratic
    for s in secs[:5]:
        c = (2 * np.pi * np.array(s.label) - np.asarray(p)) / np.asarray(periods)
        assert s.energy == pytest.approx(np.prod(periods) * np.sum(c * c), rel=1e-12, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(p=st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3), i=st.integers(0, 26), j=st.integers(0, 26))
def test_sector_differences_have_integral_periods(p, i, j):
    secs = enumerate_sectors(defect(p))
    diff = (secs[i].harmonic - secs[j].harmonic) * L / (2 * np.pi)
    assert np.allclose(diff, np.round(diff), atol=1e-12)


class TestReferenceMap:
    def test_pure_winding(self):
        g = Grid.cubic(TOR, 16)
        pot = solve_potential(current_spectrum([], g, TOR))
        sec = [s for s in enumerate_sectors(defect([0, 0, 0])) if s.label == (1, 0, 0)][0]
        ref = build_reference_map(pot, sec)
        x = g.points()[..., 0]
        assert np.max(np.abs(ref.values - np.exp(2j * np.pi * x / L))) < 1e-6

    def test_unit_modulus_and_far_integrality(self, circle32):
        dom, g, c, pot = circle32
        sec = enumerate_sectors(period_defects(pot))[0]
        ref = build_reference_map(pot, sec)
        v = ref.values[ref.defined]
        assert np.max(np.abs(np.abs(v) - 1)) < 1e-12
        dist = distance_to_curve(g.points().reshape(-1, 3), c).reshape(g.shape)
        for (a, b), r in plaquette_residues(ref.values, ref.defined).items():
            far = (dist > 3 * g.h) & np.isfinite(r)
            dev = np.abs(r[far] - 2 * np.pi * np.round(r[far] / (2 * np.pi)))
            assert dev.max() < 0.01 * 2 * np.pi

    def test_pierced_plaquettes_match_crossings(self, lifted):
        dom, g, c, pot = lifted
        sec = enumerate_sectors(period_defects(pot))[0]
        ref = build_reference_map(pot, sec)
        circ = ref.circulations()
        wind = {k: np.round(v / (2 * np.pi)) for k, v in circ.items()}
        # the circle lies in a plane z = const between grid planes: only
        # plaquettes normal to x1 and x2 are pierced
        assert np.all(wind[(0, 1)] == 0)
        ctr = c.vertices.mean(axis=0)
        a = np.linalg.norm(c.vertices[0] - ctr)
        planes = g.axes()
        # crossings of the circle with the planes x1 = i h (normal-x1 plaquettes are (1, 2))
        cross_x = 2 * np.sum(np.abs(planes[0] - ctr[0]) < a)
        cross_y = 2 * np.sum(np.abs(planes[1] - ctr[1]) < a)
        assert np.sum(np.abs(wind[(1, 2)])) == cross_x
        assert np.sum(np.abs(wind[(0, 2)])) == cross_y
        # every non-pierced plaquette carries zero residue to quadrature accuracy
        for k, v in circ.items():
            assert np.max(np.abs(v - 2 * np.pi * wind[k])) < 1e-6

    def test_jacobian_localizes_and_integrates(self, lifted):
        dom, g, c, pot = lifted
        sec = enumerate_sectors(period_defects(pot))[0]
        ref = build_reference_map(pot, sec)
        jac = ref.jacobian()
        h = g.spacing
        # plaquette centres for the (1, 2) orientation
        ctrs = g.points() + 0.5 * np.array([0, h[1], h[2]])
        live = np.abs(jac[(1, 2)]) > 1e-6
        assert np.all(distance_to_curve(ctrs[live], c) < 2 * g.h)
        # transverse disc: the half-plane x1 = i h, x2 > centre, crossed once
        ctr = c.vertices.mean(axis=0)
        i = int(np.round(ctr[0] / h[0]))
        jy = g.axes()[1] > ctr[1]
        flux = np.sum(jac[(1, 2)][i][jy]) * h[1] * h[2]
        assert abs(abs(flux) - 2 * np.pi) < 1e-6


def test_loop_circulation_adds_harmonic_part():
    g = Grid.cubic(TOR, 16)
    pot = solve_potential(current_spectrum([], g, TOR))
    loop = circle(1.0, TOR, n_vertices=16)
    assert loop_circulation(pot, loop, harmonic=np.array([1.0, 2.0, 3.0])) == pytest.approx(0.0, abs=1e-12)


def test_filament_pair_half_cell_defect():
    g = Grid.cubic(TOR, 32)
    f1, f2 = filament_pair(np.pi, TOR, n_vertices=16, center=[np.pi, np.pi, np.pi])
    d = period_defects(solve_potential(current_spectrum([f1, f2], g)))
    # the x1 cycle crosses the strip between the filaments
    assert abs(abs(d.values[0]) - np.pi) < 1e-6
    secs = enumerate_sectors(d)
    assert sum(s.minimal for s in secs) == 2
