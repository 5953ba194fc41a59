import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import circle_scene
from oracles import dipole_field
from vortexlines.asymptotics import (TubeMask, default_deltas, fit_expansion,
                                     tube_energy, tube_norm_decay, tube_volume_estimate)
from vortexlines.curves import Domain, filament_pair
from vortexlines.torus_field import Grid, current_spectrum, grid_distance, solve_potential

L = 2 * np.pi
TOR = Domain.torus(L)


class TestMask:
    def test_nested(self, circle32):
        dom, g, c, pot = circle32
        dist = grid_distance(g, pot.sources, L / 8, stagger=0.5)
        small = TubeMask.build(pot, 4 * g.h, dist)
        large = TubeMask.build(pot, L / 8, dist)
        assert np.all(large.mask <= small.mask)

    def test_excised_volume(self, circle64):
        dom, g, c, pot = circle64
        for delta in (4 * g.h, L / 16):
            tm = TubeMask.build(pot, delta)
            assert abs(tm.excised_volume / tube_volume_estimate([c], delta) - 1) < 0.1


class TestTubeEnergy:
    def test_empty_scene(self):
        g = Grid.cubic(TOR, 64)
        pot = solve_potential(current_spectrum([], g, TOR))
        om = np.array([0.3, -1.0, 0.2])
        te = tube_energy(pot, om, 4 * g.h)
        assert te.total == pytest.approx(TOR.volume * om @ om, rel=1e-13)

    def test_delta_range(self, circle32):
        dom, g, c, pot = circle32
        with pytest.raises(ValueError, match="4h"):
            tube_energy(pot, None, 3 * g.h)
        with pytest.raises(ValueError):
            tube_energy(pot, None, L / 7)

    def test_filament_pair_lattice_oracle(self):
        g = Grid.cubic(TOR, 32)
        f1, f2 = filament_pair(L / 3, TOR, n_vertices=24, center=[L / 2 + 0.013, L / 2 + 0.021, L / 2])
        pot = solve_potential(current_spectrum([f1, f2], g))
        delta = L / 8
        te = tube_energy(pot, None, delta)
        mask = TubeMask.build(pot, delta).mask
        assert np.all(mask == mask[:, :, :1])
        pts = g.points(0.5)[:, :, 0, :2][mask[:, :, 0]]
        p1, p2 = f1.vertices[0][:2], f2.vertices[0][:2]
        # the oracle integrates the theta-function field over the same cells
        dens = sum(float(b @ b) for b in (dipole_field(x, p1, p2, L) for x in pts))
        oracle = dens * g.cell_volume * g.shape[2]
        assert te.total == pytest.approx(oracle, rel=0.03)

    def test_split_and_cross_decay(self, circle64):
        dom, g, c, pot = circle64
        om = np.array([0.3, -0.2, 0.5])
        terms = [tube_energy(pot, om, m * g.h) for m in (4, 8)]
        for t in terms:
            assert t.total == pytest.approx(t.coexact + t.harmonic + t.cross, rel=1e-10)
        # 2 int (b, omega) over the complement is O(delta)
        assert abs(terms[0].cross) < 0.6 * abs(terms[1].cross)

    def test_monotone_in_delta(self, circle64):
        dom, g, c, pot = circle64
        e = [tube_energy(pot, None, m * g.h).total for m in (4, 5, 6, 7, 8)]
        assert np.all(np.diff(e) <= 0)


class TestFit:
    def test_synthetic(self):
        d = np.geomspace(0.01, 0.1, 6)
        c1, c0, res = fit_expansion(d, 7 * np.log(1 / d) + 3)
        assert (c1, c0) == (pytest.approx(7, rel=1e-12), pytest.approx(3, rel=1e-12))
        assert res < 1e-12

    def test_curvature_terms_recover_remainder(self):
        d = np.geomspace(0.05, 0.4, 8)
        e = 7 * np.log(1 / d) + 3 + 2 * d**2 - 0.5 * d**2 * np.log(d)
        fit = fit_expansion(d, e, curvature_terms=True)
        assert fit.c1 == pytest.approx(7, rel=1e-8)

    def test_preconditions(self):
        d = np.geomspace(0.01, 0.1, 6)
        with pytest.raises(ValueError, match="samples"):
            fit_expansion(d[:4], d[:4])
        with pytest.raises(ValueError, match="span"):
            fit_expansion(np.geomspace(0.01, 0.03, 6), np.ones(6))
        with pytest.raises(ValueError, match="ill-conditioned"):
            fit_expansion(np.repeat([0.01, 0.04], 3), np.ones(6), curvature_terms=True)

    def test_default_deltas(self, circle64):
        dom, g, c, pot = circle64
        d = default_deltas(g)
        assert len(d) == 8 and d[0] == pytest.approx(4 * g.h)
        # at N = 64 the band [4h, L/10] is too narrow and widens to L/8
        assert d[-1] == pytest.approx(L / 8)


@settings(max_examples=30, deadline=None)
@given(c1=st.floats(0.1, 100), c0=st.floats(-100, 100), lo=st.floats(1e-3, 0.05))
def test_fit_exact_on_model(c1, c0, lo):
    d = np.geomspace(lo, 10 * lo, 7)
    f = fit_expansion(d, c1 * np.log(1 / d) + c0)
    assert f.c1 == pytest.approx(c1, rel=1e-8, abs=1e-8)
    assert f.c0 == pytest.approx(c0, rel=1e-8, abs=1e-7)


def test_leading_coefficient_stable_under_refinement():
    """c1 from the same radii on N = 64 and N = 128.

    At N = 64 the admissible radii [4h, L/8] span only a factor 2, so the
    span requirement is relaxed for this comparison.
    """
    fits = []
    d = np.geomspace(4 * L / 64, L / 8, 6)
    for n in (64, 128):
        dom, g, c, pot = circle_scene(n, 0.25)
        dist = grid_distance(g, pot.sources, L / 8, stagger=0.5)
        values = pot.field_on_grid(0.5, where=dist > d[0])
        energies = [tube_energy(pot, None, x, values, dist).total for x in d]
        fits.append(fit_expansion(d, energies, min_span=2.0))
    length = c.segment_lengths.sum()
    assert abs(fits[1].c1 / (2 * np.pi * length) - 1) < 0.05
    assert abs(fits[1].c1 / fits[0].c1 - 1) < 0.01


@pytest.fixture(scope="module")
def ring():
    return circle_scene(64, 0.25, offset=(-0.04, -0.14, 0.06))


class TestDecay:
    def test_slopes(self, ring):
        dom, g, c, pot = ring
        ds = np.array([2, 3, 4, 6, 8]) * g.h
        r1 = tube_norm_decay(pot, 1.0, ds, curves=[c])
        r15 = tube_norm_decay(pot, 1.5, ds, curves=[c])
        assert abs(r1.slope - 1) < 0.15
        assert abs(r15.slope - 1 / 3) < 0.1
        assert np.all(np.diff(r1.norms) > 0)

    def test_r_range(self, ring):
        with pytest.raises(ValueError):
            tube_norm_decay(ring[3], 2.0, [0.1, 0.2], curves=[ring[2]])
