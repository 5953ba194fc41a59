import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dipole_potential
from vortexlines.curves import (Curve, Domain, circle, filament_pair, linking_number,
                                resample_arclength, square)
from vortexlines.sectors import loop_circulation
from vortexlines.torus_field import (BandLimitedForm, Grid, OneForm, ScalarField, current_spectrum,
                                     dstar_psi, export_field, hodge_decompose, solve_potential,
                                     stokes_check)
from vortexlines.torus_field import spectral_norm
from vortexlines.validation import meridian_loop

L = 2 * np.pi
TOR = Domain.torus(L)


class TestGrid:
    @pytest.mark.parametrize("n", [8, 15, 17])
    def test_rejects_small_or_odd(self, n):
        with pytest.raises(ValueError):
            Grid.cubic(TOR, n)

    def test_round_trip_and_parseval(self):
        g = Grid(TOR, (16, 20, 18))
        rng = np.random.default_rng(0)
        v = rng.standard_normal(g.shape)
        c = ScalarField(v, g).coefficients()
        assert np.max(np.abs(g.inverse(c) - v)) < 1e-12
        assert spectral_norm(c, g) == pytest.approx(ScalarField(v, g).l2_norm(), rel=1e-12)

    def test_nodes(self):
        g = Grid.cubic(TOR, 16)
        assert np.allclose(g.points()[3, 0, 5], [3 * g.h, 0, 5 * g.h])


class TestCurrentSpectrum:
    def test_empty(self):
        g = Grid.cubic(TOR, 16)
        assert np.all(current_spectrum([], g, TOR).coeffs == 0)

    def test_closedness(self, circle32):
        dom, g, c, pot = circle32
        assert current_spectrum([c], g).divergence_residual() < 1e-13

    def test_axis_filament_has_no_k3_dependence(self):
        g = Grid.cubic(TOR, 16)
        f1, _ = filament_pair(1.0, TOR, n_vertices=8)
        cs = current_spectrum([f1], g)
        assert np.max(np.abs(cs.coeffs[..., 1:])) < 1e-14 * np.max(np.abs(cs.coeffs))

    def test_segment_series_branch(self):
        # exact line integral against fine quadrature for one mode
        g = Grid.cubic(TOR, 16)
        c = circle(1.0, TOR, n_vertices=7)
        cs = current_spectrum([c], g)
        k = np.array([1.0, 2.0, 0.0])
        a, b = c.segments()
        t = (np.arange(20000) + 0.5) / 20000
        tot = 0
        for a0, b0 in zip(a, b):
            x = a0 + t[:, None] * (b0 - a0)
            tot += np.mean(np.exp(-1j * x @ k)) * (b0 - a0)
        assert np.allclose(cs.coeffs[:, 1, 2, 0], tot / TOR.volume, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_polyline_is_divergence_free(seed):
    rng = np.random.default_rng(seed)
    g = Grid.cubic(TOR, 16)
    pts = np.pi + 0.3 * rng.standard_normal((9, 3))
    c = Curve(pts, TOR)
    assert current_spectrum([c], g).divergence_residual() < 1e-12


class TestSolve:
    def test_empty_current(self):
        g = Grid.cubic(TOR, 16)
        pot = solve_potential(current_spectrum([], g, TOR))
        assert np.all(pot.potential(np.ones((2, 3))) == 0)

    def test_sigma_range(self):
        g = Grid.cubic(TOR, 16)
        cs = current_spectrum([], g, TOR)
        with pytest.raises(ValueError):
            solve_potential(cs, sigma=0.5 * g.h)
        with pytest.raises(ValueError):
            solve_potential(cs, sigma=5 * g.h)

    def test_rejects_non_bounding_curve(self):
        g = Grid.cubic(TOR, 16)
        f1, _ = filament_pair(1.0, TOR, n_vertices=8)
        with pytest.raises(ValueError, match="bound"):
            solve_potential(current_spectrum([f1], g))

    def test_divergence_free(self, circle32):
        assert circle32[3].divergence_of_coexact_residual() < 1e-12

    def test_filament_pair_against_lattice_sum(self):
        g = Grid.cubic(TOR, 32)
        f1, f2 = filament_pair(L / 3, TOR, n_vertices=24)
        pot = solve_potential(current_spectrum([f1, f2], g))
        pts = np.random.default_rng(1).uniform(0, L, (20, 3))
        A = pot.potential(pts)
        ref = dipole_potential(pts, f1.vertices[0][:2], f2.vertices[0][:2], L)
        assert np.max(np.abs(A[:, 2] - ref)) < 1e-6
        assert np.max(np.abs(A[:, :2])) < 1e-9
        # independent of x3
        shifted = pts.copy()
        shifted[:, 2] += 1.234
        assert np.max(np.abs(pot.potential(shifted) - A)) < 1e-9

    def test_small_circle_center_field(self):
        dom = Domain.torus(8 * np.pi)
        g = Grid.cubic(dom, 64)
        c = resample_arclength(circle(0.5, dom, n_vertices=400), g.h / 4)
        pot = solve_potential(current_spectrum([c], g))
        B = dstar_psi(pot)(dom.center[None])[0]
        assert abs(np.linalg.norm(B) / (np.pi / 0.5) - 1) < 0.01
        assert abs(B[2]) / np.linalg.norm(B) > 0.999


class TestCirculation:
    """Loops around a circle of radius L/4 on a 64^3 grid."""

    def test_single_and_double_linking(self, circle64):
        dom, g, c, pot = circle64
        for turns in (1, 2):
            loop = meridian_loop(c, 3, 3 * g.h, turns=turns)
            lk = linking_number(loop, c)
            assert abs(lk) == turns
            got = loop_circulation(pot, loop)
            assert abs(got - 2 * np.pi * lk) < 0.01 * 2 * np.pi

    def test_square_loop_sign(self, circle64):
        dom, g, c, pot = circle64
        p = c.vertices[0]
        loop = square(6 * g.h, dom, center=p, axis=1, points_per_side=8)
        lk = linking_number(loop, c)
        assert lk != 0
        assert loop_circulation(pot, loop) == pytest.approx(2 * np.pi * lk, abs=0.02 * np.pi)

    def test_unlinked(self, circle64):
        dom, g, c, pot = circle64
        loop = square(1.0, dom, center=[1.0, 1.0, 1.0], axis=0, points_per_side=8)
        assert abs(loop_circulation(pot, loop)) < 0.01 * 2 * np.pi


class TestHodge:
    def test_constant_form(self):
        g = Grid.cubic(TOR, 16)
        v = np.ones((3,) + g.shape) * np.array([0.3, -1.0, 2.0])[:, None, None, None]
        phi, co, har = hodge_decompose(OneForm(v, g))
        assert np.allclose(har, [0.3, -1.0, 2.0])
        assert np.max(np.abs(phi.values)) < 1e-12 and np.max(np.abs(co.values)) < 1e-12

    def test_exact_form(self):
        g = Grid.cubic(TOR, 32)
        x = g.points()
        phi = np.sin(x[..., 0]) * np.cos(2 * x[..., 1]) + 0.3 * np.cos(x[..., 2])
        grad = np.stack([np.cos(x[..., 0]) * np.cos(2 * x[..., 1]),
                         -2 * np.sin(x[..., 0]) * np.sin(2 * x[..., 1]),
                         -0.3 * np.sin(x[..., 2])])
        p, co, har = hodge_decompose(OneForm(grad, g))
        assert np.max(np.abs(p.values - phi)) < 1e-10
        assert np.max(np.abs(co.values)) < 1e-10 and np.max(np.abs(har)) < 1e-12

    def test_orthogonal_parts(self):
        g = Grid.cubic(TOR, 16)
        v = np.random.default_rng(2).standard_normal((3,) + g.shape)
        p, co, har = hodge_decompose(OneForm(v, g))
        ex = OneForm(v - co.values - har[:, None, None, None], g)
        scale = OneForm(v, g).l2_norm() ** 2
        assert abs(ex.inner(co)) < 1e-10 * scale

    def test_field_is_coexact(self, circle32):
        dom, g, c, pot = circle32
        b = OneForm(g.inverse(pot.field_coefficients()), g)
        p, co, har = hodge_decompose(b)
        ex = OneForm(b.values - co.values - har[:, None, None, None], g)
        assert ex.l2_norm() < 1e-8 * b.l2_norm()
        assert np.linalg.norm(har) < 1e-8 * b.l2_norm()


class TestStokes:
    def test_zero_form(self, circle32):
        dom, g, c, pot = circle32
        r = stokes_check(pot, 4 * g.h, BandLimitedForm(dom, constant=[0, 0, 0]), curves=[c])
        assert r.residual == 0.0

    def test_constant_form(self, circle64):
        dom, g, c, pot = circle64
        r = stokes_check(pot, 8 * g.h, BandLimitedForm(dom, constant=[0.3, -0.2, 0.5]), curves=[c])
        assert r.residual < 0.02
        # constant forms are closed, so the boundary term balances the line term
        assert abs(r.volume) < 1e-8 * abs(r.boundary) + 1e-12

    def test_delta_range(self, circle32):
        dom, g, c, pot = circle32
        with pytest.raises(ValueError):
            stokes_check(pot, 2 * g.h, curves=[c])


def test_linearity_and_reversal(circle32):
    dom, g, c, pot = circle32
    other = resample_arclength(circle(0.8, dom, center=[1.0, 1.5, 1.0], axis=0, n_vertices=200), g.h)
    both = solve_potential(current_spectrum([c, other], g))
    p2 = solve_potential(current_spectrum([other], g))
    rev = solve_potential(current_spectrum([c.reversed()], g))
    pts = np.random.default_rng(5).uniform(0, L, (30, 3))
    A = pot.potential(pts)
    assert np.max(np.abs(both.potential(pts) - A - p2.potential(pts))) < 1e-10 * np.max(np.abs(A))
    assert np.max(np.abs(rev.potential(pts) + A)) < 1e-12 * np.max(np.abs(A))
    assert np.max(np.abs(rev.field(pts) + pot.field(pts))) < 1e-12 * np.max(np.abs(pot.field(pts)))


def test_export(tmp_path, circle32):
    dom, g, c, pot = circle32
    vals = pot.field_on_grid(0.0)
    export_field(tmp_path / "b", vals, g, ["b1", "b2", "b3"])
    files = sorted(p.name for p in tmp_path.iterdir())
    assert any(f.endswith(".json") for f in files)
    raw = [p for p in tmp_path.iterdir() if not p.name.endswith(".json")][0]
    data = np.fromfile(raw, dtype="<f8").reshape(vals.shape)
    assert np.array_equal(data, vals)
