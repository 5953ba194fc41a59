import numpy as np
import pytest

from oracles import coaxial_mutual_scipy, polygon_center_field
from vortexlines.curves import Curve, Domain, circle
from vortexlines.euclid import (WireSystem, ampere_circulation, biot_savart_field, expected_circulation,
                                magnetic_energy_matrix)
from vortexlines.renorm import neumann_inductance, self_inductance_r3

EUC = Domain.euclidean()


def ring(a=1.0, center=(0, 0, 0), axis=2, n=256):
    return circle(a, EUC, list(center), axis=axis, n_vertices=n)


class TestField:
    @pytest.mark.parametrize("n", [3, 6, 64])
    def test_polygon_centre(self, n):
        b = biot_savart_field(WireSystem([ring(1.3, n=n)]), np.zeros(3))
        assert b[2] == pytest.approx(polygon_center_field(n, 1.3), rel=1e-12)
        assert np.allclose(b[:2], 0, atol=1e-12)

    def test_axis_profile(self):
        a = 1.0
        z = np.array([0.5, 2.0, 10.0, 20.0])
        b = biot_savart_field(WireSystem([ring(a, n=4096)]), np.c_[0 * z, 0 * z, z])
        exact = np.pi * a**2 / (a**2 + z**2) ** 1.5
        assert np.allclose(b[:, 2] / exact, 1, atol=1e-5)
        # dipole far field: doubling the distance divides the field by eight
        assert b[2, 2] / b[3, 2] == pytest.approx(8, rel=0.1)

    def test_mirror_symmetry(self):
        sys_ = WireSystem([ring(n=128)])
        p = np.array([0.3, -0.4, 0.7])
        up, down = biot_savart_field(sys_, p), biot_savart_field(sys_, p * [1, 1, -1])
        # B is a pseudovector: reflecting z keeps B_z and flips the in-plane part
        assert np.allclose(up * [-1, -1, 1], down, atol=1e-13)

    def test_on_wire_raises(self):
        sys_ = WireSystem([ring(n=16)])
        with pytest.raises(ValueError):
            biot_savart_field(sys_, sys_.curves[0].vertices[3])


class TestAmpere:
    loop = ring(0.3, center=(1, 0, 0), axis=1, n=64)

    def test_linked_loop(self):
        sys_ = WireSystem([ring()])
        want = expected_circulation(sys_, self.loop)
        assert abs(want) == pytest.approx(2 * np.pi)
        assert ampere_circulation(sys_, self.loop) == pytest.approx(want, rel=1e-4)

    def test_unlinked_loop(self):
        sys_ = WireSystem([ring()])
        far = ring(0.3, center=(3, 0, 0), axis=1, n=64)
        assert abs(ampere_circulation(sys_, far)) < 1e-8

    def test_intensity_and_additivity(self):
        one = WireSystem([ring()])
        other = WireSystem([ring(2.0, center=(0, 0, 0.5), n=256)], [-0.7])
        both = WireSystem([ring(), ring(2.0, center=(0, 0, 0.5), n=256)], [2.0, -0.7])
        c1 = ampere_circulation(one, self.loop)
        c2 = ampere_circulation(other, self.loop)
        assert ampere_circulation(WireSystem([ring()], [2.0]), self.loop) == pytest.approx(2 * c1, rel=1e-9)
        assert ampere_circulation(both, self.loop) == pytest.approx(2 * c1 + c2, rel=1e-9)


class TestEnergyMatrix:
    core = 0.05

    def test_single_wire(self):
        c = ring(n=512)
        em = magnetic_energy_matrix(WireSystem([c], [1.5]), self.core)
        s = self_inductance_r3(c, self.core).value
        assert em.matrix[0, 0] == s
        assert em.energy == pytest.approx(np.pi * 2.25 * s, rel=1e-14)

    def test_off_diagonal_is_neumann(self):
        a, b = ring(n=512), ring(0.8, center=(0, 0, 1.0), n=512)
        em = magnetic_energy_matrix(WireSystem([a, b]), self.core)
        assert em.matrix[0, 1] == em.matrix[1, 0] == neumann_inductance(a, b)
        assert em.matrix[0, 1] == pytest.approx(coaxial_mutual_scipy(1.0, 0.8, 1.0), rel=1e-4)

    def test_permutation_and_reversal(self):
        curves = [ring(n=256), ring(0.8, center=(0, 0, 1.0), n=256), ring(0.5, center=(2.5, 0, 0), axis=0, n=256)]
        I = np.array([1.0, -0.5, 2.0])
        base = magnetic_energy_matrix(WireSystem(curves, I), self.core)
        order = [2, 0, 1]
        perm = magnetic_energy_matrix(WireSystem([curves[k] for k in order], I[order]), self.core)
        assert np.allclose(perm.matrix, base.matrix[np.ix_(order, order)], rtol=1e-12)
        assert np.allclose(base.matrix, base.matrix.T, rtol=1e-12)
        # reversing a wire and its current leaves the energy unchanged
        flipped = [curves[0].reversed(), curves[1], curves[2]]
        rev = magnetic_energy_matrix(WireSystem(flipped, I * [-1, 1, 1]), self.core)
        assert rev.energy == pytest.approx(base.energy, rel=1e-10)
        assert rev.matrix[0, 1] == pytest.approx(-base.matrix[0, 1], rel=1e-10)


class TestValidation:
    def test_rejects(self):
        with pytest.raises(ValueError):
            WireSystem([])
        with pytest.raises(ValueError):
            WireSystem([ring()], [1.0, 2.0])
        with pytest.raises(ValueError):
            WireSystem([ring()], [np.nan])
        with pytest.raises(ValueError):
            WireSystem([circle(1.0, Domain.torus(2 * np.pi), [3, 3, 3], n_vertices=32)])
        with pytest.raises(ValueError, match="intersect"):
            WireSystem([ring(n=64), Curve(np.array([[1, 0, -1], [1, 0, 1], [3, 0, 1], [3, 0, -1.0]]), EUC)])
