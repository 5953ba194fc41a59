"""Wires carrying currents in free space.

The vector potential of a wire system solves ``Delta A = 2 pi sum_j I_j [gamma_j]``
(degree normalization: a unit current has circulation ``2 pi``), so
``A(x) = (1/2) sum_j I_j oint tau / |x - y|`` and ``B = curl A``.  The
physical convention ``Delta A = mu_0 I`` differs by the factor
``mu_0 / (2 pi)`` (see :data:`DEGREE_TO_SI_FIELD`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curves import Curve, linking_number
from .kernels import gauss_legendre01, line_biot_savart
from .renorm import INDUCTANCE_TO_DEGREE, _min_gap, _segment_arrays, neumann_inductance, self_inductance_r3

__all__ = [
    "WireSystem",
    "biot_savart_field",
    "ampere_circulation",
    "magnetic_energy_matrix",
    "EnergyMatrix",
    "DEGREE_TO_SI_FIELD",
    "expected_circulation",
]

MU_0 = 4e-7 * np.pi
DEGREE_TO_SI_FIELD = MU_0 / (2 * np.pi)
"""Multiply a degree-normalized field by this to get tesla per ampere."""


@dataclass
class WireSystem:
    """Closed wires in ``R^3`` with real current intensities."""

    curves: list
    intensities: np.ndarray = None

    def __post_init__(self):
        self.curves = [self.curves] if isinstance(self.curves, Curve) else list(self.curves)
        if not self.curves:
            raise ValueError("a wire system needs at least one wire")
        for c in self.curves:
            if c.domain.is_torus or c.domain.dim != 3:
                raise ValueError("wires live in three-dimensional Euclidean space")
        m = len(self.curves)
        I = np.ones(m) if self.intensities is None else np.asarray(self.intensities, dtype=float)
        if I.shape != (m,):
            raise ValueError(f"need {m} intensities, got shape {I.shape}")
        if not np.all(np.isfinite(I)):
            raise ValueError("intensities must be finite")
        self.intensities = I
        for i in range(m):
            for j in range(i + 1, m):
                gap = _min_gap(*_segment_arrays(self.curves[i]), *_segment_arrays(self.curves[j]))
                if gap <= 0.0:
                    raise ValueError(f"wires {i} and {j} intersect")

    def __len__(self):
        return len(self.curves)

    def reordered(self, order):
        return WireSystem([self.curves[k] for k in order], self.intensities[list(order)])

    def union(self, other):
        return WireSystem(self.curves + other.curves,
                          np.concatenate([self.intensities, other.intensities]))

    def segments(self):
        """Starts, vectors and per-segment intensity of all wires."""
        a, d, w = [], [], []
        for c, I in zip(self.curves, self.intensities):
            aa, dd = _segment_arrays(c)
            a.append(aa)
            d.append(dd)
            w.append(np.full(len(aa), I))
        return np.concatenate(a), np.concatenate(d), np.concatenate(w)


def biot_savart_field(system, points, min_distance=1e-9, chunk=2048):
    """``B = curl A`` at ``points`` (shape ``(P, 3)`` or ``(3,)``).

    Each straight segment contributes its closed-form kernel; raises if a
    point lies within ``min_distance`` of a wire.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    a, d, I = system.segments()
    out = np.zeros_like(pts)
    dd = np.einsum("ij,ij->i", d, d)
    for lo in range(0, len(pts), chunk):
        x = pts[lo:lo + chunk]
        ra = x[:, None, :] - a[None]
        t = np.clip(np.einsum("psj,sj->ps", ra, d) / dd, 0.0, 1.0)
        dist = np.linalg.norm(ra - t[..., None] * d[None], axis=-1)
        if dist.min() < min_distance:
            raise ValueError("evaluation point lies on a wire")
        kern = line_biot_savart(ra, d[None])
        out[lo:lo + chunk] = 0.5 * np.einsum("psj,s->pj", kern, I)
    return out[0] if single else out


def _segment_circulation(system, a, d, nodes):
    t, w = gauss_legendre01(nodes)
    pts = (a[:, None] + t[None, :, None] * d[:, None]).reshape(-1, 3)
    B = biot_savart_field(system, pts).reshape(len(a), nodes, 3)
    return np.einsum("snj,sj,n->s", B, d, w)


def ampere_circulation(system, loop, tol=1e-10, nodes=8, max_depth=30):
    """``oint_loop B . dl`` by adaptive Gauss-Legendre quadrature.

    Each loop segment is integrated with ``nodes`` points and with two halves;
    pieces whose estimates differ by more than ``tol`` (times the scale
    ``2 pi max |I|``) are bisected.  For a loop disjoint from the wires the
    result is ``2 pi sum_j I_j lk(loop, gamma_j)``.
    """
    a, d = _segment_arrays(loop)
    scale = 2 * np.pi * max(float(np.max(np.abs(system.intensities))), 1e-300)
    total = 0.0
    pa, pd = a, d
    for _ in range(max_depth):
        if len(pa) == 0:
            break
        whole = _segment_circulation(system, pa, pd, nodes)
        ha = np.concatenate([pa, pa + 0.5 * pd])
        hd = np.concatenate([0.5 * pd, 0.5 * pd])
        halves = _segment_circulation(system, ha, hd, nodes)
        halves = halves[:len(pa)] + halves[len(pa):]
        bad = np.abs(whole - halves) > tol * scale / max(len(pa), 1) ** 0.5
        total += float(np.sum(halves[~bad]))
        pa, pd = ha[np.concatenate([bad, bad])], hd[np.concatenate([bad, bad])]
    if len(pa):
        raise ValueError("adaptive circulation did not converge; loop too close to a wire")
    return total


def expected_circulation(system, loop):
    """``2 pi sum_j I_j lk(loop, gamma_j)`` from exact linking numbers."""
    return 2 * np.pi * sum(I * linking_number(loop, c)
                           for c, I in zip(system.curves, system.intensities))


@dataclass
class EnergyMatrix:
    """Inductance-convention matrix with its degree-convention energy.

    ``matrix[j, j]`` is the renormalized self-inductance of wire ``j`` and
    ``matrix[j, k]`` the Neumann mutual inductance.  ``inductance_energy`` is
    ``I^T M I`` and ``energy = pi * I^T M I`` is the renormalized energy in
    the degree convention.
    """

    matrix: np.ndarray
    intensities: np.ndarray
    inductance_energy: float
    energy: float
    self_terms: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "matrix": self.matrix.tolist(),
            "intensities": self.intensities.tolist(),
            "inductance_energy": self.inductance_energy,
            "energy": self.energy,
            "self_drift": [s.drift for s in self.self_terms],
        }


def magnetic_energy_matrix(system, core, check=True):
    """Self-inductances on the diagonal, Neumann integrals off it."""
    m = len(system)
    M = np.zeros((m, m))
    selfs = []
    for j, c in enumerate(system.curves):
        s = self_inductance_r3(c, core, check=check)
        selfs.append(s)
        M[j, j] = s.value
    for j in range(m):
        for k in range(j + 1, m):
            M[j, k] = M[k, j] = neumann_inductance(system.curves[j], system.curves[k])
    I = system.intensities
    e = float(I @ M @ I)
    return EnergyMatrix(M, I.copy(), e, INDUCTANCE_TO_DEGREE * e, selfs)
