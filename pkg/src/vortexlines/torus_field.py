"""Spectral Hodge machinery on flat tori.

Fields are represented by Fourier coefficients ``f_k`` with
``f(x) = sum_k f_k exp(i k.x)``.  The Laplacian has the positive symbol
``|k|^2`` and the potential of a closed current solves ``Delta A = 2 pi J``.

Pointwise evaluation uses an Ewald split with Gaussian width ``sigma``: a
band-limited far field evaluated by non-uniform FFT, and a short-range
near field built from exact straight-segment integrals minus their smoothed
counterparts.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import finufft
import numba
import numpy as np
import scipy.fft as sfft
from scipy.spatial import cKDTree

from . import kernels
from .curves import Curve, Domain, PointCharge

__all__ = [
    "Grid",
    "ScalarField",
    "OneForm",
    "CurrentSpectrum",
    "PotentialField",
    "current_spectrum",
    "solve_potential",
    "dstar_psi",
    "hodge_decompose",
    "stokes_check",
    "BandLimitedForm",
    "grid_distance",
    "export_field",
]

_NUFFT_EPS = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform grid on a torus with nodes at ``i_j * h_j``."""

    domain: Domain
    shape: tuple

    def __post_init__(self):
        if not self.domain.is_torus:
            raise ValueError("grids live on tori")
        shape = tuple(int(n) for n in np.broadcast_to(self.shape, (self.domain.dim,)))
        if any(n < 16 or n % 2 for n in shape):
            raise ValueError(f"grid sizes must be even and at least 16, got {shape}")
        object.__setattr__(self, "shape", shape)

    @classmethod
    def cubic(cls, domain, n):
        return cls(domain, (int(n),) * domain.dim)

    @property
    def dim(self):
        return self.domain.dim

    @property
    def spacing(self):
        return self.domain.period_array / np.asarray(self.shape)

    @property
    def h(self):
        """Largest grid spacing."""
        return float(self.spacing.max())

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def half_shape(self):
        return self.shape[:-1] + (self.shape[-1] // 2 + 1,)

    def axes(self, stagger=0.0):
        return [(np.arange(n) + stagger) * h for n, h in zip(self.shape, self.spacing)]

    def points(self, stagger=0.0):
        """Node (or staggered) coordinates, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(stagger), indexing="ij"), axis=-1)

    def wavenumbers(self, half=True):
        """Broadcastable wavenumber arrays in FFT ordering.

        With ``half`` the last axis follows the ``rfftn`` layout.
        """
        ks = []
        for j, (n, L) in enumerate(zip(self.shape, self.domain.periods)):
            if half and j == self.dim - 1:
                k = 2 * np.pi * sfft.rfftfreq(n, d=L / n)
            else:
                k = 2 * np.pi * sfft.fftfreq(n, d=L / n)
            sh = [1] * self.dim
            sh[j] = len(k)
            ks.append(k.reshape(sh))
        return ks

    def derivative_wavenumbers(self, half=True):
        """Wavenumbers with the Nyquist entries zeroed (odd derivatives of real fields)."""
        out = []
        for j, k in enumerate(self.wavenumbers(half)):
            k = k.copy()
            k.reshape(-1)[self.shape[j] // 2] = 0.0
            out.append(k)
        return out

    def k_squared(self, half=True):
        return sum(k * k for k in self.wavenumbers(half))

    def forward(self, values):
        """Coefficients ``f_k`` (rfft layout) of real node values."""
        return sfft.rfftn(values, axes=tuple(range(-self.dim, 0))) / self.size

    def inverse(self, coeffs, stagger=0.0):
        """Real node values from rfft-layout coefficients, optionally at
        points shifted by ``stagger * h`` along every axis."""
        if stagger:
            coeffs = coeffs * self.shift_phase(stagger)
        return sfft.irfftn(coeffs * self.size, s=self.shape, axes=tuple(range(-self.dim, 0)))

    def shift_phase(self, stagger, half=True):
        ks = self.wavenumbers(half)
        ph = 1.0
        for k, h in zip(ks, self.spacing):
            ph = ph * np.exp(1j * k * stagger * h)
        return ph

    def nyquist_mask(self, half=True):
        """True on modes that lie on a Nyquist plane of any axis."""
        m = np.zeros(self.half_shape if half else self.shape, dtype=bool)
        for j, n in enumerate(self.shape):
            sl = [slice(None)] * self.dim
            sl[j] = n // 2
            m[tuple(sl)] = True
        return m

    def to_dict(self):
        return {"domain": self.domain.to_dict(), "shape": list(self.shape)}


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray
    grid: Grid

    def coefficients(self):
        return self.grid.forward(self.values)

    def l2_norm(self):
        return float(np.sqrt(self.grid.cell_volume * np.sum(np.abs(self.values) ** 2)))


@dataclass(frozen=True, eq=False)
class OneForm:
    """Collocated one-form; ``values`` has shape ``(dim,) + grid.shape``."""

    values: np.ndarray
    grid: Grid

    def coefficients(self):
        return self.grid.forward(self.values)

    def l2_norm(self):
        return float(np.sqrt(self.grid.cell_volume * np.sum(np.abs(self.values) ** 2)))

    def inner(self, other):
        return float(self.grid.cell_volume * np.sum(self.values * other.values))


def spectral_norm(coeffs, grid):
    """L2 norm from rfft-layout coefficients (Parseval with half-spectrum weights)."""
    w = np.full(grid.half_shape, 2.0)
    w[..., 0] = 1.0
    if grid.shape[-1] % 2 == 0:
        w[..., -1] = 1.0
    tot = np.sum(w * np.abs(coeffs) ** 2)
    return float(np.sqrt(grid.domain.volume * tot))


# ---------------------------------------------------------------------------
# sources and current spectrum


@dataclass(frozen=True, eq=False)
class Sources:
    """Line segments (``starts``, ``vectors``) or point charges of a scene."""

    domain: Domain
    starts: np.ndarray | None = None
    vectors: np.ndarray | None = None
    positions: np.ndarray | None = None
    weights: np.ndarray | None = None

    @classmethod
    def from_scene(cls, items, domain=None):
        items = list(items) if not isinstance(items, (Curve, PointCharge)) else [items]
        if items and isinstance(items[0], PointCharge):
            if domain is None:
                raise ValueError("point charges need an explicit domain")
            pos = np.array([c.position for c in items], dtype=float)
            w = np.array([c.multiplicity for c in items], dtype=float)
            return cls(domain, positions=domain.wrap(pos), weights=w)
        if domain is None:
            if not items:
                raise ValueError("empty scene needs an explicit domain")
            domain = items[0].domain
        if domain.dim == 2 and items:
            raise ValueError("two-dimensional scenes carry point charges, not curves")
        if not items:
            if domain.dim == 2:
                return cls(domain, positions=np.zeros((0, 2)), weights=np.zeros(0))
            return cls(domain, starts=np.zeros((0, 3)), vectors=np.zeros((0, 3)))
        a = []
        d = []
        for c in items:
            if c.domain != domain:
                raise ValueError("all curves must share one domain")
            lv = c.lifted_vertices()
            a.append(lv[:-1])
            d.append(lv[1:] - lv[:-1])
        return cls(domain, starts=np.concatenate(a), vectors=np.concatenate(d))

    @property
    def is_points(self):
        return self.positions is not None

    @property
    def count(self):
        return len(self.positions) if self.is_points else len(self.starts)

    def reach(self):
        """Half of the longest segment (zero for point charges)."""
        if self.is_points or self.count == 0:
            return 0.0
        return 0.5 * float(np.linalg.norm(self.vectors, axis=1).max())

    def centers(self):
        if self.is_points:
            return self.positions
        return self.starts + 0.5 * self.vectors


@numba.njit(cache=True, fastmath=True)
def _segment_spectrum_kernel(out, k0, k1, k2, starts, vecs, series):
    S = starts.shape[0]
    n0, n1, n2 = k0.size, k1.size, k2.size
    # per-axis phase tables (real and imaginary parts), segment index fastest
    ea0 = np.exp(-1j * np.outer(k0, starts[:, 0]))
    ea1 = np.exp(-1j * np.outer(k1, starts[:, 1]))
    ea2 = np.exp(-1j * np.outer(k2, starts[:, 2]))
    eb0 = np.exp(-1j * np.outer(k0, starts[:, 0] + vecs[:, 0]))
    eb1 = np.exp(-1j * np.outer(k1, starts[:, 1] + vecs[:, 1]))
    eb2 = np.exp(-1j * np.outer(k2, starts[:, 2] + vecs[:, 2]))
    a2r, a2i = ea2.real.copy(), ea2.imag.copy()
    b2r, b2i = eb2.real.copy(), eb2.imag.copy()
    d0 = vecs[:, 0].copy()
    d1 = vecs[:, 1].copy()
    d2 = vecs[:, 2].copy()
    par = np.empty(S)
    pai = np.empty(S)
    pbr = np.empty(S)
    pbi = np.empty(S)
    x01 = np.empty(S)
    nser = series.size
    for i in range(n0):
        for j in range(n1):
            for s in range(S):
                pa = ea0[i, s] * ea1[j, s]
                pb = eb0[i, s] * eb1[j, s]
                par[s] = pa.real
                pai[s] = pa.imag
                pbr[s] = pb.real
                pbi[s] = pb.imag
                x01[s] = 0.5 * (k0[i] * d0[s] + k1[j] * d1[s])
            for m in range(n2):
                r0 = 0.0
                i0 = 0.0
                r1 = 0.0
                i1 = 0.0
                r2 = 0.0
                i2 = 0.0
                hk = 0.5 * k2[m]
                for s in range(S):
                    x = x01[s] + hk * d2[s]
                    qar = par[s] * a2r[m, s] - pai[s] * a2i[m, s]
                    qai = par[s] * a2i[m, s] + pai[s] * a2r[m, s]
                    if abs(x) > 0.1:
                        qbr = pbr[s] * b2r[m, s] - pbi[s] * b2i[m, s]
                        qbi = pbr[s] * b2i[m, s] + pbi[s] * b2r[m, s]
                        # (qa - qb) * (-i / (2x))
                        c = 0.5 / x
                        fr = (qai - qbi) * c
                        fi = -(qar - qbr) * c
                    else:
                        zi = -2.0 * x
                        sr = series[nser - 1]
                        si = 0.0
                        for q in range(nser - 2, -1, -1):
                            # (sr + i si) * (i zi) + series[q]
                            sr, si = -si * zi + series[q], sr * zi
                        fr = qar * sr - qai * si
                        fi = qar * si + qai * sr
                    r0 += d0[s] * fr
                    i0 += d0[s] * fi
                    r1 += d1[s] * fr
                    i1 += d1[s] * fi
                    r2 += d2[s] * fr
                    i2 += d2[s] * fi
                out[0, i, j, m] = r0 + 1j * i0
                out[1, i, j, m] = r1 + 1j * i1
                out[2, i, j, m] = r2 + 1j * i2


# (1 - exp(z)) / (-z) = sum_{m>=0} z^m / (m+1)!  with z = -2 i x
_SERIES = np.array([1.0 / np.prod(np.arange(1, m + 2, dtype=float)) for m in range(14)])


@dataclass(frozen=True, eq=False)
class CurrentSpectrum:
    """Fourier coefficients of a closed current on a grid (rfft layout).

    ``coeffs`` has shape ``(ncomp,) + grid.half_shape``; ``ncomp`` is 3 for
    curves in 3D and 1 for point charges in 2D.
    """

    coeffs: np.ndarray
    grid: Grid
    sources: Sources

    @property
    def zero_mode(self):
        return self.coeffs[(slice(None),) + (0,) * self.grid.dim].real.copy()

    def divergence_residual(self):
        """``max |k . c(k)|`` relative to ``max |k| |c(k)|`` (zero for closed curves)."""
        if self.sources.is_points:
            return 0.0
        ks = self.grid.wavenumbers()
        div = sum(k * c for k, c in zip(ks, self.coeffs))
        kn = np.sqrt(self.grid.k_squared())
        scale = np.max(kn * np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=0)))
        return float(np.max(np.abs(div)) / scale) if scale > 0 else 0.0


def current_spectrum(curves, grid, domain=None):
    """Exact Fourier coefficients of the current carried by ``curves``.

    For a straight segment from ``a`` to ``b`` the coefficient is
    ``(b - a) (exp(-i k.a) - exp(-i k.b)) / (i k.(b - a))`` divided by the
    torus volume, with a series for small ``k.(b - a)``.

    Parameters
    ----------
    curves : Curve, list of Curve, or list of PointCharge (2D)
    grid : Grid
    """
    sources = Sources.from_scene(curves, domain or grid.domain)
    vol = grid.domain.volume
    if sources.is_points:
        ks = grid.wavenumbers()
        out = np.zeros((1,) + grid.half_shape, dtype=complex)
        for x, w in zip(sources.positions, sources.weights):
            out[0] += w * np.exp(-1j * ks[0] * x[0]) * np.exp(-1j * ks[1] * x[1])
        return CurrentSpectrum(out / vol, grid, sources)
    ks = [k.reshape(-1).astype(float) for k in grid.wavenumbers()]
    out = np.zeros((3,) + grid.half_shape, dtype=complex)
    if sources.count:
        _segment_spectrum_kernel(out, ks[0], ks[1], ks[2],
                                 np.ascontiguousarray(sources.starts),
                                 np.ascontiguousarray(sources.vectors), _SERIES)
    return CurrentSpectrum(out / vol, grid, sources)


# ---------------------------------------------------------------------------
# neighbour search shared by near-field evaluation and distance fields


def _image_shifts(domain, radius):
    L = domain.period_array
    reps = [int(np.ceil(radius / Lj)) for Lj in L]
    rng = [range(-r, r + 1) for r in reps]
    return np.array(list(itertools.product(*rng)), dtype=float) * L


def _pairs_within(points, centers, domain, radius):
    """Pairs ``(i, j, shift)`` with ``|points[i] - (centers[j] + shift)| <= radius``.

    ``points`` must be wrapped into the fundamental cell; the shifts enumerate
    all periodic images that can reach it.
    """
    if len(points) == 0 or len(centers) == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros((0, domain.dim))
    c0 = domain.wrap(centers)
    shifts = _image_shifts(domain, radius)
    rep = (c0[None, :, :] + shifts[:, None, :]).reshape(-1, domain.dim)
    t_src = cKDTree(rep)
    t_pts = cKDTree(points)
    sdm = t_pts.sparse_distance_matrix(t_src, radius, output_type="ndarray")
    i = sdm["i"].astype(np.int64)
    jr = sdm["j"].astype(np.int64)
    j = jr % len(c0)
    sh = shifts[jr // len(c0)] + (c0[j] - centers[j])
    return i, j, sh


# ---------------------------------------------------------------------------
# potential


class PotentialField:
    """Solved potential ``A`` of a closed current in split Ewald form.

    Not meant to be constructed directly; use :func:`solve_potential`.
    """

    def __init__(self, far, grid, sigma, sources, zero_mode):
        self.far = far
        self.far.setflags(write=False)
        self.grid = grid
        self.sigma = float(sigma)
        self.sources = sources
        self.zero_mode = zero_mode
        self.width = np.sqrt(2.0) * self.sigma
        self.cutoff = kernels.erfc_cutoff(self.width) if not sources.is_points else \
            self.sigma * np.sqrt(2.0 * 33.0)

    @property
    def dim(self):
        return self.grid.dim

    @property
    def domain(self):
        return self.grid.domain

    # -- spectral pieces ---------------------------------------------------
    def field_coefficients(self):
        """Far-field coefficients of ``b = d*psi`` (rfft layout)."""
        ks = self.grid.derivative_wavenumbers()
        A = self.far
        if self.dim == 3:
            return np.stack([
                1j * (ks[1] * A[2] - ks[2] * A[1]),
                1j * (ks[2] * A[0] - ks[0] * A[2]),
                1j * (ks[0] * A[1] - ks[1] * A[0]),
            ])
        return np.stack([1j * ks[1] * A[0], -1j * ks[0] * A[0]])

    def _full(self, half):
        """Expand rfft-layout coefficients to the full FFT layout."""
        g = self.grid
        n_last = g.shape[-1]
        full = np.zeros((half.shape[0],) + g.shape, dtype=complex)
        full[..., : half.shape[-1]] = half
        # negative last-axis modes from conjugate symmetry c(-k) = conj(c(k))
        idx_last = np.arange(half.shape[-1], n_last)
        src_last = (-idx_last) % n_last
        flipped = half[..., src_last]
        for ax in range(1, g.dim):
            n = g.shape[ax - 1]
            flipped = np.take(flipped, (-np.arange(n)) % n, axis=ax)
        full[..., half.shape[-1]:] = np.conj(flipped)
        return full

    @cached_property
    def _full_potential(self):
        return self._full(self.far)

    @cached_property
    def _full_field(self):
        return self._full(self.field_coefficients())

    def _nufft_eval(self, full, points):
        pts = self.domain.wrap(np.atleast_2d(points))
        scaled = [np.ascontiguousarray(2 * np.pi * pts[:, j] / self.domain.periods[j])
                  for j in range(self.dim)]
        ntr = full.shape[0]
        plan = finufft.Plan(2, self.grid.shape, n_trans=ntr, eps=_NUFFT_EPS,
                            isign=+1, modeord=1)
        plan.setpts(*scaled)
        vals = plan.execute(np.ascontiguousarray(full))
        return np.real(np.reshape(vals, (ntr, -1))).T

    # -- near field --------------------------------------------------------
    def _near(self, points, want_field=True, want_potential=True):
        pts = self.domain.wrap(np.atleast_2d(np.asarray(points, dtype=float)))
        P = len(pts)
        ncomp = 1 if self.sources.is_points else 3
        pot = np.zeros((P, ncomp))
        fld = np.zeros((P, self.dim))
        src = self.sources
        if src.count == 0:
            return pot, fld
        radius = self.cutoff + src.reach()
        centers = src.centers()
        chunk = 4096
        for lo in range(0, P, chunk):
            x = pts[lo:lo + chunk]
            i, j, sh = _pairs_within(x, centers, self.domain, radius)
            if len(i) == 0:
                continue
            for plo in range(0, len(i), 200_000):
                ii, jj, ss = i[plo:plo + 200_000], j[plo:plo + 200_000], sh[plo:plo + 200_000]
                if src.is_points:
                    rel = x[ii] - (src.positions[jj] + ss)
                    if np.any(np.sum(rel * rel, axis=1) < (1e-12 * self.grid.h) ** 2):
                        raise ValueError("evaluation point coincides with a point singularity")
                    p, f = kernels.point_near_potential_and_field(rel, self.sigma)
                    w = src.weights[jj]
                    idx = ii + lo
                    pot[:, 0] += np.bincount(idx, w * p, minlength=P)
                    for c in range(2):
                        fld[:, c] += np.bincount(idx, w * f[:, c], minlength=P)
                    continue
                pv = pot[lo:lo + chunk]
                fv = fld[lo:lo + chunk]
                bad = kernels.near_segments_accumulate(
                    x, src.starts, src.vectors, ii, jj, np.ascontiguousarray(ss), self.width,
                    kernels._GT8, kernels._GW8, want_potential, want_field, pv, fv,
                    1e-9 * self.grid.h)
                if bad:
                    raise ValueError("evaluation point lies on a singular curve")
        return pot, fld

    def edge_near(self, starts, vector):
        """Near-field line integrals of ``b`` along straight edges.

        Each edge runs from ``starts[i]`` to ``starts[i] + vector``.  The
        singular part is integrated in closed form (the swept angle in 2D, the
        segment-pair linking contribution in 3D), so edges passing arbitrarily
        close to a curve are handled exactly.
        """
        starts = np.atleast_2d(np.asarray(starts, dtype=float))
        vector = np.asarray(vector, dtype=float)
        src = self.sources
        out = np.zeros(len(starts))
        if src.count == 0 or len(starts) == 0:
            return out
        mid = self.domain.wrap(starts + 0.5 * vector)
        x0 = mid - 0.5 * vector
        radius = self.cutoff + src.reach() + 0.5 * np.linalg.norm(vector)
        centers = src.centers()
        chunk = 8192
        for lo in range(0, len(x0), chunk):
            x = x0[lo:lo + chunk]
            i, j, sh = _pairs_within(mid[lo:lo + chunk], centers, self.domain, radius)
            if len(i) == 0:
                continue
            if src.is_points:
                out[lo:lo + chunk] += np.bincount(
                    i, self._edge_near_points(x[i], vector, src.positions[j] + sh) * src.weights[j],
                    minlength=len(x))
            else:
                view = out[lo:lo + chunk]
                kernels.near_edges_accumulate(
                    x, vector, src.starts, src.vectors, i, j, np.ascontiguousarray(sh),
                    self.width, kernels._GT3, kernels._GW3, view)
        return out

    def _edge_near_points(self, x, vector, charges, nodes=4):
        a = x - charges
        b = a + vector
        swept = np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], np.sum(a * b, axis=1))
        t, w = kernels.gauss_legendre01(nodes)
        rel = a[:, None, :] + t[None, :, None] * vector
        r2 = np.sum(rel * rel, axis=-1)
        # smooth part (1 - exp(-r^2/2s^2)) / r^2, regular at the origin
        q = r2 / (2.0 * self.sigma**2)
        fac = -np.expm1(-q) / np.where(r2 > 0, r2, 1.0)
        fac = np.where(r2 > 0, fac, 1.0 / (2.0 * self.sigma**2))
        cross = rel[..., 0] * vector[1] - rel[..., 1] * vector[0]
        return swept - (fac * cross) @ w

    # -- public evaluation -------------------------------------------------
    def potential(self, points):
        """Potential ``A`` at arbitrary points, shape ``(P, ncomp)``."""
        pts = np.atleast_2d(points)
        far = self._nufft_eval(self._full_potential, pts)
        near, _ = self._near(pts, want_field=False)
        const = -np.pi * self.sigma**2 * self.zero_mode
        return far + near + const[None, :]

    def field(self, points):
        """The one-form ``b = d*psi`` at arbitrary points, shape ``(P, dim)``."""
        pts = np.atleast_2d(points)
        far = self._nufft_eval(self._full_field, pts)
        _, near = self._near(pts, want_potential=False)
        return far + near

    def field_on_grid(self, stagger=0.5, where=None):
        """``b`` on (staggered) grid points, shape ``(dim,) + grid.shape``.

        Far field everywhere; near-field corrections applied on points within
        the Ewald cutoff of the sources.  ``where`` restricts the corrected set;
        points that need a correction but are excluded are set to NaN.
        """
        g = self.grid
        out = g.inverse(self.field_coefficients(), stagger)
        near_mask = near_region(g, self.sources, self.cutoff + self.sources.reach(), stagger)
        todo = near_mask if where is None else near_mask & where
        pts = g.points(stagger)[todo]
        if len(pts):
            _, f = self._near(pts, want_potential=False)
            for c in range(self.dim):
                out[c][todo] += f[:, c]
        if where is not None:
            out[:, near_mask & ~where] = np.nan
        return out

    def potential_on_grid(self, stagger=0.0, where=None):
        g = self.grid
        out = g.inverse(self.far, stagger)
        out += (-np.pi * self.sigma**2 * self.zero_mode).reshape((-1,) + (1,) * g.dim)
        near_mask = near_region(g, self.sources, self.cutoff + self.sources.reach(), stagger)
        todo = near_mask if where is None else near_mask & where
        pts = g.points(stagger)[todo]
        if len(pts):
            p, _ = self._near(pts, want_field=False)
            for c in range(out.shape[0]):
                out[c][todo] += p[:, c]
        if where is not None:
            out[:, near_mask & ~where] = np.nan
        return out

    def divergence_of_coexact_residual(self):
        """``max |d(d* A)|`` relative: the far potential is divergence-free."""
        if self.sources.is_points:
            return 0.0
        ks = self.grid.wavenumbers()
        div = sum(k * c for k, c in zip(ks, self.far))
        scale = np.max(np.sqrt(self.grid.k_squared()) * np.sqrt(np.sum(np.abs(self.far) ** 2, 0)))
        return float(np.max(np.abs(div)) / scale) if scale > 0 else 0.0


def near_region(grid, sources, radius, stagger=0.0):
    """Boolean mask of grid points within ``radius`` of some source (a superset
    obtained by marking index boxes around every source center)."""
    mask = np.zeros(grid.shape, dtype=bool)
    if sources.count == 0:
        return mask
    h = grid.spacing
    centers = grid.domain.wrap(sources.centers())
    span = np.ceil(radius / h).astype(int) + 1
    for c in centers:
        idx = []
        for j in range(grid.dim):
            i0 = int(np.floor(c[j] / h[j] - stagger))
            rng = np.arange(i0 - span[j], i0 + span[j] + 2) % grid.shape[j]
            if len(rng) > grid.shape[j]:
                rng = np.arange(grid.shape[j])
            idx.append(rng)
        mask[np.ix_(*idx)] = True
    return mask


def grid_distance(grid, curves, max_distance, stagger=0.0):
    """Exact distance from grid points to the curves, capped at ``max_distance``.

    Points farther than ``max_distance`` get ``inf``.
    """
    sources = curves if isinstance(curves, Sources) else Sources.from_scene(curves, grid.domain)
    out = np.full(grid.shape, np.inf)
    radius = max_distance + sources.reach()
    cand = near_region(grid, sources, radius, stagger)
    pts = grid.points(stagger)[cand]
    if len(pts) == 0:
        return out
    best = np.full(len(pts), np.inf)
    centers = sources.centers()
    for lo in range(0, len(pts), 8192):
        x = pts[lo:lo + 8192]
        i, j, sh = _pairs_within(x, centers, grid.domain, radius)
        if sources.is_points:
            dist = np.linalg.norm(x[i] - (sources.positions[j] + sh), axis=1)
        else:
            ra = x[i] - (sources.starts[j] + sh)
            d = sources.vectors[j]
            t = np.clip(np.einsum("ij,ij->i", ra, d) / np.einsum("ij,ij->i", d, d), 0, 1)
            dist = np.linalg.norm(ra - t[:, None] * d, axis=1)
        np.minimum.at(best, i + lo, dist)
    best[best > max_distance] = np.inf
    out[cand] = best
    return out


def solve_potential(current, grid=None, sigma=None, require_admissible=True):
    """Solve ``Delta A = 2 pi J`` with the harmonic (zero) mode removed.

    Parameters
    ----------
    current : CurrentSpectrum
    grid : Grid, optional
        Must match ``current.grid`` if given.
    sigma : float, optional
        Ewald width, default ``2 h``; must lie in ``[h, 4h]``.
    require_admissible : bool
        Reject currents with non-zero mean (a non-bounding curve).  Per-component
        potentials of a bounding scene may switch this off.
    """
    grid = current.grid if grid is None else grid
    if grid is not current.grid and grid != current.grid:
        raise ValueError("grid does not match the current spectrum")
    h = grid.h
    sigma = 2.0 * h if sigma is None else float(sigma)
    if not (h * (1 - 1e-12) <= sigma <= 4 * h * (1 + 1e-12)):
        raise ValueError(f"Ewald width {sigma:.4g} outside [h, 4h] = [{h:.4g}, {4 * h:.4g}]")
    zero = current.zero_mode
    scale = np.max(np.abs(current.coeffs)) if current.coeffs.size else 0.0
    if require_admissible and np.max(np.abs(zero)) > 1e-9 * max(scale, 1e-300):
        raise ValueError(
            "current does not bound: non-zero homology class / total charge "
            f"(mean current {zero})"
        )
    k2 = grid.k_squared()
    with np.errstate(divide="ignore", invalid="ignore"):
        mult = 2 * np.pi * np.exp(-0.5 * sigma**2 * k2) / k2
    mult[(0,) * grid.dim] = 0.0
    mult[grid.nyquist_mask()] = 0.0
    far = current.coeffs * mult[None]
    return PotentialField(far, grid, sigma, current.sources, zero)


class FieldEvaluator:
    """Callable evaluating ``b = d*psi`` at points or on the grid."""

    def __init__(self, potential):
        self.potential = potential

    def __call__(self, points):
        return self.potential.field(points)

    def on_grid(self, stagger=0.0, where=None):
        return OneForm(self.potential.field_on_grid(stagger, where), self.potential.grid)


def dstar_psi(potential):
    """Return the evaluator of the coexact one-form ``b`` (curl of ``A`` in 3D,
    ``(d2 A, -d1 A)`` in 2D)."""
    return FieldEvaluator(potential)


def hodge_decompose(form):
    """Split a grid one-form into exact, coexact and harmonic parts.

    Returns
    -------
    phi : ScalarField
        Zero-mean potential of the exact part.
    coexact : OneForm
    harmonic : ndarray
        Constant vector (component means).
    """
    g = form.grid
    coeffs = form.coefficients()
    ks = g.derivative_wavenumbers()
    k2 = sum(k * k for k in ks)
    harmonic = np.array([c[(0,) * g.dim].real for c in coeffs])
    div = sum(k * c for k, c in zip(ks, coeffs))
    with np.errstate(divide="ignore", invalid="ignore"):
        phi_hat = np.where(k2 > 0, -1j * div / k2, 0.0)
    exact_hat = np.stack([1j * k * phi_hat for k in ks])
    phi = ScalarField(g.inverse(phi_hat), g)
    exact = g.inverse(exact_hat)
    coex = form.values - exact - harmonic.reshape((-1,) + (1,) * g.dim)
    return phi, OneForm(coex, g), harmonic


# ---------------------------------------------------------------------------
# Stokes identity on a tube


class BandLimitedForm:
    """Smooth random one-form ``a(x) = sum_k Re(c_k exp(i k.x))`` with
    ``|k_j| <= kmax`` (integer mode indices), seeded."""

    def __init__(self, domain, seed=0, kmax=2, amplitude=1.0, constant=None):
        rng = np.random.default_rng(seed)
        self.domain = domain
        n = domain.dim
        modes = np.array(list(itertools.product(range(-kmax, kmax + 1), repeat=n)))
        self.k = 2 * np.pi * modes / domain.period_array
        decay = 1.0 / (1.0 + np.sum(modes**2, axis=1))
        self.c = amplitude * (rng.standard_normal((len(modes), n))
                              + 1j * rng.standard_normal((len(modes), n))) * decay[:, None]
        if constant is not None:
            self.k = np.zeros((1, n))
            self.c = np.asarray(constant, dtype=complex).reshape(1, n)

    def __call__(self, x):
        ph = np.exp(1j * np.asarray(x) @ self.k.T)
        return np.real(ph @ self.c)

    def curl(self, x):
        ph = np.exp(1j * np.asarray(x) @ self.k.T)
        ck = np.cross(1j * self.k, self.c)
        return np.real(ph @ ck)


@dataclass
class StokesResult:
    residual: float
    boundary: float
    volume: float
    line: float


def stokes_check(potential, delta, form=None, seed=0, curves=None, quadrature=None):
    """Relative residual of the tube integration-by-parts identity.

    For the tube ``T`` of radius ``delta`` around the curves the identity reads
    ``int_{dT} (a x b).n dS = int_T b . curl a dV - 2 pi int_Gamma a . tau``.
    All three terms are computed with the same tube quadrature.  The residual
    is ``|boundary - volume + 2 pi line|`` divided by the largest absolute
    quadrature mass ``sum |w f|`` of the three terms.

    Parameters
    ----------
    potential : PotentialField (3D)
    delta : float
        Tube radius in ``[4h, min L / 8]``.
    form : BandLimitedForm or list of them, optional
        Test one-form(s); by default one form seeded from ``seed``.  With a
        list, the field is evaluated once and a list of results is returned.
    curves : list of Curve, optional
        Source curves, needed unless ``quadrature`` is given.
    quadrature : TubeQuadrature, optional
    """
    from .tube import TubeQuadrature

    g = potential.grid
    if g.dim != 3:
        raise ValueError("the tube identity is implemented for 3D scenes")
    h = g.h
    if not (4 * h * (1 - 1e-9) <= delta <= min(g.domain.periods) / 8 * (1 + 1e-9)):
        raise ValueError("delta must lie in [4h, min L / 8]")
    single = not isinstance(form, (list, tuple))
    forms = [BandLimitedForm(g.domain, seed) if form is None else form] if single else list(form)
    if quadrature is None:
        if curves is None:
            raise ValueError("pass the source curves or a prebuilt quadrature")
        quadrature = TubeQuadrature(curves, delta)
    q = quadrature
    bv = potential.field(q.volume_points)
    bs = potential.field(q.surface_points)
    out = []
    for a in forms:
        vol_terms = q.volume_weights * np.einsum("ij,ij->i", bv, a.curl(q.volume_points))
        surf_terms = np.einsum("ij,ij->i", np.cross(a(q.surface_points), bs), q.surface_normals)
        line_terms = np.einsum("ij,ij->i", a(q.line_points), q.line_vectors)
        vol, surf, line = float(vol_terms.sum()), float(surf_terms.sum()), float(line_terms.sum())
        # normalize by the absolute quadrature mass so the residual stays
        # meaningful when all three signed totals vanish (constant forms)
        scale = max(np.abs(surf_terms).sum(), np.abs(vol_terms).sum(),
                    2 * np.pi * np.abs(line_terms).sum())
        res = 0.0 if scale == 0 else abs(surf - vol + 2 * np.pi * line) / scale
        out.append(StokesResult(res, surf, vol, line))
    return out[0] if single else out


def export_field(path, values, grid, components=None):
    """Write ``values`` as raw little-endian float64 plus a JSON header.

    Creates ``<path>.bin`` and ``<path>.json``.
    """
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    arr.tofile(path.with_suffix(".bin"))
    header = {
        "shape": list(arr.shape),
        "dtype": "float64",
        "byte_order": "little",
        "order": "C",
        "periods": list(grid.domain.periods),
        "grid": list(grid.shape),
        "components": components or [f"c{i}" for i in range(arr.shape[0] if arr.ndim > grid.dim else 1)],
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))
    return path.with_suffix(".bin"), path.with_suffix(".json")
