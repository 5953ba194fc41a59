"""Renormalized self-interaction of a vortex configuration.

Two conventions appear side by side:

* the *degree* convention of the rest of the library, in which ``A`` solves
  ``Delta A = 2 pi J`` and energies are ``int |b|^2``; the renormalized energy
  of a curve is ``W = 2 pi * oint R`` with ``R`` the finite part of the
  tangential potential on the curve;
* the *inductance* convention ``oint oint t1 . t2 / |x - y| ds ds'``.

In free space the two are related by ``W = pi * L`` where ``L`` collects the
renormalized self-inductances and the Neumann mutual inductances.  Equivalently
``W = 4 pi^2 oint oint G t1 . t2`` with ``G = 1 / (4 pi |x - y|)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import finufft
import numba
import numpy as np
from scipy.spatial import cKDTree
from scipy.special import erfc

from .curves import Curve, segment_segment_distance
from .kernels import erfc_cutoff, gauss_legendre01
from .torus_field import _pairs_within, current_spectrum, solve_potential

GREEN_TO_DEGREE = 4.0 * np.pi**2
"""Factor turning ``oint oint G t.t'`` with ``G = 1/(4 pi r)`` into energy."""

INDUCTANCE_TO_DEGREE = np.pi
"""Factor turning ``oint oint t.t'/r`` (inductance convention) into energy."""


def _as_list(curves):
    return [curves] if isinstance(curves, Curve) else list(curves)


def _line_nodes(curve, nodes):
    """Gauss nodes on every segment: points, weights (lengths) and tangents."""
    t, w = gauss_legendre01(nodes)
    a = curve.lifted_vertices()[:-1]
    d = curve.displacements
    ell = np.linalg.norm(d, axis=1)
    pts = (a[:, None] + t[None, :, None] * d[:, None]).reshape(-1, a.shape[1])
    wts = (ell[:, None] * w[None, :]).reshape(-1)
    tau = np.repeat(d / ell[:, None], nodes, axis=0)
    return pts, wts, tau


def _normal_pair(t):
    """Two unit normals orthogonal to each unit tangent in ``t``."""
    trial = np.eye(3)[np.argmin(np.abs(t), axis=1)]
    n1 = trial - np.sum(trial * t, axis=1)[:, None] * t
    n1 /= np.linalg.norm(n1, axis=1)[:, None]
    return n1, np.cross(t, n1)


# ---------------------------------------------------------------------------
# torus


@dataclass
class RenormReport:
    """Renormalized energy split into self and cross terms (degree convention).

    ``cross[j, k]`` is the interaction of component ``j`` with the field of
    component ``k``; the matrix is symmetric and ``total`` counts both orders.
    """

    total: float
    self_terms: np.ndarray
    cross: np.ndarray
    offsets: np.ndarray
    samples: np.ndarray
    fit_residual: float
    convention: str = "degree: W = 2 pi oint R = 4 pi^2 oint oint G t.t'"
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "W_total": self.total,
            "self_terms": self.self_terms.tolist(),
            "cross_terms": self.cross.tolist(),
            "offsets": self.offsets.tolist(),
            "offset_samples": self.samples.tolist(),
            "fit_residual": self.fit_residual,
            "convention": self.convention,
            **self.extra,
        }


def _component_potentials(potential, curves):
    if len(curves) == 1:
        return [potential]
    out = []
    for c in curves:
        cur = current_spectrum([c], potential.grid)
        out.append(solve_potential(cur, sigma=potential.sigma, require_admissible=False))
    return out


def _extrapolated_tangential(pot, curve, offsets, n_directions, nodes):
    """Per-offset line integrals ``oint (<A(y + rho nu), t> + log rho) ds``.

    Averages over ``n_directions`` equally spaced normals at each node.
    """
    pts, wts, tau = _line_nodes(curve, nodes)
    n1, n2 = _normal_pair(tau)
    ang = 2 * np.pi * np.arange(n_directions) / n_directions
    nu = np.cos(ang)[:, None, None] * n1[None] + np.sin(ang)[:, None, None] * n2[None]
    vals = []
    for rho in offsets:
        x = (pts[None] + rho * nu).reshape(-1, 3)
        A = pot.potential(x).reshape(n_directions, len(pts), 3)
        tang = np.mean(np.sum(A * tau[None], axis=2), axis=0)
        vals.append(float(np.sum((tang + np.log(rho)) * wts)))
    return np.array(vals)


def renormalized_energy_torus(potential, curves, offsets=(2, 3, 4, 6), n_directions=8,
                              nodes=2, check=True):
    """Renormalized energy ``W`` of a curve system on the torus.

    The finite part ``R = lim (<A(y + rho nu), t(y)> + log rho)`` is sampled at
    offsets ``rho`` (multiples of ``h``) averaged over ``n_directions`` normals
    and extrapolated to ``rho = 0``.  The direction average cancels every odd
    power of ``rho``, and the curvature of the curve leaves a
    ``rho^2 log rho`` term, so the samples are fitted with
    ``R + b rho^2 + c rho^2 log rho``.  Components interact through
    ``2 pi oint_j <A_k, t>``, evaluated with per-component potentials.

    Parameters
    ----------
    potential : PotentialField
        Potential of the whole (bounding) scene; supplies grid and Ewald width.
    curves : Curve or list of Curve
    offsets : sequence of float
        Offsets in units of the grid spacing.
    check : bool
        Raise when the extrapolation residual exceeds 5% of the spread of the
        samples (under-resolved core).
    """
    curves = _as_list(curves)
    h = potential.grid.h
    rho = np.asarray(offsets, float) * h
    pots = _component_potentials(potential, curves)
    m = len(curves)
    self_terms = np.empty(m)
    samples = np.empty((m, len(rho)))
    worst = 0.0
    linear = np.empty(m)
    design = np.stack([np.ones_like(rho), rho**2, rho**2 * np.log(rho)], axis=1)
    for j, (c, pj) in enumerate(zip(curves, pots)):
        vals = _extrapolated_tangential(pj, c, rho, n_directions, nodes)
        coef = np.linalg.lstsq(design, vals, rcond=None)[0]
        resid = np.max(np.abs(design @ coef - vals))
        spread = np.ptp(vals)
        rel = resid / spread if spread > 1e-9 * (1.0 + abs(coef[0])) else 0.0
        worst = max(worst, rel)
        samples[j] = 2 * np.pi * vals
        self_terms[j] = 2 * np.pi * coef[0]
        linear[j] = 2 * np.pi * np.polyfit(rho, vals, 1)[1]
    if check and worst > 0.05:
        raise ValueError(
            f"offset extrapolation residual is {100 * worst:.1f}% of the sample spread; "
            "the core is under-resolved"
        )
    cross = np.zeros((m, m))
    for j in range(m):
        pts, wts, tau = _line_nodes(curves[j], 4)
        for k in range(m):
            if k == j:
                continue
            A = pots[k].potential(pts)
            cross[j, k] = 2 * np.pi * float(np.sum(np.sum(A * tau, axis=1) * wts))
    # the quadrature of the two orders differs only by round-off, symmetrize
    asym = float(np.max(np.abs(cross - cross.T))) if m > 1 else 0.0
    cross = 0.5 * (cross + cross.T)
    total = float(self_terms.sum() + cross.sum())
    return RenormReport(total, self_terms, cross, rho, samples, worst,
                        extra={"cross_asymmetry": asym, "linear_in_offset_self_terms": linear.tolist()})


def _periodic_green_sum(xs, ws, ys, wt, domain, sigma, tol=1e-13):
    """``sum_ij ws_i . wt_j G~(x_i - y_j)`` with ``G~`` the periodic ``1/r``.

    ``G~`` has a neutralizing background: its Fourier series is
    ``(4 pi / V) sum_{k != 0} e^{ikx} / k^2``.  Evaluated by Ewald summation
    with width ``sigma``; ``ws`` and ``wt`` are weighted vectors.
    """
    L = domain.period_array
    V = domain.volume
    width = np.sqrt(2.0) * sigma
    # far part via type-1 transforms onto a mode grid wide enough that the
    # Gaussian factor underflows
    kmax = np.sqrt(2.0 * 40.0) / sigma
    nmodes = [2 * int(np.ceil(kmax * Lj / (2 * np.pi))) + 2 for Lj in L]
    xa = [2 * np.pi * xs[:, c] / L[c] for c in range(3)]
    ya = [2 * np.pi * ys[:, c] / L[c] for c in range(3)]
    total = 0.0
    kk = [2 * np.pi * np.arange(-(n // 2), n - n // 2) / Lj for n, Lj in zip(nmodes, L)]
    K2 = kk[0][:, None, None] ** 2 + kk[1][None, :, None] ** 2 + kk[2][None, None, :] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        mult = np.where(K2 > 0, np.exp(-0.5 * sigma**2 * K2) / K2, 0.0)
    for c in range(3):
        Fs = finufft.nufft3d1(*xa, ws[:, c].astype(complex), tuple(nmodes), eps=tol, isign=1)
        Ft = finufft.nufft3d1(*ya, wt[:, c].astype(complex), tuple(nmodes), eps=tol, isign=1)
        total += float(np.real(np.sum(mult * Fs * np.conj(Ft))))
    total *= 4 * np.pi / V
    # near part: erfc-screened images
    i, j, sh = _pairs_within(domain.wrap(xs), domain.wrap(ys), domain, erfc_cutoff(width, 1e-16))
    rel = domain.wrap(xs)[i] - (domain.wrap(ys)[j] + sh)
    r = np.linalg.norm(rel, axis=1)
    if np.any(r < 1e-12):
        raise ValueError("coincident quadrature nodes")
    total += float(np.sum(np.sum(ws[i] * wt[j], axis=1) * erfc(r / width) / r))
    total -= np.pi * width**2 / V * float(np.sum(ws, axis=0) @ np.sum(wt, axis=0))
    return total


def _check_separation(ci, cj, factor=4.0):
    dom = ci.domain
    ai, di = ci.lifted_vertices()[:-1], ci.displacements
    aj, dj = cj.lifted_vertices()[:-1], cj.displacements
    ell = max(ci.segment_lengths.max(), cj.segment_lengths.max())
    best = np.inf
    for lo in range(0, len(ai), 256):
        a0, d0 = ai[lo:lo + 256, None], di[lo:lo + 256, None]
        mid = (aj + 0.5 * dj)[None] - (a0 + 0.5 * d0)
        rel = (dom.minimal_image(mid) if dom.is_torus else mid) - 0.5 * dj[None] + a0
        best = min(best, float(segment_segment_distance(a0, d0, rel, dj[None]).min()))
    if best < factor * ell:
        raise ValueError(
            f"curves are {best:.3g} apart, closer than {factor} x the longest segment ({ell:.3g})"
        )
    return best


def cross_interaction(curve_i, curve_j, green="free", sigma=None, nodes=4):
    """Interaction energy ``4 pi^2 oint oint G t_i . t_j`` of two curves.

    ``green`` selects the free-space kernel ``G = 1/(4 pi r)`` or the periodic
    Green's function of the curves' torus (Ewald summation with width
    ``sigma``, default a sixteenth of the smallest period).  Double Gauss
    quadrature with ``nodes`` points per segment; the curves must be at least
    four segment lengths apart.
    """
    _check_separation(curve_i, curve_j)
    xs, wx, tx = _line_nodes(curve_i, nodes)
    ys, wy, ty = _line_nodes(curve_j, nodes)
    if green == "free":
        total = 0.0
        for lo in range(0, len(xs), 512):
            rel = xs[lo:lo + 512, None] - ys[None]
            r = np.linalg.norm(rel, axis=2)
            total += float(np.sum((tx[lo:lo + 512] * wx[lo:lo + 512, None]) @ (ty * wy[:, None]).T / r))
        return INDUCTANCE_TO_DEGREE * total
    if green == "periodic":
        dom = curve_i.domain
        if not dom.is_torus:
            raise ValueError("periodic Green's function needs curves on a torus")
        sigma = min(dom.periods) / 16 if sigma is None else float(sigma)
        s = _periodic_green_sum(xs, tx * wx[:, None], ys, ty * wy[:, None], dom, sigma)
        # G~ = 4 pi G
        return GREEN_TO_DEGREE / (4 * np.pi) * s
    raise ValueError(f"unknown Green's function {green!r}")


# ---------------------------------------------------------------------------
# free space


_GT2, _GW2 = gauss_legendre01(2)
_GT4, _GW4 = gauss_legendre01(4)
_GT16, _GW16 = gauss_legendre01(16)


@numba.njit(cache=True, inline="always")
def _log_piece(u_a, u_b, d2):
    """``int_{u_a}^{u_b} du / sqrt(u^2 + d2)`` for an interval not containing 0
    in its interior, stable for ``d2 -> 0``."""
    if u_a >= 0.0:
        return math.log((u_b + math.sqrt(u_b * u_b + d2)) / (u_a + math.sqrt(u_a * u_a + d2)))
    return math.log((-u_a + math.sqrt(u_a * u_a + d2)) / (-u_b + math.sqrt(u_b * u_b + d2)))


@numba.njit(cache=True, inline="always")
def _clipped_line_integral(x0, x1, x2, q0, q1, q2, t0, t1, t2, ell, core):
    """``int ds / |x - y|`` over the segment ``q + s t``, ``s`` in ``[0, ell]``,
    restricted to ``|x - y| > core``."""
    rx, ry, rz = x0 - q0, x1 - q1, x2 - q2
    s0 = rx * t0 + ry * t1 + rz * t2
    d2 = rx * rx + ry * ry + rz * rz - s0 * s0
    if d2 < 0.0:
        d2 = 0.0
    # pieces in the shifted variable u = s - s0
    lo = -s0
    hi = ell - s0
    total = 0.0
    if d2 < core * core:
        half = math.sqrt(core * core - d2)
        if lo < -half:
            total += _log_piece(lo, min(hi, -half), d2)
        if hi > half:
            total += _log_piece(max(lo, half), hi, d2)
        return total
    if lo < 0.0 < hi:
        return _log_piece(lo, 0.0, d2) + _log_piece(0.0, hi, d2)
    return _log_piece(lo, hi, d2)


@numba.njit(cache=True)
def _neumann_kernel(a1, d1, a2, d2, core):
    """Sum of segment-pair contributions to ``oint oint t.t' / r``.

    ``core > 0`` excises ``|x - y| < core`` (used for self-inductance); pairs
    whose midpoints are within ``4 * ell + core`` use an outer composite Gauss
    rule with the inner integral in closed form.
    """
    n1 = a1.shape[0]
    n2 = a2.shape[0]
    rows = np.zeros(n1)
    for i in range(n1):
        l1 = math.sqrt(d1[i, 0] ** 2 + d1[i, 1] ** 2 + d1[i, 2] ** 2)
        m10 = a1[i, 0] + 0.5 * d1[i, 0]
        m11 = a1[i, 1] + 0.5 * d1[i, 1]
        m12 = a1[i, 2] + 0.5 * d1[i, 2]
        acc = 0.0
        for j in range(n2):
            l2 = math.sqrt(d2[j, 0] ** 2 + d2[j, 1] ** 2 + d2[j, 2] ** 2)
            dot = (d1[i, 0] * d2[j, 0] + d1[i, 1] * d2[j, 1] + d1[i, 2] * d2[j, 2]) / (l1 * l2)
            e0 = a2[j, 0] + 0.5 * d2[j, 0] - m10
            e1 = a2[j, 1] + 0.5 * d2[j, 1] - m11
            e2 = a2[j, 2] + 0.5 * d2[j, 2] - m12
            dm = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
            big = max(l1, l2)
            if dm > 16.0 * big + core:
                gt, gw = _GT2, _GW2
            elif dm > 4.0 * big + core:
                gt, gw = _GT4, _GW4
            else:
                gt = _GT16
                gw = _GW16
                t0, t1, t2 = d2[j, 0] / l2, d2[j, 1] / l2, d2[j, 2] / l2
                s = 0.0
                for piece in range(4):
                    for u in range(gt.size):
                        f = (piece + gt[u]) / 4.0
                        x0 = a1[i, 0] + f * d1[i, 0]
                        x1 = a1[i, 1] + f * d1[i, 1]
                        x2 = a1[i, 2] + f * d1[i, 2]
                        s += gw[u] * _clipped_line_integral(
                            x0, x1, x2, a2[j, 0], a2[j, 1], a2[j, 2], t0, t1, t2, l2, core)
                acc += dot * s * l1 / 4.0
                continue
            s = 0.0
            for u in range(gt.size):
                x0 = a1[i, 0] + gt[u] * d1[i, 0]
                x1 = a1[i, 1] + gt[u] * d1[i, 1]
                x2 = a1[i, 2] + gt[u] * d1[i, 2]
                for v in range(gt.size):
                    y0 = a2[j, 0] + gt[v] * d2[j, 0] - x0
                    y1 = a2[j, 1] + gt[v] * d2[j, 1] - x1
                    y2 = a2[j, 2] + gt[v] * d2[j, 2] - x2
                    s += gw[u] * gw[v] / math.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
            acc += dot * s * l1 * l2
        rows[i] = acc
    # fixed-order reduction keeps results bit-reproducible
    total = 0.0
    for i in range(n1):
        total += rows[i]
    return total


def _segment_arrays(curve):
    if curve.domain.dim != 3:
        raise ValueError("inductances are defined for curves in R^3")
    return np.ascontiguousarray(curve.lifted_vertices()[:-1]), np.ascontiguousarray(curve.displacements)


def neumann_inductance(curve_1, curve_2):
    """Mutual inductance ``oint oint t1 . t2 / |x - y| ds ds'`` of two polylines.

    Segment pairs that are close relative to their lengths use a composite
    outer Gauss rule with the inner integral in closed form; distant pairs use
    tensor Gauss rules.  Raises when the curves touch.
    """
    a1, d1 = _segment_arrays(curve_1)
    a2, d2 = _segment_arrays(curve_2)
    gap = _min_gap(a1, d1, a2, d2)
    if gap < 1e-12 * max(curve_1.segment_lengths.max(), 1.0):
        raise ValueError("curves intersect; mutual inductance is infinite")
    return float(_neumann_kernel(a1, d1, a2, d2, 0.0))


def _min_gap(a1, d1, a2, d2):
    """Smallest distance between segments of two polylines (inf if clearly apart)."""
    l1 = np.linalg.norm(d1, axis=1).max()
    l2 = np.linalg.norm(d2, axis=1).max()
    t1 = cKDTree(a1 + 0.5 * d1)
    t2 = cKDTree(a2 + 0.5 * d2)
    pairs = t1.sparse_distance_matrix(t2, 0.5 * (l1 + l2) * 1.01, output_type="ndarray")
    if len(pairs) == 0:
        return np.inf
    i, j = pairs["i"], pairs["j"]
    return float(segment_segment_distance(a1[i], d1[i], a2[j], d2[j]).min())


@dataclass
class SelfInductance:
    """Renormalized self-inductance with its core-independence diagnostic.

    ``extrapolated`` removes the leading ``O(core^2)`` curvature term by
    combining the values at ``core`` and ``2 core``.
    """

    value: float
    excised: float
    core: float
    drift: float
    extrapolated: float

    def __float__(self):
        return self.value


def _excised_self(curve, core):
    a, d = _segment_arrays(curve)
    return float(_neumann_kernel(a, d, a, d, core))


def self_inductance_r3(curve, core, check=True):
    """Renormalized self-inductance of a closed polyline in ``R^3``.

    ``oint oint_{|x - y| > core} t . t' / |x - y| + 2 len log(2 core)``.  The
    compensation makes the value independent of ``core`` as ``core -> 0``; a
    straight wire contributes ``2 log(len / core)`` per unit length to the
    excised integral.  For a circle of radius ``a`` the limit is
    ``4 pi a (log(8 a) - 2)`` and the value at finite core exceeds it by about
    ``(3 pi / 4) core^2 / a``.

    The drift ``|value(2 core) - value(core)|`` is reported relative to
    ``max(|value|, len)`` (the value has units of length and may vanish);
    above 5% raises.
    """
    ell = curve.segment_lengths
    total = float(ell.sum())
    core = float(core)
    if not (2 * ell.min() * (1 - 1e-9) <= core <= total / 20 * (1 + 1e-9)):
        raise ValueError(
            f"core {core:.3g} outside [2 x min segment, length/20] = [{2 * ell.min():.3g}, {total / 20:.3g}]"
        )
    ex1 = _excised_self(curve, core)
    ex2 = _excised_self(curve, 2 * core)
    v1 = ex1 + 2 * total * np.log(2 * core)
    v2 = ex2 + 2 * total * np.log(4 * core)
    drift = abs(v2 - v1) / max(abs(v1), total)
    if check and drift > 0.05:
        raise ValueError(f"self-inductance drifts by {100 * drift:.1f}% between core and 2 core")
    return SelfInductance(v1, ex1, core, drift, (4 * v1 - v2) / 3)
