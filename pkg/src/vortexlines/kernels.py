"""Straight-segment kernels for line currents.

Normalization throughout: a closed unit current ``J`` produces the vector
potential ``A(x) = 1/2 * int tau(y) / |x - y| ds`` and ``B = curl A``, so the
circulation of ``B`` around a once-linked loop is ``2 pi``.  The helpers here
return the *raw* integrals (without the factor 1/2); callers scale.

All functions take segment geometry relative to the target point: ``ra = x - a``
and the segment vector ``d = b - a``.  Leading axes broadcast.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, erfc, exp1

_SQRT_PI = np.sqrt(np.pi)


def gauss_legendre01(n):
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(int(n))
    return 0.5 * (x + 1.0), 0.5 * w


def _dot(u, v):
    return np.einsum("...j,...j->...", u, v)


def _sum_product(r1, r2, r1v, r2v):
    """``r1 r2 + r1v . r2v`` without cancellation near the segment interior."""
    dot = _dot(r1v, r2v)
    cr = np.cross(r1v, r2v) if r1v.shape[-1] == 3 else (r1v[..., 0] * r2v[..., 1] - r1v[..., 1] * r2v[..., 0])
    cr2 = _dot(cr, cr) if r1v.shape[-1] == 3 else cr * cr
    prod = r1 * r2
    with np.errstate(divide="ignore", invalid="ignore"):
        alt = cr2 / (prod - dot)
    return np.where(dot >= 0, prod + dot, alt)


def line_inverse_distance(ra, d):
    """``int_segment ds / |x - y|`` in closed form.

    Equals ``log((r1 + r2 + l) / (r1 + r2 - l))`` with ``r1, r2`` the endpoint
    distances and ``l`` the segment length.
    """
    r1v = ra
    r2v = ra - d
    r1 = np.linalg.norm(r1v, axis=-1)
    r2 = np.linalg.norm(r2v, axis=-1)
    ell = np.linalg.norm(d, axis=-1)
    x = _sum_product(r1, r2, r1v, r2v)
    s = r1 + r2 + ell
    # (r1 + r2 - l) = 2 x / (r1 + r2 + l)
    return np.log(s * s / (2.0 * x))


def line_biot_savart(ra, d):
    """``int_segment tau x (x - y) / |x - y|^3 ds`` in closed form (3D)."""
    r1v = ra
    r2v = ra - d
    r1 = np.linalg.norm(r1v, axis=-1)
    r2 = np.linalg.norm(r2v, axis=-1)
    x = _sum_product(r1, r2, r1v, r2v)
    coef = (r1 + r2) / (r1 * r2 * x)
    return np.cross(r1v, r2v) * coef[..., None]


def _smooth_radial(r, a):
    """``erf(r/a)/r`` and ``(d/dr)(erf(r/a)/r) / r``, stable as r -> 0."""
    z = r / a
    small = z < 0.05
    zs = np.where(small, z, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = erf(z) / np.where(small, 1.0, r)
        g = (2.0 / _SQRT_PI * z * np.exp(-z * z) - erf(z)) / np.where(small, 1.0, r**3)
    z2 = zs * zs
    f_s = 2.0 / (_SQRT_PI * a) * (1.0 - z2 / 3.0 + z2 * z2 / 10.0 - z2**3 / 42.0)
    g_s = 2.0 / (_SQRT_PI * a**3) * (-2.0 / 3.0 + 2.0 * z2 / 5.0 - z2 * z2 / 7.0 + z2**3 / 27.0)
    return np.where(small, f_s, f), np.where(small, g_s, g)


def line_smooth_integrals(ra, d, a_width, nodes=8, want_b=True):
    """Gauss-Legendre integrals of the Ewald-smoothed kernel ``erf(r/w)/r``.

    Returns ``(scalar, vector)`` where ``scalar = int erf(r/w)/r ds`` and
    ``vector = int tau x grad_x(...)`` style curl term, i.e. the smooth part of
    :func:`line_biot_savart`.
    """
    t, w = gauss_legendre01(nodes)
    ell = np.linalg.norm(d, axis=-1)
    rel = ra[..., None, :] - t[:, None] * d[..., None, :]  # x - y at nodes
    r = np.linalg.norm(rel, axis=-1)
    f, g = _smooth_radial(r, a_width)
    scal = np.sum(f * w, axis=-1) * ell
    if not want_b:
        return scal, None
    # curl_x(tau f(r)) = f'(r)/r (x - y) x tau = -g tau x (x - y)
    tau = d / ell[..., None]
    acc = np.sum((w * g)[..., None] * rel, axis=-2) * ell[..., None]
    vec = -np.cross(tau, acc)
    return scal, vec


def ewald_near_potential_and_field(ra, d, a_width, nodes=8, want_b=True):
    """Raw near-field complement for the split ``1/r = erf(r/w)/r + erfc(r/w)/r``.

    Returns the tangential scalar ``int erfc(r/w)/r ds`` and the matching
    Biot-Savart vector, both computed as exact-minus-smooth.
    """
    exact = line_inverse_distance(ra, d)
    smooth, vec = line_smooth_integrals(ra, d, a_width, nodes, want_b)
    scal = exact - smooth
    if not want_b:
        return scal, None
    return scal, line_biot_savart(ra, d) - vec


def point_near_potential_and_field(rel, sigma):
    """2D near-field complement for point charges with unit multiplicity.

    ``rel = x - x_charge``.  Potential ``E1(r^2/(2 sigma^2))/2`` and rotated
    gradient ``exp(-r^2/(2 sigma^2)) (-y, x)/r^2``.
    """
    r2 = np.sum(rel * rel, axis=-1)
    q = r2 / (2.0 * sigma * sigma)
    pot = 0.5 * exp1(q)
    fac = np.exp(-q) / r2
    field = np.stack([-rel[..., 1] * fac, rel[..., 0] * fac], axis=-1)
    return pot, field


def erfc_cutoff(a_width, tol=1e-12):
    """Distance beyond which ``erfc(r/w)`` drops below ``tol``."""
    z = 1.0
    while erfc(z) > tol:
        z += 0.05
    return z * a_width


# ---------------------------------------------------------------------------
# compiled pair loops used by the periodic near-field evaluation

import math  # noqa: E402

import numba  # noqa: E402

_GT8, _GW8 = gauss_legendre01(8)
_GT3, _GW3 = gauss_legendre01(3)


@numba.njit(cache=True, inline="always")
def _smooth_pair(r, w):
    z = r / w
    if z < 0.05:
        z2 = z * z
        f = 2.0 / (math.sqrt(math.pi) * w) * (1.0 - z2 / 3.0 + z2 * z2 / 10.0 - z2 * z2 * z2 / 42.0)
        g = 2.0 / (math.sqrt(math.pi) * w**3) * (
            -2.0 / 3.0 + 2.0 * z2 / 5.0 - z2 * z2 / 7.0 + z2 * z2 * z2 / 27.0)
    else:
        e = math.erf(z)
        f = e / r
        g = (2.0 / math.sqrt(math.pi) * z * math.exp(-z * z) - e) / (r * r * r)
    return f, g


@numba.njit(cache=True)
def near_segments_accumulate(x, starts, vecs, pi, pj, shifts, width, gt, gw,
                             want_pot, want_field, pot, fld, tiny):
    """Accumulate ``exact - smooth`` segment kernels (with the 1/2 factor) for
    each (point, segment-image) pair.  Returns the number of pairs closer
    than ``tiny`` to their segment (the caller treats these as errors)."""
    bad = 0
    for q in range(pi.size):
        i = pi[q]
        j = pj[q]
        r1x = x[i, 0] - (starts[j, 0] + shifts[q, 0])
        r1y = x[i, 1] - (starts[j, 1] + shifts[q, 1])
        r1z = x[i, 2] - (starts[j, 2] + shifts[q, 2])
        dx, dy, dz = vecs[j, 0], vecs[j, 1], vecs[j, 2]
        ell = math.sqrt(dx * dx + dy * dy + dz * dz)
        r2x, r2y, r2z = r1x - dx, r1y - dy, r1z - dz
        r1 = math.sqrt(r1x * r1x + r1y * r1y + r1z * r1z)
        r2 = math.sqrt(r2x * r2x + r2y * r2y + r2z * r2z)
        cx = r1y * r2z - r1z * r2y
        cy = r1z * r2x - r1x * r2z
        cz = r1x * r2y - r1y * r2x
        cr2 = cx * cx + cy * cy + cz * cz
        dot = r1x * r2x + r1y * r2y + r1z * r2z
        prod = r1 * r2
        if dot >= 0.0:
            X = prod + dot
        else:
            X = cr2 / (prod - dot)
        # distance to the segment line, guarded against evaluation on the curve
        if cr2 <= (tiny * ell) ** 2 and dot <= 0.0:
            bad += 1
            continue
        tx, ty, tz = dx / ell, dy / ell, dz / ell
        sf = 0.0
        ax = 0.0
        ay = 0.0
        az = 0.0
        for k in range(gt.size):
            px = r1x - gt[k] * dx
            py = r1y - gt[k] * dy
            pz = r1z - gt[k] * dz
            r = math.sqrt(px * px + py * py + pz * pz)
            f, g = _smooth_pair(r, width)
            sf += gw[k] * f
            ax += gw[k] * g * px
            ay += gw[k] * g * py
            az += gw[k] * g * pz
        sf *= ell
        ax *= ell
        ay *= ell
        az *= ell
        if want_pot:
            s = r1 + r2 + ell
            val = 0.5 * (math.log(s * s / (2.0 * X)) - sf)
            pot[i, 0] += val * tx
            pot[i, 1] += val * ty
            pot[i, 2] += val * tz
        if want_field:
            coef = (r1 + r2) / (prod * X)
            # smooth Biot-Savart part is -tau x acc
            fld[i, 0] += 0.5 * (cx * coef + (ty * az - tz * ay))
            fld[i, 1] += 0.5 * (cy * coef + (tz * ax - tx * az))
            fld[i, 2] += 0.5 * (cz * coef + (tx * ay - ty * ax))
    return bad


@numba.njit(cache=True, inline="always")
def _asin_dot(ux, uy, uz, vx, vy, vz):
    c = ux * vx + uy * vy + uz * vz
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    return math.asin(c)


@numba.njit(cache=True, inline="always")
def _unit_cross(ax, ay, az, bx, by, bz):
    cx = ay * bz - az * by
    cy = az * bx - ax * bz
    cz = ax * by - ay * bx
    n = math.sqrt(cx * cx + cy * cy + cz * cz)
    if n > 0.0:
        return cx / n, cy / n, cz / n
    return 0.0, 0.0, 0.0


@numba.njit(cache=True)
def pair_linking(p1, p2, q1, q2):
    """Exact Gauss-integral contribution (solid angle / 4 pi) of two segments."""
    r13 = (q1[0] - p1[0], q1[1] - p1[1], q1[2] - p1[2])
    r14 = (q2[0] - p1[0], q2[1] - p1[1], q2[2] - p1[2])
    r23 = (q1[0] - p2[0], q1[1] - p2[1], q1[2] - p2[2])
    r24 = (q2[0] - p2[0], q2[1] - p2[1], q2[2] - p2[2])
    n1 = _unit_cross(r13[0], r13[1], r13[2], r14[0], r14[1], r14[2])
    n2 = _unit_cross(r14[0], r14[1], r14[2], r24[0], r24[1], r24[2])
    n3 = _unit_cross(r24[0], r24[1], r24[2], r23[0], r23[1], r23[2])
    n4 = _unit_cross(r23[0], r23[1], r23[2], r13[0], r13[1], r13[2])
    om = (_asin_dot(n1[0], n1[1], n1[2], n2[0], n2[1], n2[2])
          + _asin_dot(n2[0], n2[1], n2[2], n3[0], n3[1], n3[2])
          + _asin_dot(n3[0], n3[1], n3[2], n4[0], n4[1], n4[2])
          + _asin_dot(n4[0], n4[1], n4[2], n1[0], n1[1], n1[2]))
    ex, ey, ez = q2[0] - q1[0], q2[1] - q1[1], q2[2] - q1[2]
    fx, fy, fz = p2[0] - p1[0], p2[1] - p1[1], p2[2] - p1[2]
    tx = ey * fz - ez * fy
    ty = ez * fx - ex * fz
    tz = ex * fy - ey * fx
    trip = tx * r13[0] + ty * r13[1] + tz * r13[2]
    if trip > 0:
        return om / (4.0 * math.pi)
    elif trip < 0:
        return -om / (4.0 * math.pi)
    return 0.0


@numba.njit(cache=True)
def near_edges_accumulate(x0, evec, starts, vecs, pi, pj, shifts, width, gt, gw, out):
    """Near-field line integrals along straight edges ``x0[i] -> x0[i] + evec``.

    The exact 1/r part is ``2 pi`` times the pair linking contribution; the
    smooth part uses a tensor Gauss rule.
    """
    p1 = np.empty(3)
    p2 = np.empty(3)
    q1 = np.empty(3)
    q2 = np.empty(3)
    for q in range(pi.size):
        i = pi[q]
        j = pj[q]
        for c in range(3):
            p1[c] = x0[i, c]
            p2[c] = x0[i, c] + evec[c]
            q1[c] = starts[j, c] + shifts[q, c]
            q2[c] = q1[c] + vecs[j, c]
        exact = 2.0 * math.pi * pair_linking(p1, p2, q1, q2)
        dx, dy, dz = vecs[j, 0], vecs[j, 1], vecs[j, 2]
        ell = math.sqrt(dx * dx + dy * dy + dz * dz)
        tx, ty, tz = dx / ell, dy / ell, dz / ell
        sm = 0.0
        for u in range(gt.size):
            xx = p1[0] + gt[u] * evec[0]
            xy = p1[1] + gt[u] * evec[1]
            xz = p1[2] + gt[u] * evec[2]
            for v in range(gt.size):
                px = xx - (q1[0] + gt[v] * dx)
                py = xy - (q1[1] + gt[v] * dy)
                pz = xz - (q1[2] + gt[v] * dz)
                r = math.sqrt(px * px + py * py + pz * pz)
                f, g = _smooth_pair(r, width)
                # (tau x rel) . e
                cxv = ty * pz - tz * py
                cyv = tz * px - tx * pz
                czv = tx * py - ty * px
                sm += gw[u] * gw[v] * g * (cxv * evec[0] + cyv * evec[1] + czv * evec[2])
        out[i] += exact + 0.5 * ell * sm
