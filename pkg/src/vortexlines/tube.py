"""Quadrature on tubular neighbourhoods of polylines.

The tube of radius ``delta`` is parametrized segment by segment as
``X(u, r, theta) = c(u) + r (cos(theta) n1(u) + sin(theta) n2(u))`` where
``c`` runs along the segment and ``(n1, n2)`` interpolates a rotation-minimizing
normal frame carried by the vertices.  The frame is continuous across vertices
so consecutive segment tubes share their cross-section discs.
"""

from __future__ import annotations

import numpy as np

from .curves import Curve
from .kernels import gauss_legendre01


def vertex_frames(curve):
    """Rotation-minimizing normals at the vertices of a closed polyline.

    Returns ``(t, n1, n2)`` arrays of shape ``(M, dim)``.  The closing holonomy
    (the angle by which the transported frame fails to return to itself) is
    spread linearly in arclength so that the frame is single-valued.
    """
    lv = curve.lifted_vertices()
    d = lv[1:] - lv[:-1]
    ell = np.linalg.norm(d, axis=1)
    T = d / ell[:, None]
    t = T + np.roll(T, 1, axis=0)
    nrm = np.linalg.norm(t, axis=1)
    # a reversal cusp has no bisector; fall back to the outgoing tangent
    t = np.where(nrm[:, None] > 1e-12, t / np.maximum(nrm, 1e-300)[:, None], T)
    M = len(t)
    # initial normal: any unit vector orthogonal to t[0]
    trial = np.eye(3)[np.argmin(np.abs(t[0]))]
    r = np.empty((M + 1, 3))
    r[0] = trial - (trial @ t[0]) * t[0]
    r[0] /= np.linalg.norm(r[0])
    tt = np.vstack([t, t[:1]])
    # double-reflection transport from vertex to vertex
    for i in range(M):
        v1 = d[i]
        c1 = v1 @ v1
        rL = r[i] - (2.0 / c1) * (v1 @ r[i]) * v1
        tL = tt[i] - (2.0 / c1) * (v1 @ tt[i]) * v1
        v2 = tt[i + 1] - tL
        c2 = v2 @ v2
        r[i + 1] = rL - (2.0 / c2) * (v2 @ rL) * v2 if c2 > 1e-30 else rL
        r[i + 1] -= (r[i + 1] @ tt[i + 1]) * tt[i + 1]
        r[i + 1] /= np.linalg.norm(r[i + 1])
    # holonomy angle measured about t[0]
    ang = np.arctan2(np.cross(r[0], r[M]) @ t[0], r[0] @ r[M])
    s = np.concatenate([[0.0], np.cumsum(ell)])[:M] / ell.sum()
    phi = -ang * s
    r = r[:M]
    b = np.cross(t, r)
    n1 = np.cos(phi)[:, None] * r + np.sin(phi)[:, None] * b
    n2 = np.cross(t, n1)
    return t, n1, n2


class TubeQuadrature:
    """Volume, boundary and centerline quadrature for the tube of radius ``delta``.

    Attributes
    ----------
    volume_points, volume_weights
        Nodes and weights (including the Jacobian) filling the tube.
    surface_points, surface_normals
        Boundary nodes and outward vector area elements.
    line_points, line_vectors
        Centerline nodes and tangent vectors times quadrature weights.
    """

    def __init__(self, curves, delta, n_along=4, n_radial=8, n_angle=16):
        if isinstance(curves, Curve):
            curves = [curves]
        if curves[0].domain.dim != 3:
            raise ValueError("tubes are built around curves in 3D")
        self.delta = float(delta)
        u, wu = gauss_legendre01(n_along)
        v, wv = gauss_legendre01(n_radial)
        rad = delta * v * v
        wr = 2.0 * delta * v * wv
        th = 2 * np.pi * (np.arange(n_angle) + 0.5) / n_angle
        wth = 2 * np.pi / n_angle
        vp, vw, sp, sn, lp, lvv = [], [], [], [], [], []
        for c in curves:
            lv = c.lifted_vertices()
            t, n1, n2 = vertex_frames(c)
            d = lv[1:] - lv[:-1]
            a = lv[:-1]
            n1b, n2b = np.roll(n1, -1, axis=0), np.roll(n2, -1, axis=0)
            # shapes: (S, U, 3)
            cu = a[:, None] + u[None, :, None] * d[:, None]
            f1 = (1 - u)[None, :, None] * n1[:, None] + u[None, :, None] * n1b[:, None]
            f2 = (1 - u)[None, :, None] * n2[:, None] + u[None, :, None] * n2b[:, None]
            df1 = (n1b - n1)[:, None]
            df2 = (n2b - n2)[:, None]
            lp.append(cu.reshape(-1, 3))
            lvv.append((d[:, None] * wu[None, :, None]).reshape(-1, 3))
            cs, sn_ = np.cos(th), np.sin(th)
            # radial direction and angular derivative, shapes (S, U, A, 3)
            er = cs[None, None, :, None] * f1[:, :, None] + sn_[None, None, :, None] * f2[:, :, None]
            et = -sn_[None, None, :, None] * f1[:, :, None] + cs[None, None, :, None] * f2[:, :, None]
            dr_u = cs[None, None, :, None] * df1[:, :, None] + sn_[None, None, :, None] * df2[:, :, None]
            # volume nodes (S, U, R, A, 3)
            R = rad[None, None, :, None, None]
            X = cu[:, :, None, None] + R * er[:, :, None]
            Xu = d[:, None, None, None] + R * dr_u[:, :, None]
            Xr = np.broadcast_to(er[:, :, None], X.shape)
            Xt = R * et[:, :, None]
            jac = np.abs(np.einsum("...j,...j->...", Xu, np.cross(Xr, Xt)))
            w = jac * (wu[None, :, None, None] * wr[None, None, :, None] * wth)
            vp.append(X.reshape(-1, 3))
            vw.append(w.reshape(-1))
            # boundary r = delta
            Xs = cu[:, :, None] + delta * er
            Xu_s = d[:, None, None] + delta * dr_u
            Xt_s = delta * et
            area = np.cross(Xt_s, Xu_s)
            sign = np.sign(np.einsum("...j,...j->...", area, er))
            area = area * (sign * wu[None, :, None] * wth)[..., None]
            sp.append(Xs.reshape(-1, 3))
            sn.append(area.reshape(-1, 3))
        self.volume_points = np.concatenate(vp)
        self.volume_weights = np.concatenate(vw)
        self.surface_points = np.concatenate(sp)
        self.surface_normals = np.concatenate(sn)
        self.line_points = np.concatenate(lp)
        self.line_vectors = np.concatenate(lvv)
        # radial coordinate of each volume node, handy for profile fits
        self.volume_radii = np.concatenate(
            [np.broadcast_to(rad[None, None, :, None], (len(c.vertices), n_along, n_radial, n_angle)).reshape(-1)
             for c in curves]
        )

    @property
    def volume(self):
        return float(self.volume_weights.sum())
