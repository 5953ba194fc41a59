"""Closed oriented polylines on flat tori and in Euclidean space.

A :class:`Curve` is an ordered list of vertices; the last vertex connects back
to the first.  On a torus every segment is the minimal-image geodesic between
consecutive vertices, so vertices may be stored either wrapped into the
fundamental cell or as a lifted (unwrapped) sequence.

Multiplicity is never stored on a curve.  A current of multiplicity ``m`` is a
list containing ``m`` coincident copies of the same curve.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Domain",
    "Curve",
    "PointCharge",
    "circle",
    "square",
    "filament_pair",
    "torus_knot",
    "hopf_link",
    "polygon",
    "curve_from_json",
    "resample_arclength",
    "length",
    "distance_to_curve",
    "homology_class",
    "linking_number",
    "gauss_linking_integral",
    "turning_angles",
    "check_simple",
    "segment_segment_distance",
]


@dataclass(frozen=True)
class Domain:
    """Ambient space: a flat torus with per-axis periods, or Euclidean space.

    Parameters
    ----------
    kind : {"torus", "euclidean"}
    dim : int
        2 or 3.
    periods : tuple of float, optional
        Period lengths, torus only.
    """

    kind: str
    dim: int = 3
    periods: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("torus", "euclidean"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if self.kind == "torus":
            if self.periods is None or len(self.periods) != self.dim:
                raise ValueError("torus needs one period per axis")
            per = tuple(float(p) for p in self.periods)
            if min(per) <= 0:
                raise ValueError("periods must be positive")
            object.__setattr__(self, "periods", per)
        elif self.periods is not None:
            raise ValueError("euclidean domain has no periods")

    @classmethod
    def torus(cls, periods=2 * np.pi, dim=3):
        if np.isscalar(periods):
            periods = (float(periods),) * dim
        return cls("torus", len(periods), tuple(periods))

    @classmethod
    def euclidean(cls, dim=3):
        return cls("euclidean", dim)

    @property
    def is_torus(self):
        return self.kind == "torus"

    @property
    def period_array(self):
        return np.asarray(self.periods, dtype=float)

    @property
    def volume(self):
        if not self.is_torus:
            raise ValueError("euclidean space has infinite volume")
        return float(np.prod(self.periods))

    @property
    def center(self):
        if self.is_torus:
            return 0.5 * self.period_array
        return np.zeros(self.dim)

    def minimal_image(self, d):
        """Reduce displacement vectors to their shortest periodic representative."""
        d = np.asarray(d, dtype=float)
        if not self.is_torus:
            return d
        L = self.period_array
        return d - L * np.round(d / L)

    def wrap(self, x):
        """Map points into the fundamental cell ``[0, L)``."""
        x = np.asarray(x, dtype=float)
        if not self.is_torus:
            return x
        L = self.period_array
        y = np.mod(x, L)
        # np.mod can return exactly L for tiny negative inputs
        return np.where(y >= L, y - L, y)

    def to_dict(self):
        out = {"kind": self.kind, "dim": self.dim}
        if self.is_torus:
            out["periods"] = list(self.periods)
        return out


@dataclass(frozen=True, eq=False)
class Curve:
    """Closed oriented polyline.

    Orientation follows vertex order.  Vertices are copied into a read-only
    array on construction.
    """

    vertices: np.ndarray
    domain: Domain = field(default_factory=Domain.euclidean)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.domain.dim:
            raise ValueError(
                f"vertices must have shape (M, {self.domain.dim}), got {v.shape}"
            )
        if len(v) < 3:
            raise ValueError("a closed curve needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite vertex coordinates")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        seg = self.displacements
        ell = np.linalg.norm(seg, axis=1)
        if np.any(ell <= 1e-14 * max(1.0, np.abs(v).max())):
            raise ValueError("consecutive vertices must be distinct")
        if self.domain.is_torus and ell.max() >= 0.5 * min(self.domain.periods):
            raise ValueError("torus segments must be shorter than half the smallest period")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def displacements(self):
        """Segment vectors ``b - a`` (minimal image on a torus)."""
        d = np.roll(self.vertices, -1, axis=0) - self.vertices
        return self.domain.minimal_image(d)

    @property
    def segment_lengths(self):
        return np.linalg.norm(self.displacements, axis=1)

    @property
    def tangents(self):
        d = self.displacements
        return d / np.linalg.norm(d, axis=1)[:, None]

    def lifted_vertices(self):
        """Vertices unwrapped along the curve so that consecutive entries differ
        by the segment vectors.  Returns ``M + 1`` points; the last closes the loop
        (it differs from the first by the homology translation)."""
        d = self.displacements
        out = np.empty((len(d) + 1, self.domain.dim))
        out[0] = self.vertices[0]
        np.cumsum(d, axis=0, out=out[1:])
        out[1:] += self.vertices[0]
        return out

    def segments(self):
        """Return ``(a, b)`` endpoint arrays with ``b - a`` the segment vectors."""
        a = self.lifted_vertices()[:-1]
        return a, a + self.displacements

    def midpoints(self):
        a = self.lifted_vertices()[:-1]
        return a + 0.5 * self.displacements

    def reversed(self):
        return Curve(self.vertices[::-1].copy(), self.domain)

    def translated(self, shift):
        return Curve(self.vertices + np.asarray(shift, dtype=float), self.domain)

    def scaled(self, factor, about=None):
        about = np.zeros(self.domain.dim) if about is None else np.asarray(about, float)
        return Curve(about + factor * (self.vertices - about), self.domain)

    def with_domain(self, domain):
        return Curve(self.vertices, domain)

    def to_dict(self):
        return {"domain": self.domain.to_dict(), "vertices": self.vertices.tolist()}


@dataclass(frozen=True)
class PointCharge:
    """Signed point singularity on a 2-torus."""

    position: tuple
    multiplicity: int = 1

    def __post_init__(self):
        if len(self.position) != 2:
            raise ValueError("point charges live on 2-dimensional tori")
        if int(self.multiplicity) != self.multiplicity:
            raise ValueError("multiplicity must be an integer")


def check_point_charges(charges: Sequence[PointCharge]):
    """Raise unless the total multiplicity vanishes (a bounding 0-current)."""
    total = sum(int(c.multiplicity) for c in charges)
    if total != 0:
        raise ValueError(f"point charges must sum to zero, got {total}")


# ---------------------------------------------------------------------------
# presets


def _place(points, domain, center):
    if center is None:
        center = domain.center
    return np.asarray(points) + np.asarray(center, dtype=float)


def _default_count(perimeter, n_vertices, domain):
    if n_vertices is not None:
        return int(n_vertices)
    # fine enough for most grids; callers resample to the grid spacing anyway
    scale = min(domain.periods) if domain.is_torus else perimeter
    return int(max(64, np.ceil(perimeter / (scale / 256))))


def circle(a, domain=None, center=None, axis=2, n_vertices=None):
    """Circle of radius ``a`` in the plane normal to ``axis``, counterclockwise
    seen from the positive ``axis`` direction."""
    domain = Domain.euclidean() if domain is None else domain
    m = _default_count(2 * np.pi * a, n_vertices, domain)
    t = 2 * np.pi * np.arange(m) / m
    if domain.dim == 2:
        pts = np.c_[a * np.cos(t), a * np.sin(t)]
    else:
        i, j = [k for k in range(3) if k != axis]
        pts = np.zeros((m, 3))
        pts[:, i] = a * np.cos(t)
        pts[:, j] = a * np.sin(t)
    return Curve(_place(pts, domain, center), domain)


def square(s, domain=None, center=None, axis=2, points_per_side=1):
    """Axis-aligned square of side ``s``, counterclockwise about ``axis``."""
    domain = Domain.euclidean() if domain is None else domain
    k = int(points_per_side)
    u = np.arange(k) / k
    h = 0.5 * s
    corners = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    pts2 = np.concatenate(
        [c0 + u[:, None] * (c1 - c0) for c0, c1 in zip(corners, np.roll(corners, -1, 0))]
    )
    if domain.dim == 2:
        pts = pts2
    else:
        i, j = [q for q in range(3) if q != axis]
        pts = np.zeros((len(pts2), 3))
        pts[:, i], pts[:, j] = pts2[:, 0], pts2[:, 1]
    return Curve(_place(pts, domain, center), domain)


def _straight_filament(domain, offset, along, sign, n_vertices):
    L = domain.periods[along]
    m = max(int(n_vertices), 3)
    pts = np.tile(np.asarray(offset, float), (m, 1))
    s = np.arange(m) * L / m
    pts[:, along] = s if sign > 0 else -s
    return Curve(pts, domain)


def filament_pair(d, domain, along=2, across=1, center=None, n_vertices=None):
    """Antiparallel straight filaments wrapping axis ``along``.

    The filaments sit at ``center -/+ d/2`` along axis ``across``; the first is
    oriented with ``+e_along``, the second against it.  The pair is
    null-homologous and bounds the flat strip between them.
    """
    if not domain.is_torus or domain.dim != 3:
        raise ValueError("filament pairs live on a 3-torus")
    c = domain.center if center is None else np.asarray(center, float)
    L = domain.periods[along]
    m = n_vertices if n_vertices is not None else _default_count(L, None, domain)
    off = np.zeros(3)
    off[across] = 0.5 * d
    return (
        _straight_filament(domain, c - off, along, +1, m),
        _straight_filament(domain, c + off, along, -1, m),
    )


def torus_knot(p, q, R, r, domain=None, center=None, n_vertices=None):
    """(p, q) torus knot on a standard torus of radii ``R > r``."""
    domain = Domain.euclidean() if domain is None else domain
    if domain.dim != 3:
        raise ValueError("torus knots need three dimensions")
    m = _default_count(2 * np.pi * (R + r) * max(p, q), n_vertices, domain)
    t = 2 * np.pi * np.arange(m) / m
    rad = R + r * np.cos(q * t)
    pts = np.c_[rad * np.cos(p * t), rad * np.sin(p * t), r * np.sin(q * t)]
    return Curve(_place(pts, domain, center), domain)


def hopf_link(a, d, domain=None, center=None, n_vertices=None):
    """Two circles of radius ``a`` with centers ``d`` apart along x1.

    The first lies in the x1-x2 plane, the second in the x1-x3 plane.  They are
    linked once for ``0 < d < 2a``.
    """
    domain = Domain.euclidean() if domain is None else domain
    c = domain.center if center is None else np.asarray(center, float)
    off = np.array([0.5 * d, 0.0, 0.0])
    first = circle(a, domain, c - off, axis=2, n_vertices=n_vertices)
    second = circle(a, domain, c + off, axis=1, n_vertices=n_vertices)
    return first, second


def curve_from_json(obj, domain=None):
    """Build a curve from a JSON vertex list.

    ``obj`` may be a path, a JSON string, a bare list of points, or a mapping
    with ``"vertices"`` and optionally ``"domain"``.
    """
    if isinstance(obj, (str, Path)) and Path(obj).exists():
        obj = json.loads(Path(obj).read_text())
    elif isinstance(obj, str):
        obj = json.loads(obj)
    if isinstance(obj, dict):
        if domain is None and "domain" in obj:
            dd = obj["domain"]
            domain = Domain(dd["kind"], dd.get("dim", 3),
                            tuple(dd["periods"]) if dd.get("periods") else None)
        verts = obj["vertices"]
    else:
        verts = obj
    domain = Domain.euclidean(len(verts[0])) if domain is None else domain
    return Curve(np.asarray(verts, dtype=float), domain)


def polygon(file, domain=None):
    """Load a closed polygon from a JSON vertex file."""
    return curve_from_json(Path(file), domain)


# ---------------------------------------------------------------------------
# measurements


def length(curve):
    """Total length (sum of geodesic segment lengths)."""
    return float(np.sum(curve.segment_lengths))


def resample_arclength(curve, target_h):
    """Resample at equal arclength steps close to ``target_h``.

    The vertex count is ``round(length / target_h)`` so that resampling twice
    with the same ``target_h`` reproduces the count.  New vertices lie on the
    input polyline.
    """
    total = length(curve)
    if not target_h > 0 or total < 8 * target_h:
        raise ValueError(
            f"degenerate curve: length {total:.3g} below 8 * target_h = {8 * target_h:.3g}"
        )
    m = max(int(round(total / target_h)), 8)
    lifted = curve.lifted_vertices()
    s_knots = np.concatenate([[0.0], np.cumsum(curve.segment_lengths)])
    s_new = total * np.arange(m) / m
    pts = np.column_stack(
        [np.interp(s_new, s_knots, lifted[:, j]) for j in range(curve.domain.dim)]
    )
    return Curve(pts, curve.domain)


def turning_angles(curve):
    """Angle between consecutive segment tangents at each vertex."""
    t = curve.tangents
    c = np.einsum("ij,ij->i", np.roll(t, 1, axis=0), t)
    return np.arccos(np.clip(c, -1.0, 1.0))


def _point_segment_distance(x, a, d):
    # x: (..., n), a: (..., n) segment start, d: (..., n) segment vector
    ax = x - a
    dd = np.einsum("...j,...j->...", d, d)
    t = np.clip(np.einsum("...j,...j->...", ax, d) / dd, 0.0, 1.0)
    return np.linalg.norm(ax - t[..., None] * d, axis=-1)


def distance_to_curve(points, curves):
    """Distance from each point to the nearest point of one or several curves.

    On a torus the nearest periodic image of every segment is used.

    Parameters
    ----------
    points : array_like, shape (n,) or (P, n)
    curves : Curve or sequence of Curve
    """
    if isinstance(curves, Curve):
        curves = [curves]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    domain = curves[0].domain
    best = np.full(len(pts), np.inf)
    for c in curves:
        mids = c.midpoints()
        d = c.displacements
        for lo in range(0, len(pts), 512):
            x = pts[lo:lo + 512]
            rel = domain.minimal_image(mids[None, :, :] - x[:, None, :])
            # candidate start points relative to x for the nearest image and
            # the neighbouring images (exact even for long segments)
            shifts = [np.zeros(domain.dim)]
            if domain.is_torus:
                L = domain.period_array
                shifts = [np.array(s) * L for s in itertools.product((-1, 0, 1), repeat=domain.dim)]
            for sh in shifts:
                start = rel + sh - 0.5 * d[None]
                dist = _point_segment_distance(np.zeros_like(start), start, np.broadcast_to(d, start.shape))
                np.minimum(best[lo:lo + 512], dist.min(axis=1), out=best[lo:lo + 512])
    return best if np.ndim(points) > 1 else float(best[0])


def homology_class(curves, tol=1e-9):
    """Integer winding vector ``w_j = (net displacement along axis j) / L_j``.

    Additive over a list of curves.
    """
    if isinstance(curves, Curve):
        curves = [curves]
    domain = curves[0].domain
    if not domain.is_torus:
        raise ValueError("homology classes are defined on tori only")
    total = np.zeros(domain.dim)
    for c in curves:
        total += c.displacements.sum(axis=0)
    w = total / domain.period_array
    wi = np.round(w)
    if np.max(np.abs(w - wi)) > tol:
        raise ValueError(f"curve does not close up: winding {w}")
    return wi.astype(int)


def _lift_closed(curve):
    v = curve.lifted_vertices()
    if curve.domain.is_torus and np.max(np.abs(v[-1] - v[0])) > 1e-9 * max(curve.domain.periods):
        raise ValueError("linking numbers on a torus need null-homologous curves")
    return v[:-1]


def _pair_solid_angles(p1, p2, q1, q2):
    """Signed solid angle (over 4 pi) subtended by each segment pair.

    Exact polygon formula: the Gauss integral of two straight segments equals
    the area of the spherical quadrilateral swept by their difference vector.
    """
    r13, r14 = q1 - p1, q2 - p1
    r23, r24 = q1 - p2, q2 - p2

    def unit_cross(u, v):
        c = np.cross(u, v)
        nrm = np.linalg.norm(c, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = c / nrm
        return np.where(nrm > 0, out, 0.0)

    n1 = unit_cross(r13, r14)
    n2 = unit_cross(r14, r24)
    n3 = unit_cross(r24, r23)
    n4 = unit_cross(r23, r13)

    def asin_dot(u, v):
        return np.arcsin(np.clip(np.einsum("...j,...j->...", u, v), -1.0, 1.0))

    omega = asin_dot(n1, n2) + asin_dot(n2, n3) + asin_dot(n3, n4) + asin_dot(n4, n1)
    sgn = np.sign(np.einsum("...j,...j->...", np.cross(q2 - q1, p2 - p1), r13))
    return omega * sgn / (4 * np.pi)


def gauss_linking_integral(loop, curve):
    """Real-valued Gauss linking integral of two disjoint closed polylines.

    On a torus both curves must be null-homologous; they are lifted to closed
    polylines and the sum runs over the neighbouring periodic images of
    ``curve``.
    """
    if loop.domain.dim != 3:
        raise ValueError("linking numbers are defined for curves in 3 dimensions")
    P = _lift_closed(loop)
    Q = _lift_closed(curve)
    p1, p2 = P, np.roll(P, -1, axis=0)
    shifts = [np.zeros(3)]
    if loop.domain.is_torus:
        L = loop.domain.period_array
        # bring the second curve next to the first before enumerating images
        Q = Q + loop.domain.minimal_image(Q.mean(0) - P.mean(0)) - (Q.mean(0) - P.mean(0))
        shifts = [np.array(s) * L for s in itertools.product((-1, 0, 1), repeat=3)]
    total = 0.0
    for sh in shifts:
        q1 = Q + sh
        q2 = np.roll(q1, -1, axis=0)
        for lo in range(0, len(p1), 256):
            total += _pair_solid_angles(
                p1[lo:lo + 256, None], p2[lo:lo + 256, None], q1[None], q2[None]
            ).sum()
    return float(total)


def linking_number(loop, curve, return_residual=False):
    """Linking number of two disjoint closed curves.

    The exact polygon Gauss sum is rounded to the nearest integer.  A rounding
    residual above 0.1 raises, since it means the inputs are not disjoint
    closed polylines (or are under-resolved).
    """
    raw = gauss_linking_integral(loop, curve)
    value = int(np.round(raw))
    residual = abs(raw - value)
    if residual > 0.1:
        raise ValueError(f"linking sum {raw:.4f} is not close to an integer")
    return (value, residual) if return_residual else value


def segment_segment_distance(a0, d0, a1, d1):
    """Minimal distance between segments ``a0 + s d0`` and ``a1 + t d1``,
    ``s, t`` in ``[0, 1]``; broadcasts over leading axes."""
    r = a0 - a1
    A = np.einsum("...j,...j->...", d0, d0)
    E = np.einsum("...j,...j->...", d1, d1)
    B = np.einsum("...j,...j->...", d0, d1)
    C = np.einsum("...j,...j->...", d0, r)
    F = np.einsum("...j,...j->...", d1, r)
    den = A * E - B * B
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(den > 1e-14 * A * E, (B * F - C * E) / den, 0.0)
    s = np.clip(s, 0.0, 1.0)
    t = (B * s + F) / E
    t = np.clip(t, 0.0, 1.0)
    s = np.clip((B * t - C) / A, 0.0, 1.0)
    diff = r + s[..., None] * d0 - t[..., None] * d1
    return np.linalg.norm(diff, axis=-1)


def check_simple(curves, h=None, exempt_coincident=True):
    """Raise if non-adjacent segments come closer than ``h / 4``.

    ``h`` defaults to the mean segment length.  Coincident copies of the same
    curve (multiplicity) are exempt when ``exempt_coincident`` is set.
    """
    if isinstance(curves, Curve):
        curves = [curves]
    domain = curves[0].domain
    if h is None:
        h = float(np.mean(np.concatenate([c.segment_lengths for c in curves])))
    tol = 0.25 * h
    for i, ci in enumerate(curves):
        for j in range(i, len(curves)):
            cj = curves[j]
            if i != j and exempt_coincident and ci.n_vertices == cj.n_vertices:
                if np.allclose(domain.minimal_image(ci.vertices - cj.vertices), 0.0):
                    continue
            ai, di = ci.lifted_vertices()[:-1], ci.displacements
            aj, dj = cj.lifted_vertices()[:-1], cj.displacements
            for lo in range(0, len(ai), 256):
                a0, d0 = ai[lo:lo + 256, None], di[lo:lo + 256, None]
                rel = domain.minimal_image((aj + 0.5 * dj)[None] - (a0 + 0.5 * d0)) - 0.5 * dj[None] + a0
                dist = segment_segment_distance(a0, d0, rel, dj[None])
                if i == j:
                    k = np.arange(lo, min(lo + 256, len(ai)))[:, None]
                    m = np.arange(len(aj))[None, :]
                    gap = np.abs(k - m)
                    gap = np.minimum(gap, len(aj) - gap)
                    dist = np.where(gap <= 1, np.inf, dist)
                if np.any(dist < tol):
                    raise ValueError(
                        f"curves {i} and {j} come within {dist.min():.3g} < h/4 = {tol:.3g}"
                    )
