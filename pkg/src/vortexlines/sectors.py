"""Topological sectors on flat tori.

Given the coexact field ``b`` of a scene, the maps with singular set equal to
the scene differ by a harmonic (constant) one-form ``omega`` chosen so that
every period of ``b + omega`` lies in ``2 pi Z``.  The periods of ``b`` itself
(the defects ``p_j``) fix the lattice of admissible ``omega``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order
from scipy.spatial import cKDTree

from .kernels import gauss_legendre01
from .torus_field import Grid, Sources, grid_distance, near_region

__all__ = [
    "PeriodDefect",
    "Sector",
    "ReferenceMap",
    "period_defects",
    "enumerate_sectors",
    "build_reference_map",
    "edge_integrals",
    "plaquette_residues",
    "coarse_distance",
    "loop_circulation",
]


def _wrap_pi(x):
    """Reduce to ``(-pi, pi]``; returns ``(reduced, count)`` with
    ``x = reduced + 2 pi count``."""
    x = np.asarray(x, dtype=float)
    k = np.round(x / (2 * np.pi))
    r = x - 2 * np.pi * k
    low = r <= -np.pi
    r = np.where(low, r + 2 * np.pi, r)
    k = np.where(low, k - 1, k)
    return r, k.astype(int)


@dataclass
class PeriodDefect:
    """Periods of ``b`` along the fundamental cycles, reduced to ``(-pi, pi]``."""

    values: np.ndarray
    raw: np.ndarray
    reductions: np.ndarray
    periods: tuple
    base_points: np.ndarray
    clearance: np.ndarray

    @property
    def dim(self):
        return len(self.values)

    @property
    def volume(self):
        return float(np.prod(self.periods))


@dataclass
class Sector:
    """Lattice label ``m`` and the harmonic form ``c_j = (2 pi m_j - p_j) / L_j``."""

    label: tuple
    harmonic: np.ndarray
    energy: float
    minimal: bool = False

    def to_dict(self):
        return {"m": list(self.label), "c": self.harmonic.tolist(), "e": self.energy,
                "minimal": bool(self.minimal)}


def coarse_distance(grid, sources, stagger=0.0):
    """Approximate distance from every grid point to the sources.

    The curves are sampled at spacing ``h / 4``; the error is below
    ``h / 32`` for straight pieces, enough to rank loop placements.
    """
    dom = grid.domain
    if sources.is_points:
        samples = sources.positions
    else:
        pts = []
        for a, d in zip(sources.starts, sources.vectors):
            n = max(int(np.ceil(np.linalg.norm(d) / (grid.h / 4))), 1)
            pts.append(a + np.linspace(0.0, 1.0, n + 1)[:, None] * d)
        samples = np.concatenate(pts) if pts else np.zeros((0, dom.dim))
    if len(samples) == 0:
        return np.full(grid.shape, np.inf)
    tree = cKDTree(dom.wrap(samples), boxsize=dom.period_array)
    q = dom.wrap(grid.points(stagger).reshape(-1, dom.dim))
    dist, _ = tree.query(q)
    return dist.reshape(grid.shape)


def _line_integral_along_axis(potential, base, axis, nodes=4):
    """Circulation of ``b`` along the closed axis-parallel line through ``base``."""
    g = potential.grid
    n = g.shape[axis]
    h = g.spacing[axis]
    t, w = gauss_legendre01(nodes)
    s = (np.arange(n)[:, None] + t[None, :]).reshape(-1) * h
    pts = np.tile(base, (len(s), 1))
    pts[:, axis] = base[axis] + s
    vals = potential.field(pts)[:, axis]
    return float(np.sum(vals * np.tile(w, n)) * h)


def period_defects(potential, curves=None, min_clearance=4.0, base=None):
    """Periods ``p_j`` of ``b`` along straight loops far from the singular set.

    For each axis the loop is the grid line (parallel to that axis) whose
    smallest distance to the sources is largest.

    Parameters
    ----------
    potential : PotentialField
    curves : ignored if ``base`` is given; the potential already knows its sources
    min_clearance : float
        Required clearance in units of ``h``.
    base : array_like, optional
        Force all loops through this point (used to compare two loops).
    """
    g = potential.grid
    dom = g.domain
    n = dom.dim
    raw = np.zeros(n)
    bases = np.zeros((n, n))
    clear = np.zeros(n)
    dist = None if base is not None else coarse_distance(g, potential.sources)
    pts = g.points()
    for j in range(n):
        if base is None:
            line_min = dist.min(axis=j)
            flat = int(np.argmax(line_min))
            clear[j] = float(line_min.reshape(-1)[flat])
            idx = list(np.unravel_index(flat, line_min.shape))
            idx.insert(j, 0)
            bases[j] = pts[tuple(idx)]
            if clear[j] < min_clearance * g.h:
                raise ValueError(
                    f"no loop along axis {j} keeps {min_clearance} h away from the curves"
                )
        else:
            bases[j] = np.asarray(base, dtype=float)
            clear[j] = np.nan
        raw[j] = _line_integral_along_axis(potential, bases[j], j)
    vals, red = _wrap_pi(raw)
    return PeriodDefect(vals, raw, red, tuple(dom.periods), bases, clear)


def enumerate_sectors(defect, radius=1, tie_rtol=1e-6):
    """All sectors within ``radius`` (sup norm) of the nearest lattice point,
    sorted by desingularized energy ``e = Vol * sum_j c_j^2``.

    Sectors whose energy is within ``tie_rtol`` (relative) of the minimum are
    all flagged minimal.
    """
    if radius < 1:
        raise ValueError("radius must be at least 1")
    p = np.asarray(defect.values, dtype=float)
    L = np.asarray(defect.periods, dtype=float)
    vol = float(np.prod(L))
    nearest = np.round(p / (2 * np.pi)).astype(int)
    out = []
    for off in itertools.product(range(-radius, radius + 1), repeat=len(p)):
        m = nearest + np.array(off)
        c = (2 * np.pi * m - p) / L
        out.append(Sector(tuple(int(v) for v in m), c, float(vol * np.sum(c * c))))
    out.sort(key=lambda s: (s.energy, s.label))
    emin = out[0].energy
    for s in out:
        s.minimal = s.energy <= emin + tie_rtol * max(emin, 1e-300) or s.energy == emin
    return out


def loop_circulation(potential, loop, harmonic=None, nodes=8, max_piece=None):
    """``oint_loop (b + omega) . dl`` for a closed polyline ``loop``.

    Gauss-Legendre quadrature with ``nodes`` points on pieces no longer than
    ``max_piece`` (default ``h / 2``).  For a loop disjoint from the sources
    in the sector's class this is ``2 pi`` times the linking number with the
    scene.
    """
    g = potential.grid
    max_piece = 0.5 * g.h if max_piece is None else float(max_piece)
    a = loop.lifted_vertices()[:-1]
    d = loop.displacements
    ell = np.linalg.norm(d, axis=1)
    split = np.maximum(np.ceil(ell / max_piece).astype(int), 1)
    frac = np.concatenate([np.arange(k) / k for k in split])
    rep = np.repeat(np.arange(len(a)), split)
    sub = np.repeat(1.0 / split, split)
    starts = a[rep] + frac[:, None] * d[rep]
    vecs = d[rep] * sub[:, None]
    t, w = gauss_legendre01(nodes)
    pts = (starts[:, None] + t[None, :, None] * vecs[:, None]).reshape(-1, g.dim)
    B = potential.field(pts).reshape(len(starts), nodes, g.dim)
    total = float(np.einsum("snj,sj,n->", B, vecs, w))
    if harmonic is not None:
        total += float(np.asarray(harmonic) @ d.sum(axis=0))
    return total


# ---------------------------------------------------------------------------
# edge integrals and the reference map


def edge_integrals(potential, harmonic=None, where=None):
    """Line integrals of ``b + omega`` along every forward grid edge.

    Returns an array of shape ``(dim,) + grid.shape`` whose entry ``[a, i]`` is
    the integral from node ``i`` to node ``i + e_a``.  The far field is
    integrated exactly in Fourier space and the near-field correction comes
    from :meth:`PotentialField.edge_near`, which is exact for the singular
    part even for edges grazing a curve.

    ``where`` (boolean, per node) limits the near-field work to edges whose
    start node is flagged; other near edges are returned as NaN.
    """
    g = potential.grid
    n = g.dim
    coeffs = potential.field_coefficients()
    ks = g.wavenumbers()
    out = np.empty((n,) + g.shape)
    for a in range(n):
        k = ks[a]
        h = g.spacing[a]
        with np.errstate(divide="ignore", invalid="ignore"):
            mult = np.where(k != 0, (np.exp(1j * k * h) - 1.0) / (1j * k), h)
        out[a] = g.inverse(coeffs[a] * mult)
    src = potential.sources
    if src.count:
        reach = potential.cutoff + src.reach() + g.h
        near = near_region(g, src, reach)
        todo = near if where is None else near & where
        idx = np.nonzero(todo)
        x0 = g.points()[idx]
        for a in range(n):
            vec = np.zeros(n)
            vec[a] = g.spacing[a]
            out[a][idx] += potential.edge_near(x0, vec)
            if where is not None:
                out[a][near & ~where] = np.nan
    if harmonic is not None:
        for a in range(n):
            out[a] += harmonic[a] * g.spacing[a]
    return out


def _neighbour(shape, a, sign=1):
    """Flat index of the periodic neighbour along axis ``a``."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    return np.roll(idx, -sign, axis=a).reshape(-1)


def plaquette_residues(phase_or_map, mask=None):
    """Winding of the wrapped phase around every elementary plaquette.

    Parameters
    ----------
    phase_or_map : ndarray (real phase) or complex unit field
    mask : bool array, optional
        Defined nodes; plaquettes touching undefined nodes give NaN.

    Returns
    -------
    dict mapping the axis pair ``(a, b)`` to an array of residues (multiples of
    ``2 pi`` up to quadrature error), anchored at the plaquette's lower corner.
    """
    arr = np.asarray(phase_or_map)
    theta = np.angle(arr) if np.iscomplexobj(arr) else arr
    n = theta.ndim
    defined = np.ones(theta.shape, bool) if mask is None else mask

    def inc(a, field_):
        d = np.roll(field_, -1, axis=a) - field_
        return d - 2 * np.pi * np.round(d / (2 * np.pi))

    out = {}
    for a in range(n):
        for b in range(a + 1, n):
            ea = inc(a, theta)
            eb = inc(b, theta)
            r = ea + np.roll(eb, -1, axis=a) - np.roll(ea, -1, axis=b) - eb
            ok = defined & np.roll(defined, -1, a) & np.roll(defined, -1, b) & \
                np.roll(np.roll(defined, -1, a), -1, b)
            out[(a, b)] = np.where(ok, r, np.nan)
    return out


@dataclass
class ReferenceMap:
    """Unit complex field ``u = exp(i theta)`` on the defined grid nodes."""

    values: np.ndarray
    phase: np.ndarray
    defined: np.ndarray
    edges: np.ndarray
    grid: Grid
    sector: Sector
    root: tuple
    holonomy_failures: float = 0.0
    info: dict = field(default_factory=dict)

    def circulations(self):
        """Circulation of the edge integrals around every plaquette.

        Unlike :func:`plaquette_residues` this needs no wrapping and is defined
        on plaquettes touching the masked core; plaquettes pierced by a curve
        carry ``2 pi`` times the signed crossing number.
        """
        e = self.edges
        out = {}
        for a in range(self.grid.dim):
            for b in range(a + 1, self.grid.dim):
                out[(a, b)] = e[a] + np.roll(e[b], -1, axis=a) - np.roll(e[a], -1, axis=b) - e[b]
        return out

    def jacobian(self):
        """Plaquette circulations divided by plaquette area (a discrete 2-form)."""
        h = self.grid.spacing
        return {k: v / (h[k[0]] * h[k[1]]) for k, v in self.circulations().items()}


def build_reference_map(potential, sector, grid=None, curves=None, mask_radius=None,
                        far_distance=None, check=True, edges=None):
    """Integrate ``b + omega`` along a breadth-first spanning tree.

    The tree is rooted at the node farthest from the sources; nodes within
    ``mask_radius`` (default ``h``) of the sources are left undefined.
    Raises if more than 0.1% of the far plaquettes carry a residue more than
    5% of ``2 pi`` away from a multiple of ``2 pi``.

    ``edges`` may carry the edge integrals of ``b`` alone (from
    :func:`edge_integrals` without a harmonic part) so that sweeps over
    sectors integrate the field only once.
    """
    g = potential.grid if grid is None else grid
    if g != potential.grid:
        raise ValueError("reference maps are built on the potential's grid")
    n = g.dim
    h = g.h
    mask_radius = h if mask_radius is None else float(mask_radius)
    src = potential.sources
    if src.count:
        dist_fine = grid_distance(g, src, mask_radius)
        defined = ~np.isfinite(dist_fine) | (dist_fine > mask_radius)
        dist = coarse_distance(g, src)
    else:
        defined = np.ones(g.shape, bool)
        dist = np.full(g.shape, np.inf)
    if edges is None:
        edges = edge_integrals(potential, sector.harmonic)
    else:
        edges = np.array(edges, dtype=float)
        for a in range(n):
            edges[a] += sector.harmonic[a] * g.spacing[a]
    size = g.size
    flat_def = defined.reshape(-1)
    rows, cols = [], []
    for a in range(n):
        nb = _neighbour(g.shape, a)
        ok = flat_def & flat_def[nb]
        i = np.nonzero(ok)[0]
        rows.append(i)
        cols.append(nb[i])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size)).tocsr()
    graph = graph + graph.T
    if src.count:
        root = int(np.argmax(np.where(defined, dist, -1).reshape(-1)))
    else:
        root = 0
    order, pred = breadth_first_order(graph, root, directed=False, return_predecessors=True)
    # increment from predecessor to node
    inc = np.zeros(size)
    reach = np.zeros(size, bool)
    reach[order] = True
    nodes = order[1:]
    parents = pred[nodes]
    ni = np.array(np.unravel_index(nodes, g.shape))
    pi = np.array(np.unravel_index(parents, g.shape))
    diff = (ni - pi)
    shape_arr = np.array(g.shape)[:, None]
    diff = (diff + shape_arr // 2) % shape_arr - shape_arr // 2  # periodic step in {-1,0,1}
    flat_edges = edges.reshape(n, -1)
    for a in range(n):
        fwd = diff[a] == 1
        bwd = diff[a] == -1
        inc[nodes[fwd]] = flat_edges[a][parents[fwd]]
        inc[nodes[bwd]] = -flat_edges[a][nodes[bwd]]
    # pointer jumping accumulates the increments along the tree paths
    ptr = pred.copy()
    ptr[root] = root
    ptr[~reach] = np.arange(size)[~reach]
    acc = inc.copy()
    acc[root] = 0.0
    acc[~reach] = 0.0
    for _ in range(64):
        if np.all(ptr[ptr] == ptr):
            break
        acc = acc + acc[ptr]
        ptr = ptr[ptr]
    phase = acc.reshape(g.shape)
    defined = defined & reach.reshape(g.shape)
    u = np.where(defined, np.exp(1j * phase), np.nan + 0j)
    phase = np.where(defined, phase, np.nan)
    far_distance = 3 * h if far_distance is None else far_distance
    res = plaquette_residues(u, defined)
    far = dist > far_distance
    bad = 0
    total = 0
    for (a, b), r in res.items():
        ok = far & np.roll(far, -1, a) & np.roll(far, -1, b) & np.isfinite(r)
        dev = np.abs(r[ok] - 2 * np.pi * np.round(r[ok] / (2 * np.pi)))
        bad += int(np.sum(dev > 0.05 * 2 * np.pi))
        total += int(ok.sum())
    frac = bad / max(total, 1)
    ref = ReferenceMap(u, phase, defined, edges, g, sector, tuple(np.unravel_index(root, g.shape)),
                       frac, {"far_plaquettes": total})
    if check and frac > 1e-3:
        raise ValueError(
            f"{100 * frac:.2f}% of far plaquettes have holonomy residue above 5% of 2 pi; "
            "the grid under-resolves the field"
        )
    return ref
