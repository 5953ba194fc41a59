"""Energy outside a tube around the singular set, and its small-tube expansion.

The Dirichlet energy of ``b + omega`` on ``M \\ T_delta`` behaves like
``c1 log(1/delta) + c0`` as ``delta -> 0``, with ``c1 = 2 pi * length`` (in
3D; ``2 pi * #points`` in 2D) and ``c0 = W + e`` (renormalized energy plus the
energy of the harmonic part).  The helpers here evaluate the masked energy on
cell centres, fit the expansion and check the ``L^r`` decay of ``dA`` inside
the tube.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .torus_field import grid_distance
from .tube import TubeQuadrature


@dataclass
class TubeMask:
    """Cells of ``M \\ T_delta``: centres farther than ``delta`` from the curves."""

    delta: float
    mask: np.ndarray
    cell_volume: float
    distance: np.ndarray = field(repr=False, default=None)

    @classmethod
    def build(cls, potential, delta, distance=None):
        g = potential.grid
        if distance is None:
            distance = grid_distance(g, potential.sources, delta, stagger=0.5)
        return cls(float(delta), distance > delta, g.cell_volume, distance)

    @property
    def volume(self):
        return float(self.mask.sum()) * self.cell_volume

    @property
    def excised_volume(self):
        return float((~self.mask).sum()) * self.cell_volume


def tube_volume_estimate(curves, delta):
    """``pi delta^2 * length`` summed over components (flat-tube volume)."""
    from .curves import Curve, length

    curves = [curves] if isinstance(curves, Curve) else curves
    if curves[0].domain.dim == 2:
        raise ValueError("use pi delta^2 per point in 2D")
    return float(sum(np.pi * delta**2 * length(c) for c in curves))


@dataclass
class TubeEnergy:
    """Masked Dirichlet energy with its three-term split.

    ``total = coexact + harmonic + cross`` with ``coexact = int |b|^2``,
    ``harmonic = int |omega|^2`` and ``cross = 2 int (b, omega)``, all over the
    cells outside the tube.
    """

    delta: float
    total: float
    coexact: float
    harmonic: float
    cross: float
    cells: int

    def to_dict(self):
        return dict(self.__dict__)


def _harmonic_vector(sector, dim):
    if sector is None:
        return np.zeros(dim)
    return np.asarray(getattr(sector, "harmonic", sector), dtype=float)


def _check_delta(grid, delta):
    h = grid.h
    hi = min(grid.domain.periods) / 8
    if delta < 4 * h * (1 - 1e-12):
        raise ValueError(f"delta {delta:.4g} below 4h = {4 * h:.4g}: the core is under-resolved")
    if delta > hi * (1 + 1e-12):
        raise ValueError(f"delta {delta:.4g} above L/8 = {hi:.4g}")


def _masked_split(values, omega, mask, dv):
    b = values[:, mask]
    bb = float(np.sum(b * b)) * dv
    hb = float(omega @ omega) * mask.sum() * dv
    cr = 2.0 * float(omega @ b.sum(axis=1)) * dv
    full = b + omega[:, None]
    tot = float(np.sum(full * full)) * dv
    return tot, bb, hb, cr


def tube_energy(potential, sector=None, delta=None, field_values=None, distance=None):
    """Energy of ``b + omega`` on the cells outside the ``delta``-tube.

    Parameters
    ----------
    potential : PotentialField
    sector : Sector or array_like or None
        Harmonic part ``omega`` (a constant one-form); ``None`` means zero.
    delta : float
        Tube radius, in ``[4h, L/8]``.
    field_values, distance : ndarray, optional
        Precomputed cell-centre field and distance (used by sweeps).
    """
    g = potential.grid
    _check_delta(g, delta)
    omega = _harmonic_vector(sector, g.dim)
    tm = TubeMask.build(potential, delta, distance)
    if field_values is None:
        field_values = potential.field_on_grid(0.5, where=tm.mask)
    tot, bb, hb, cr = _masked_split(field_values, omega, tm.mask, g.cell_volume)
    return TubeEnergy(float(delta), tot, bb, hb, cr, int(tm.mask.sum()))


@dataclass
class ExpansionFit:
    c1: float
    c0: float
    residual: float

    def __iter__(self):
        return iter((self.c1, self.c0, self.residual))


def fit_expansion(deltas, energies, min_samples=5, min_span=4.0, curvature_terms=False):
    """Least-squares fit ``E = c1 log(1/delta) + c0``.

    Returns ``(c1, c0, residual)`` with the residual the largest relative
    deviation of a sample from the fit.

    With ``curvature_terms`` the model gains ``delta^2`` and
    ``delta^2 log(delta)`` columns, the leading remainder for a curved
    filament when ``delta`` is not small against the radius of curvature.
    """
    d = np.asarray(deltas, float)
    e = np.asarray(energies, float)
    if len(d) < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {len(d)}")
    if d.max() / d.min() < min_span * (1 - 1e-12):
        raise ValueError(f"samples span a factor {d.max() / d.min():.3g} < {min_span}")
    cols = [np.log(1.0 / d), np.ones_like(d)]
    if curvature_terms:
        cols += [d**2, d**2 * np.log(d)]
    X = np.stack(cols, axis=1)
    # condition number of the column-scaled design
    Xs = X / np.linalg.norm(X, axis=0)
    if np.linalg.cond(Xs) > 1e8:
        raise ValueError("ill-conditioned sample spacing")
    coef, *_ = np.linalg.lstsq(X, e, rcond=None)
    fit = X @ coef
    scale = np.maximum(np.abs(e), 1e-300)
    return ExpansionFit(float(coef[0]), float(coef[1]), float(np.max(np.abs(fit - e) / scale)))


def default_deltas(grid, distance=None, n=8, lo=None, hi=None):
    """``n`` log-spaced radii in ``[4h, L/10]`` for fitting the expansion.

    When that range spans less than the factor 4 needed by
    :func:`fit_expansion`, the upper end is raised to ``min(16h, L/8)``.
    Interior radii are moved to the midpoint of the gap between neighbouring
    cell-centre distances: staircase masks only change when ``delta`` crosses
    such a distance, so sitting mid-gap keeps each sample away from a jump.
    """
    L = min(grid.domain.periods)
    lo = 4 * grid.h if lo is None else lo
    if hi is None:
        hi = L / 10
        if hi < 4 * lo:
            hi = min(4 * lo, L / 8)
    raw = np.geomspace(lo, hi, n)
    if distance is None:
        return raw
    levels = np.unique(distance[np.isfinite(distance)])
    out = raw.copy()
    for i in range(1, n - 1):
        k = np.searchsorted(levels, raw[i])
        if 0 < k < len(levels):
            out[i] = 0.5 * (levels[k - 1] + levels[k])
    return out


@dataclass
class EnergySweep:
    """Energies over a parameter sweep with the fitted expansion."""

    parameter: str
    samples: np.ndarray
    energies: np.ndarray
    c1: float
    c0: float
    residual: float
    terms: list = field(default_factory=list)

    def to_dict(self):
        return {
            "parameter": self.parameter,
            "samples": self.samples.tolist(),
            "energies": self.energies.tolist(),
            "c1": self.c1,
            "c0": self.c0,
            "residual": self.residual,
            "terms": [t.to_dict() for t in self.terms],
        }

    def rows(self):
        """CSV-ready rows ``(delta, E, coexact, harmonic, cross)``."""
        return [(t.delta, t.total, t.coexact, t.harmonic, t.cross) for t in self.terms]


def energy_sweep(potential, sector=None, deltas=None, n=8, curvature_terms=False):
    """Evaluate :func:`tube_energy` over a sweep of radii and fit the expansion.

    The field is evaluated once on the cells outside the smallest tube and
    reused for every radius.
    """
    g = potential.grid
    cap = min(g.domain.periods) / 8
    distance = grid_distance(g, potential.sources, cap, stagger=0.5)
    deltas = default_deltas(g, distance, n) if deltas is None else np.asarray(deltas, float)
    deltas = np.sort(deltas)
    for d in deltas:
        _check_delta(g, d)
    values = potential.field_on_grid(0.5, where=distance > deltas[0])
    terms = [tube_energy(potential, sector, d, values, distance) for d in deltas]
    energies = np.array([t.total for t in terms])
    c1, c0, res = fit_expansion(deltas, energies, curvature_terms=curvature_terms)
    return EnergySweep("delta", deltas, energies, c1, c0, res, terms)


@dataclass
class DecayResult:
    r: float
    deltas: np.ndarray
    norms: np.ndarray
    slope: float
    predicted: float

    def to_dict(self):
        return {"r": self.r, "deltas": self.deltas.tolist(), "norms": self.norms.tolist(),
                "slope": self.slope, "predicted": self.predicted}


def tube_norm_decay(potential, r, deltas, curves=None, check=True, **quadrature):
    """Log-log slope of ``||dA||_{L^r(T_delta)}`` against ``delta``.

    The tube integrals use :class:`TubeQuadrature` (Gauss in ``sqrt(rho)``, so
    the ``1/rho`` profile is integrated exactly at leading order).  A field
    with a ``1/rho`` core gives the slope ``(2 - r)/r``; with ``check`` a
    slope below that minus 0.1 raises.
    """
    if not (1.0 <= r < 2.0):
        raise ValueError("r must lie in [1, 2)")
    if curves is None:
        raise ValueError("tube quadrature needs the curves")
    deltas = np.sort(np.asarray(deltas, float))
    norms = []
    for d in deltas:
        tq = TubeQuadrature(curves, d, **quadrature)
        B = potential.field(tq.volume_points)
        mag = np.linalg.norm(B, axis=1)
        norms.append(float(np.sum(tq.volume_weights * mag**r)) ** (1.0 / r))
    norms = np.array(norms)
    slope = float(np.polyfit(np.log(deltas), np.log(norms), 1)[0])
    predicted = (2.0 - r) / r
    if check and slope < predicted - 0.1:
        raise ValueError(f"L^{r} tube norm decays with slope {slope:.3f} < {predicted - 0.1:.3f}")
    return DecayResult(float(r), deltas, norms, slope, predicted)
