"""Fast invariant checks run by ``vortexlines validate``.

Each check returns a dict with ``name``, ``value``, ``tolerance`` and
``passed``.  The suite is meant to finish in about a minute at ``N = 64``.
"""

from __future__ import annotations

import math

import numpy as np

from .curves import Curve, Domain, circle, linking_number


def coaxial_mutual_inductance(a, b, d):
    """``oint oint t1 . t2 / r`` for coaxial circles of radii ``a``, ``b`` whose
    planes are ``d`` apart, with the complete elliptic integrals from the
    arithmetic-geometric mean."""
    k2 = 4 * a * b / ((a + b) ** 2 + d**2)
    k = math.sqrt(k2)
    x, y = 1.0, math.sqrt(1 - k2)
    csum = 0.5 * k2
    weight = 1.0
    for _ in range(40):
        c = 0.5 * (x - y)
        x, y = 0.5 * (x + y), math.sqrt(x * y)
        weight *= 2
        csum += 0.5 * weight * c * c
        if abs(c) < 1e-17:
            break
    K = math.pi / (2 * x)
    E = K * (1 - csum)
    return 4 * math.pi * math.sqrt(a * b) * ((2 / k - k) * K - 2 / k * E)


def meridian_loop(curve, index, radius, n=64, turns=1):
    """Closed loop winding ``turns`` times around ``curve`` near vertex ``index``.

    With ``turns = 1`` the loop is a small circle in the normal plane; for
    ``turns > 1`` it follows the whole curve once while circling it ``turns``
    times (a torus-knot-like path on the tube of the given radius), so its
    linking number with the curve is ``turns``.
    """
    from .tube import vertex_frames

    lifted = curve.lifted_vertices()[:-1]
    t_, n1, n2 = vertex_frames(curve)
    if turns == 1:
        ang = 2 * np.pi * np.arange(n) / n
        p = lifted[index] + 0.5 * curve.displacements[index]
        tau = curve.displacements[index] / np.linalg.norm(curve.displacements[index])
        e1 = n1[index] - (n1[index] @ tau) * tau
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(tau, e1)
        pts = p + radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
    else:
        m = len(lifted)
        ang = 2 * np.pi * turns * np.arange(m) / m
        pts = lifted + radius * (np.cos(ang)[:, None] * n1 + np.sin(ang)[:, None] * n2)
    return Curve(curve.domain.wrap(pts), curve.domain)


def _check(name, value, tol, passed=None):
    ok = bool(abs(value) <= tol) if passed is None else bool(passed)
    return {"name": name, "value": float(value), "tolerance": float(tol), "passed": ok}


def run_suite(scene, rng):
    from .relax import planar_annulus
    from .renorm import neumann_inductance
    from .sectors import build_reference_map, enumerate_sectors, loop_circulation, period_defects
    from .torus_field import BandLimitedForm, Grid, current_spectrum, solve_potential, stokes_check

    out = []
    dom = scene.domain
    items, _ = scene.items()
    if dom.is_torus and dom.dim == 3 and items:
        grid = Grid.cubic(dom, scene.grid_size)
        pot = solve_potential(current_spectrum(items, grid, dom), sigma=scene.sigma_factor * grid.h)
        sec = enumerate_sectors(period_defects(pot))[0]
        c0 = items[0]
        for turns in (1, 2):
            loop = meridian_loop(c0, 0, 3 * grid.h, turns=turns)
            want = sum(linking_number(loop, c) for c in items)
            got = loop_circulation(pot, loop, sec.harmonic)
            out.append(_check(f"degree_quantization_{turns}", (got - 2 * np.pi * want) / (2 * np.pi), 0.01))
        ref = build_reference_map(pot, sec)
        worst = max(float(np.max(np.abs(c - 2 * np.pi * np.round(c / (2 * np.pi)))))
                    for c in ref.circulations().values())
        out.append(_check("plaquette_quantization", worst / (2 * np.pi), 1e-6))
        delta = min(8 * grid.h, min(dom.periods) / 8)
        forms = [BandLimitedForm(dom, int(s)) for s in rng.integers(0, 2**31, 5)]
        res = stokes_check(pot, delta, forms, curves=items)
        out.append(_check("stokes_identity", max(r.residual for r in res), 0.02))
        pts = rng.uniform(0, 1, (64, 3)) * dom.period_array
        far = pot.potential(pts)
        rev = solve_potential(current_spectrum([c.reversed() for c in items], grid, dom),
                              sigma=pot.sigma).potential(pts)
        out.append(_check("orientation_reversal", np.max(np.abs(far + rev)) / np.max(np.abs(far)), 1e-10))
    euc = Domain.euclidean()
    for d in (0.5, 1.0, 2.0):
        c1 = circle(1.0, euc, [0, 0, 0], n_vertices=4096)
        c2 = circle(1.0, euc, [0, 0, d], n_vertices=4096)
        exact = coaxial_mutual_inductance(1.0, 1.0, d)
        out.append(_check(f"neumann_coaxial_{d:g}", (neumann_inductance(c1, c2) - exact) / exact, 1e-6))
    r = planar_annulus(1.9, 0.1, 256)
    out.append(_check("annulus_p1.9_n256", r.energy / r.info["exact"] - 1, 0.01))
    return out
