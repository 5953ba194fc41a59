"""Tube-excised energy of a ring on the 2 pi torus and its small-tube fit.

Run with ``python3 demos/ring_expansion.py``; takes about 20 s at N = 128.
"""

import numpy as np

from vortexlines.asymptotics import energy_sweep, fit_expansion
from vortexlines.cli import Scene
from vortexlines.renorm import renormalized_energy_torus
from vortexlines.sectors import enumerate_sectors, period_defects
from vortexlines.torus_field import Grid, current_spectrum, solve_potential

scene = Scene.load("circle").with_overrides(grid=128)
curves, _ = scene.items()
grid = Grid.cubic(scene.domain, scene.grid_size)
pot = solve_potential(current_spectrum(curves, grid, scene.domain), sigma=2 * grid.h)
sector = enumerate_sectors(period_defects(pot))[0]
sweep = energy_sweep(pot, sector)
curved = fit_expansion(sweep.samples, sweep.energies, curvature_terms=True)
length = sum(c.segment_lengths.sum() for c in curves)
w_total = renormalized_energy_torus(pot, curves).total

print(f"{'delta':>10} {'energy':>12}")
for d, e in zip(sweep.samples, sweep.energies):
    print(f"{d:10.4f} {e:12.4f}")
print(f"2 pi length          {2 * np.pi * length:10.4f}")
print(f"c1 two-term fit      {sweep.c1:10.4f}")
print(f"c1 with curvature    {curved.c1:10.4f}")
print(f"W + e                {w_total + sector.energy:10.4f}")
print(f"c0 two-term fit      {sweep.c0:10.4f}")
print(f"c0 with curvature    {curved.c0:10.4f}")
