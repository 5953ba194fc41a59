"""Two antiparallel filaments half a period apart have two co-minimal sectors.

Run with ``python3 demos/half_defect_sectors.py``; takes about 15 s.
"""

from vortexlines.cli import Scene
from vortexlines.relax import sector_sweep
from vortexlines.sectors import enumerate_sectors, period_defects
from vortexlines.torus_field import Grid, current_spectrum, solve_potential

scene = Scene.load("half_defect")
curves, _ = scene.items()
grid = Grid.cubic(scene.domain, scene.grid_size)
pot = solve_potential(current_spectrum(curves, grid, scene.domain), sigma=2 * grid.h)
defect = period_defects(pot)
sectors = enumerate_sectors(defect)
print("period defects", defect.values)
table = sector_sweep(pot, sectors[:4], "p", 1.9)
print(f"{'sector':>14} {'e':>12} {'E_p (p=1.9)':>14}")
for sec, res in zip(sectors, table.results):
    print(f"{str(sec.label):>14} {sec.energy:12.6f} {res.energy:14.6f}")
