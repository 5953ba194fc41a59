"""Command-line front end: scenes in, JSON reports and CSV tables out.

Exit codes: 0 success, 1 scene or argument errors, 2 tolerance failures in
``validate``, 3 numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import copy
import hashlib
import json
import subprocess
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli_w

from . import __version__

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_TOLERANCE = 2
EXIT_NUMERIC = 3

SCENE_DIR = Path(__file__).parent / "scenes"

PRESETS = {
    "circle": {"radius"},
    "square": {"side"},
    "filament_pair": {"separation"},
    "torus_knot": {"p", "q", "major", "minor"},
    "hopf_link": {"radius", "separation"},
    "polygon": {"file"},
    "vertices": {"vertices"},
    "charges": {"positions", "multiplicities"},
}

_CURVE_KEYS = {"preset", "center", "axis", "n_vertices", "orientation", "multiplicity", "intensity",
               "along", "across", "points_per_side"}
_TOP_KEYS = {"name", "domain", "grid", "curves", "tolerances", "sweeps"}


class SceneError(ValueError):
    """Malformed scene; ``where`` names the offending field or line."""

    def __init__(self, where, message):
        super().__init__(f"{where}: {message}")
        self.where = where
        self.message = message


# ---------------------------------------------------------------------------
# scenes


@dataclass
class Scene:
    """Validated scene description.

    ``data`` keeps the normalized mapping (defaults filled in), which is what
    :meth:`emit` writes and what the hash covers.
    """

    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    # -- parsing ---------------------------------------------------------------
    @classmethod
    def parse(cls, text, fmt="toml", base_dir=None):
        try:
            if fmt == "json":
                raw = json.loads(text)
            else:
                raw = tomllib.loads(text)
        except json.JSONDecodeError as exc:
            raise SceneError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from None
        except tomllib.TOMLDecodeError as exc:
            raise SceneError("toml", str(exc)) from None
        scene = cls(_normalize(raw), Path(base_dir) if base_dir else Path.cwd())
        scene.check_files()
        return scene

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            named = SCENE_DIR / f"{path.name}.toml"
            if named.exists():
                path = named
            else:
                raise SceneError(str(path), "scene file not found")
        fmt = "json" if path.suffix.lower() == ".json" else "toml"
        return cls.parse(path.read_text(), fmt, path.parent)

    def check_files(self):
        for i, c in enumerate(self.data["curves"]):
            if c["preset"] == "polygon":
                p = self.base_dir / c["file"]
                if not p.exists():
                    raise SceneError(f"curves[{i}].file", f"no such file {p}")

    # -- emitting --------------------------------------------------------------
    def emit(self, fmt="json"):
        if fmt == "json":
            return json.dumps(self.data, sort_keys=True, indent=2) + "\n"
        return tomli_w.dumps(self.data)

    @property
    def hash(self):
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_overrides(self, grid=None, sigma=None):
        data = copy.deepcopy(self.data)
        if grid is not None:
            data["grid"]["n"] = int(grid)
        if sigma is not None:
            data["grid"]["sigma"] = float(sigma)
        return Scene(_normalize(data), self.base_dir)

    # -- construction ------------------------------------------------------------
    @property
    def domain(self):
        from .curves import Domain

        d = self.data["domain"]
        if d["kind"] == "torus":
            return Domain.torus(tuple(d["periods"]), d["dim"])
        return Domain.euclidean(d["dim"])

    def items(self):
        """Curves (with multiplicities repeated) or point charges, and intensities."""
        from . import curves as cv

        dom = self.domain
        out, weights = [], []
        for c in self.data["curves"]:
            kind = c["preset"]
            center = c.get("center")
            nv = c.get("n_vertices")
            if kind == "charges":
                for pos, m in zip(c["positions"], c["multiplicities"]):
                    out.append(cv.PointCharge(tuple(float(v) for v in pos), int(m)))
                    weights.append(1.0)
                continue
            if kind == "circle":
                made = [cv.circle(c["radius"], dom, center, c.get("axis", 2), nv)]
            elif kind == "square":
                made = [cv.square(c["side"], dom, center, c.get("axis", 2), c.get("points_per_side", 1))]
            elif kind == "filament_pair":
                made = list(cv.filament_pair(c["separation"], dom, c.get("along", 2), c.get("across", 1),
                                             center, nv))
            elif kind == "torus_knot":
                made = [cv.torus_knot(c["p"], c["q"], c["major"], c["minor"], dom, center, nv)]
            elif kind == "hopf_link":
                made = list(cv.hopf_link(c["radius"], c["separation"], dom, center, nv))
            elif kind == "polygon":
                made = [cv.polygon(self.base_dir / c["file"], dom)]
            else:
                made = [cv.Curve(np.asarray(c["vertices"], float), dom)]
            if c.get("orientation", 1) < 0:
                made = [m.reversed() for m in made]
            for _ in range(int(c.get("multiplicity", 1))):
                out.extend(made)
                weights.extend([float(c.get("intensity", 1.0))] * len(made))
        return out, np.array(weights)

    @property
    def grid_size(self):
        return int(self.data["grid"]["n"])

    @property
    def sigma_factor(self):
        return float(self.data["grid"]["sigma"])


def _need(mapping, key, where, types):
    if key not in mapping:
        raise SceneError(f"{where}.{key}", "missing required field")
    val = mapping[key]
    if not isinstance(val, types):
        raise SceneError(f"{where}.{key}", f"expected {types}, got {type(val).__name__}")
    return val


def _normalize(raw):
    if not isinstance(raw, dict):
        raise SceneError("scene", "top level must be a table")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise SceneError("scene", f"unknown fields {sorted(unknown)}")
    dom = raw.get("domain", {"kind": "torus"})
    if not isinstance(dom, dict):
        raise SceneError("domain", "must be a table")
    kind = dom.get("kind", "torus")
    if kind not in ("torus", "euclidean"):
        raise SceneError("domain.kind", f"unknown kind {kind!r}")
    dim = int(dom.get("dim", 3))
    if dim not in (2, 3):
        raise SceneError("domain.dim", "must be 2 or 3")
    ndom = {"kind": kind, "dim": dim}
    if kind == "torus":
        per = dom.get("periods", 2 * np.pi)
        per = [float(per)] * dim if np.isscalar(per) else [float(v) for v in per]
        if len(per) != dim or min(per) <= 0:
            raise SceneError("domain.periods", f"need {dim} positive periods")
        ndom["periods"] = per
    grid = dict(raw.get("grid", {}))
    n = grid.get("n", 64)
    if not isinstance(n, int) or n < 16 or n % 2:
        raise SceneError("grid.n", "must be an even integer >= 16")
    sig = float(grid.get("sigma", 2.0))
    if not 1.0 <= sig <= 4.0:
        raise SceneError("grid.sigma", "Ewald width must lie in [1, 4] grid spacings")
    curves = raw.get("curves", [])
    if not isinstance(curves, list):
        raise SceneError("curves", "must be an array of tables")
    ncurves = []
    for i, c in enumerate(curves):
        where = f"curves[{i}]"
        if not isinstance(c, dict):
            raise SceneError(where, "must be a table")
        preset = _need(c, "preset", where, str)
        if preset not in PRESETS:
            raise SceneError(f"{where}.preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        allowed = PRESETS[preset] | _CURVE_KEYS
        extra = set(c) - allowed
        if extra:
            raise SceneError(where, f"unknown fields {sorted(extra)}")
        for key in PRESETS[preset]:
            if key not in c:
                raise SceneError(f"{where}.{key}", "missing required field")
        nc = dict(c)
        nc.setdefault("orientation", 1)
        nc.setdefault("multiplicity", 1)
        if nc["orientation"] not in (1, -1):
            raise SceneError(f"{where}.orientation", "must be +1 or -1")
        if not isinstance(nc["multiplicity"], int) or nc["multiplicity"] < 1:
            raise SceneError(f"{where}.multiplicity", "must be a positive integer")
        if "center" in nc:
            ctr = nc["center"]
            if not isinstance(ctr, list) or len(ctr) != dim:
                raise SceneError(f"{where}.center", f"need {dim} coordinates")
            nc["center"] = [float(v) for v in ctr]
        for key in ("radius", "side", "separation", "major", "minor", "intensity"):
            if key in nc:
                nc[key] = float(nc[key])
        ncurves.append(nc)
    tol = {"relax_delta": 1e-8, "relax_p": 1e-9, "relax_s": 1e-7}
    tol.update({k: float(v) for k, v in raw.get("tolerances", {}).items()})
    sweeps = {"deltas": 8, "sectors": 1, "p": [1.6, 1.65, 1.7, 1.75, 1.8, 1.85, 1.9, 1.95],
              "s": [0.7, 0.75, 0.8, 0.85, 0.9, 0.95]}
    sweeps.update(raw.get("sweeps", {}))
    out = {"domain": ndom, "grid": {"n": n, "sigma": sig}, "curves": ncurves,
           "tolerances": tol, "sweeps": sweeps}
    if "name" in raw:
        out["name"] = str(raw["name"])
    return out


# ---------------------------------------------------------------------------
# reports


def artifact_version():
    """Package version with the short git hash when run from a checkout."""
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class Report:
    command: str
    scene_hash: str
    version: str
    results: dict
    timings: dict = field(default_factory=dict)
    status: str = "ok"

    def to_dict(self):
        return {"command": self.command, "scene_hash": self.scene_hash, "version": self.version,
                "status": self.status, "results": _jsonable(self.results)}

    def write(self, out_dir):
        """Write ``report.json`` (deterministic) and ``timings.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")
        (out / "timings.json").write_text(json.dumps(self.timings, sort_keys=True, indent=2) + "\n")
        return out / "report.json"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


# ---------------------------------------------------------------------------
# pipelines


def _torus_setup(scene):
    from .torus_field import Grid, current_spectrum, solve_potential

    dom = scene.domain
    if not dom.is_torus:
        raise SceneError("domain.kind", "this command needs a torus scene")
    items, _ = scene.items()
    grid = Grid.cubic(dom, scene.grid_size)
    cur = current_spectrum(items, grid, dom)
    pot = solve_potential(cur, sigma=scene.sigma_factor * grid.h)
    return items, grid, pot


def _sectors(scene, pot):
    from .sectors import enumerate_sectors, period_defects

    radius = int(scene.data["sweeps"].get("sectors", 1))
    defect = period_defects(pot)
    return defect, enumerate_sectors(defect, radius)


def cmd_energy(scene, args, timings):
    if not scene.domain.is_torus:
        return cmd_inductance(scene, args, timings)
    from .renorm import renormalized_energy_torus

    t = time.perf_counter()
    items, grid, pot = _torus_setup(scene)
    timings["solve"] = time.perf_counter() - t
    t = time.perf_counter()
    res = {"grid": grid.to_dict(), "sigma": pot.sigma}
    if items and not hasattr(items[0], "vertices"):
        raise SceneError("curves", "renormalized energy needs curves, not point charges")
    if items:
        rep = renormalized_energy_torus(pot, items)
        res["renormalized"] = rep.to_dict()
        res["renormalized_total"] = rep.total
    defect, secs = _sectors(scene, pot)
    minimal = secs[0]
    res["desingularized_energy"] = minimal.energy
    res["sector"] = minimal.to_dict()
    if items:
        res["total"] = res["renormalized_total"] + minimal.energy
    timings["energy"] = time.perf_counter() - t
    return res, []


def cmd_sectors(scene, args, timings):
    t = time.perf_counter()
    _, grid, pot = _torus_setup(scene)
    defect, secs = _sectors(scene, pot)
    timings["sectors"] = time.perf_counter() - t
    rows = [list(s.label) + list(s.harmonic) + [s.energy, int(s.minimal)] for s in secs]
    n = grid.dim
    header = [f"m{j}" for j in range(n)] + [f"c{j}" for j in range(n)] + ["e", "minimal"]
    res = {"defects": defect.values.tolist(), "raw_periods": defect.raw.tolist(),
           "sectors": [s.to_dict() for s in secs]}
    return res, [("sectors.csv", header, rows)]


def _parse_sweep(text):
    try:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n)).tolist()
    except ValueError:
        raise SceneError("--sweep", f"expected lo:hi:n, got {text!r}") from None


def cmd_relax(scene, args, timings):
    from .relax import sector_sweep

    t = time.perf_counter()
    _, grid, pot = _torus_setup(scene)
    scene.data["sweeps"]["sectors"] = args.sectors if args.sectors is not None else \
        scene.data["sweeps"].get("sectors", 1)
    _, secs = _sectors(scene, pot)
    if args.sweep:
        values = _parse_sweep(args.sweep)
    elif args.param is not None:
        values = [args.param]
    else:
        raise SceneError("--param", "give --param or --sweep")
    if args.method == "delta":
        values = [v * grid.h for v in values]
    # nearest sectors: the minimal one and its lattice neighbours
    chosen = secs[: min(len(secs), 2 * grid.dim + 1)]
    tol = scene.data["tolerances"][f"relax_{args.method}"]
    rows, tables = [], []
    for v in values:
        sw = sector_sweep(pot, chosen, args.method, v, threads=args.threads, tol=tol)
        tables.append(sw.to_dict())
        for r, s in zip(sw.results, sw.sectors):
            rows.append([args.method, v] + list(s.label) + [s.energy, r.energy, r.iterations,
                                                           int(r.converged), r.gradient_norm])
    timings["relax"] = time.perf_counter() - t
    header = ["method", "value"] + [f"m{j}" for j in range(grid.dim)] + \
        ["e", "energy", "iterations", "converged", "gradient_norm"]
    return {"sweeps": tables}, [("relax.csv", header, rows)]


def cmd_expand(scene, args, timings):
    from .asymptotics import energy_sweep
    from .renorm import renormalized_energy_torus

    t = time.perf_counter()
    n_grid = scene.grid_size
    dom = scene.domain
    span = min(dom.periods) / 8 / (4 * max(dom.periods) / n_grid)
    if span < 4 * (1 - 1e-12):
        raise SceneError("grid.n", f"the radius range [4h, L/8] spans only {span:.3g} at n = {n_grid}; "
                         "the fit needs a factor 4 (use --grid 128 or finer)")
    items, grid, pot = _torus_setup(scene)
    _, secs = _sectors(scene, pot)
    n = args.samples if args.samples is not None else int(scene.data["sweeps"]["deltas"])
    sw = energy_sweep(pot, secs[0], n=n, curvature_terms=args.curvature_terms)
    res = {"sweep": sw.to_dict(), "sector": secs[0].to_dict()}
    if items and hasattr(items[0], "vertices"):
        rep = renormalized_energy_torus(pot, items)
        res["renormalized_total"] = rep.total
        res["predicted_c0"] = rep.total + secs[0].energy
    timings["expand"] = time.perf_counter() - t
    header = ["delta", "energy", "coexact", "harmonic", "cross"]
    return res, [("expand.csv", header, sw.rows())]


def cmd_inductance(scene, args, timings):
    from .euclid import WireSystem, magnetic_energy_matrix

    if scene.domain.is_torus:
        raise SceneError("domain.kind", "inductances need a euclidean scene")
    t = time.perf_counter()
    items, weights = scene.items()
    system = WireSystem(items, weights)
    ell = min(float(c.segment_lengths.max()) for c in items)
    total = min(float(c.segment_lengths.sum()) for c in items)
    core = args.core if args.core is not None else min(max(4 * ell, total / 200), total / 20)
    em = magnetic_energy_matrix(system, core)
    timings["inductance"] = time.perf_counter() - t
    rows = [[j, k, em.matrix[j, k]] for j in range(len(system)) for k in range(len(system))]
    return {"core": core, **em.to_dict()}, [("inductance.csv", ["j", "k", "value"], rows)]


def cmd_validate(scene, args, timings):
    from . import validation

    t = time.perf_counter()
    rng = np.random.default_rng(args.seed)
    checks = validation.run_suite(scene, rng)
    timings["validate"] = time.perf_counter() - t
    rows = [[c["name"], c["value"], c["tolerance"], int(c["passed"])] for c in checks]
    return {"checks": checks, "passed": all(c["passed"] for c in checks)}, \
        [("validate.csv", ["check", "value", "tolerance", "passed"], rows)]


COMMANDS = {
    "energy": cmd_energy,
    "sectors": cmd_sectors,
    "relax": cmd_relax,
    "expand": cmd_expand,
    "inductance": cmd_inductance,
    "validate": cmd_validate,
}


def run(command, scene, args=None):
    """Run one pipeline and return ``(Report, csv_tables)``."""
    args = args if args is not None else build_parser().parse_args([command])
    timings = {}
    results, tables = COMMANDS[command](scene, args, timings)
    rep = Report(command, scene.hash, artifact_version(), results, timings)
    if command == "validate" and not results["passed"]:
        rep.status = "tolerance-failure"
    return rep, tables


def build_parser():
    p = argparse.ArgumentParser(prog="vortexlines", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--scene", default="circle", help="scene file (TOML or JSON) or bundled scene name")
        sp.add_argument("--out", default="vortex-out", help="output directory")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--grid", type=int, default=None, help="override grid size N")
        sp.add_argument("--sigma", type=float, default=None, help="Ewald width in units of h")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized test forms")
        if name == "relax":
            sp.add_argument("--method", choices=("delta", "p", "s"), default="p")
            sp.add_argument("--param", type=float, default=None,
                            help="p, s, or delta in units of h")
            sp.add_argument("--sweep", default=None, help="lo:hi:n")
            sp.add_argument("--sectors", type=int, default=None, help="sector radius")
        if name == "expand":
            sp.add_argument("--samples", type=int, default=None, help="number of delta samples")
            sp.add_argument("--curvature-terms", action="store_true")
        if name in ("inductance", "energy"):
            sp.add_argument("--core", type=float, default=None, help="excision radius for self terms")
    return p


def _set_threads(n):
    try:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    except Exception:  # threading layer unavailable; stay serial
        pass


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    _set_threads(args.threads)
    try:
        scene = Scene.load(args.scene).with_overrides(args.grid, args.sigma)
        rep, tables = run(args.command, scene, args)
    except SceneError as exc:
        print(json.dumps({"error": "scene", "field": exc.where, "message": exc.message}), file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        diag = {"error": "numerical", "type": type(exc).__name__, "message": str(exc),
                "where": traceback.extract_tb(exc.__traceback__)[-1].name}
        print(json.dumps(diag), file=sys.stderr)
        return EXIT_NUMERIC
    path = rep.write(args.out)
    for name, header, rows in tables:
        write_csv(Path(args.out) / name, header, rows)
    print(f"{args.command}: {rep.status}; report at {path}")
    return EXIT_TOLERANCE if rep.status == "tolerance-failure" else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
