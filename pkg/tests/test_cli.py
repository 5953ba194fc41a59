import csv
import json

import numpy as np
import pytest

from oracles import coaxial_mutual_scipy
from vortexlines.cli import SCENE_DIR, Scene, SceneError, main

BUNDLED = sorted(p.stem for p in SCENE_DIR.glob("*.toml"))


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestScenes:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_round_trip(self, name):
        scene = Scene.load(name)
        for fmt in ("json", "toml"):
            text = scene.emit(fmt)
            again = Scene.parse(text, fmt, scene.base_dir)
            assert again.data == scene.data
            assert again.emit(fmt) == text
            assert again.hash == scene.hash

    def test_hash_tracks_semantic_fields_only(self):
        scene = Scene.load("circle")
        text = scene.emit("toml")
        assert Scene.parse("# a comment\n" + text).hash == scene.hash
        assert scene.with_overrides(grid=scene.grid_size).hash == scene.hash
        assert scene.with_overrides(grid=2 * scene.grid_size).hash != scene.hash
        assert scene.with_overrides(sigma=3.0).hash != scene.hash

    @pytest.mark.parametrize("text,where", [
        ("domain = 3\n", "domain"),
        ("[domain]\nkind = 'torus'\ndim = 3\nperiods = [1.0, 1.0, 1.0]\n[[curves]]\nradius = 0.1\n", "preset"),
        ("[domain\n", "toml"),
    ])
    def test_malformed(self, text, where):
        with pytest.raises(SceneError) as info:
            Scene.parse(text)
        assert where in info.value.where or where in info.value.message


class TestMain:
    def test_malformed_scene_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("domain = 3\n")
        assert main(["energy", "--scene", str(bad), "--out", str(tmp_path / "o")]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "scene" and err["field"] == "domain"

    def test_missing_scene_and_bad_flags(self, tmp_path):
        assert main(["energy", "--scene", str(tmp_path / "nope.toml")]) == 1
        assert main(["energy", "--bogus"]) == 1

    def test_expand_needs_fine_grid(self, tmp_path, capsys):
        assert main(["expand", "--scene", "circle", "--grid", "64", "--out", str(tmp_path)]) == 1
        assert "128" in json.loads(capsys.readouterr().err)["message"]

    def test_inductance_deterministic(self, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for o in outs:
            assert main(["inductance", "--scene", "coaxial", "--out", str(o)]) == 0
        reports = [(o / "report.json").read_text() for o in outs]
        assert reports[0] == reports[1]
        rep = json.loads(reports[0])
        assert rep["scene_hash"] == Scene.load("coaxial").hash
        m = np.array(rep["results"]["matrix"])
        assert m[0, 1] == pytest.approx(coaxial_mutual_scipy(1.0, 1.0, 1.0), rel=1e-5)
        assert len(read_csv(outs[0] / "inductance.csv")) == 1 + 4

    def test_energy_total(self, tmp_path):
        assert main(["energy", "--scene", "circle", "--grid", "32", "--out", str(tmp_path)]) == 0
        res = json.loads((tmp_path / "report.json").read_text())["results"]
        assert res["total"] == pytest.approx(res["renormalized_total"] + res["desingularized_energy"], rel=1e-12)

    def test_relax_half_defect(self, tmp_path):
        assert main(["relax", "--scene", "half_defect", "--method", "delta", "--param", "4",
                     "--out", str(tmp_path)]) == 0
        assert (tmp_path / "report.json").exists()

    def test_relax_out_of_range_is_numerical_error(self, tmp_path):
        # delta = 8h exceeds L/8 on the 32-point grid
        assert main(["relax", "--scene", "half_defect", "--method", "delta", "--param", "8",
                     "--out", str(tmp_path)]) == 3

    def test_expand_rows(self, tmp_path):
        assert main(["expand", "--scene", "circle", "--grid", "128", "--samples", "5",
                     "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "expand.csv")
        assert rows[0] == ["delta", "energy", "coexact", "harmonic", "cross"] and len(rows) == 6

    def test_validate(self, tmp_path):
        assert main(["validate", "--scene", "circle", "--grid", "32", "--out", str(tmp_path)]) == 0
        res = json.loads((tmp_path / "report.json").read_text())["results"]
        assert res["passed"] and len(res["checks"]) == 9
