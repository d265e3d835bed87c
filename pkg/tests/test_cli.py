import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dt_lidar.cli import main
from dt_lidar.dataset import read_manifest, write_features
from dt_lidar.report import render_svg

from helpers import sensor, simulate, tree_digest, write_world

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    scene, sensors = write_world(d, [sensor()])
    return scene, sensors


@pytest.fixture(scope="module")
def dataset(world, tmp_path_factory):
    return simulate(*world, tmp_path_factory.mktemp("ds") / "a", 6, 1)


def gap(a, b, report, *extra):
    return main(["gap", "--a", str(a), "--b", str(b), "--report", str(report),
                 "--points-per-frame", "500", "--frame-pairs", "10", "--samples", "300",
                 *extra])


class TestSimulate:
    def test_enclosing_sphere_one_frame(self, tmp_path):
        scene, sensors = write_world(tmp_path, [sensor(upper=30.0, lower=-30.0)], actors=0,
                                     mesh="sphere")
        out = simulate(scene, sensors, tmp_path / "out", 1)
        m = read_manifest(out)
        assert m.frame_ids == ["000000"]
        # 8 channels x floor(28800 / 80) steps, every ray hits the sphere.
        assert (out / "points" / "lidar" / "000000.bin").stat().st_size == 16 * 8 * 360

    def test_deterministic(self, world, tmp_path):
        a = simulate(*world, tmp_path / "a", 10, 5)
        b = simulate(*world, tmp_path / "b", 10, 5)
        da, db = tree_digest(a), tree_digest(b)
        da.pop("manifest.json")
        db.pop("manifest.json")
        assert da == db
        ma = json.loads((a / "manifest.json").read_text())
        mb = json.loads((b / "manifest.json").read_text())
        assert ma.pop("name") == "a" and mb.pop("name") == "b"
        assert ma == mb

    def test_two_sensors_with_merge(self, tmp_path):
        scene, sensors = write_world(tmp_path, [sensor("front", x=5.0, pps=7200.0),
                                                sensor("rear", x=-5.0, yaw=180.0, pps=7200.0)])
        out = simulate(scene, sensors, tmp_path / "out", 100, 0, "--merge")
        m = read_manifest(out)
        assert len(m.frame_ids) == 100
        assert sorted(p.name for p in (out / "points").iterdir()) == ["front", "merged", "rear"]
        for view in ("front", "rear", "merged"):
            assert len(list((out / "points" / view).glob("*.bin"))) == 100
            assert len(list((out / "labels" / view).glob("*.txt"))) == 100
        assert sum(v == "train" for v in m.split.values()) == 80
        sizes = [(out / "points" / v / "000010.bin").stat().st_size for v in m.views]
        assert sizes[2] == sizes[0] + sizes[1]

    def test_refuses_non_empty_output(self, world, dataset, capsys):
        code = main(["simulate", "--scene", str(world[0]), "--sensors", str(world[1]),
                     "--frames", "1", "--out", str(dataset)])
        assert code == 1
        assert "--overwrite" in capsys.readouterr().err

    def test_prints_throughput(self, world, tmp_path, capsys):
        simulate(*world, tmp_path / "out", 2)
        assert "frames/s" in capsys.readouterr().out

    def test_bad_sensor_field_path(self, tmp_path, capsys):
        s = sensor()
        s["channels"] = 0
        scene, sensors = write_world(tmp_path, [s], mesh=None)
        code = main(["simulate", "--scene", str(scene), "--sensors", str(sensors),
                     "--frames", "1", "--out", str(tmp_path / "out")])
        assert code == 1
        assert "[0]: channels" in capsys.readouterr().err

    @pytest.mark.parametrize("args", [["--frames", "0"], ["--frames", "2", "--split", "1.5"]])
    def test_invalid_run_config(self, world, tmp_path, args):
        assert main(["simulate", "--scene", str(world[0]), "--sensors", str(world[1]),
                     "--out", str(tmp_path / "o"), *args]) == 1

    def test_missing_scene_is_io_error(self, world, tmp_path):
        assert main(["simulate", "--scene", str(tmp_path / "nope.json"), "--sensors",
                     str(world[1]), "--frames", "1", "--out", str(tmp_path / "o")]) == 2

    def test_unknown_option(self):
        assert main(["simulate", "--bogus"]) == 1


class TestStats:
    def test_schema(self, dataset, capsys):
        assert main(["stats", "--dataset", str(dataset)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert set(out) == {"frame_count", "point_count", "box_count", "mean_box_volume"}
        assert out["frame_count"] == 6
        assert set(out["point_count"]) == {"mean", "std"}

    def test_missing_dataset(self, tmp_path):
        assert main(["stats", "--dataset", str(tmp_path / "absent")]) == 2

    def test_integrity_error(self, world, tmp_path, capsys):
        out = simulate(*world, tmp_path / "ds", 3)
        (out / "points" / "lidar" / "000001.bin").unlink()
        assert main(["stats", "--dataset", str(out)]) == 1
        assert "000001" in capsys.readouterr().err

    def test_empty_point_frames(self, tmp_path, capsys):
        scene, sensors = write_world(tmp_path, [sensor()], actors=0, mesh=None)
        out = simulate(scene, sensors, tmp_path / "ds", 2)
        capsys.readouterr()
        assert main(["stats", "--dataset", str(out)]) == 0
        assert json.loads(capsys.readouterr().out)["point_count"]["mean"] == 0.0


class TestGapAndReport:
    def test_self_gap(self, dataset, tmp_path):
        assert gap(dataset, dataset, tmp_path / "r.json") == 0
        r = json.loads((tmp_path / "r.json").read_text())
        assert r["raw"]["cd"] == 0.0 and r["raw"]["mmd"] <= 1e-12
        assert "latent" not in r
        assert set(r) == {"raw", "stats", "config", "versions"}
        assert r["stats"]["normalized"]["point_count"] == [1.0, 1.0]
        assert r["stats"]["point_density_unit"] == "points/frame"

    def test_latent_block(self, dataset, tmp_path):
        rng = np.random.default_rng(0)
        write_features(tmp_path / "a.fmat", rng.normal(size=(40, 6)))
        write_features(tmp_path / "b.fmat", rng.normal(size=(50, 6)))
        assert gap(dataset, dataset, tmp_path / "r.json", "--features-a",
                   str(tmp_path / "a.fmat"), "--features-b", str(tmp_path / "b.fmat")) == 0
        r = json.loads((tmp_path / "r.json").read_text())
        assert r["latent"]["space"] == "latent"
        assert r["latent"]["config"]["rows"] == [40, 50]

        assert main(["report", "--json", str(tmp_path / "r.json"),
                     "--out", str(tmp_path / "p.svg")]) == 0
        root = ET.parse(tmp_path / "p.svg").getroot()
        bars = [e for e in root.iter(f"{SVG}rect") if e.get("class") == "metric-bar"]
        assert len(bars) == 8
        assert {b.get("data-space") for b in bars} == {"raw", "latent"}
        panels = [g for g in root.iter(f"{SVG}g") if g.get("class") == "projection"]
        assert [g.get("data-space") for g in panels] == ["raw", "latent"]
        dots = [c for c in panels[1].iter(f"{SVG}circle")]
        assert sum(c.get("class") == "proj-a" for c in dots) == 40
        assert sum(c.get("class") == "proj-b" for c in dots) == 40

    def test_feature_dimension_mismatch(self, dataset, tmp_path):
        write_features(tmp_path / "a.fmat", np.ones((4, 3)))
        write_features(tmp_path / "b.fmat", np.ones((4, 5)))
        assert gap(dataset, dataset, tmp_path / "r.json", "--features-a",
                   str(tmp_path / "a.fmat"), "--features-b", str(tmp_path / "b.fmat")) == 1

    def test_one_feature_file_only(self, dataset, tmp_path):
        write_features(tmp_path / "a.fmat", np.ones((4, 3)))
        assert gap(dataset, dataset, tmp_path / "r.json",
                   "--features-a", str(tmp_path / "a.fmat")) == 1

    def test_missing_dataset(self, dataset, tmp_path):
        assert gap(dataset, tmp_path / "absent", tmp_path / "r.json") == 2

    def test_bad_bandwidth(self, dataset, tmp_path):
        assert gap(dataset, dataset, tmp_path / "r.json", "--bandwidth", "wide") == 1

    def test_report_structure_and_determinism(self, dataset, tmp_path):
        gap(dataset, dataset, tmp_path / "r.json")
        for name in ("a.svg", "b.svg"):
            assert main(["report", "--json", str(tmp_path / "r.json"),
                         "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
        root = ET.parse(tmp_path / "a.svg").getroot()
        bars = [e for e in root.iter(f"{SVG}rect") if e.get("class") == "metric-bar"]
        assert sorted(b.get("data-metric") for b in bars) == ["cd", "emd", "fd", "mmd"]
        polys = {e.get("class") for e in root.iter(f"{SVG}polygon")}
        assert polys == {"radar-a", "radar-b"}

    def test_stats_block_round_trips_through_report_parser(self, dataset, tmp_path):
        from dt_lidar.report import load_report
        from dt_lidar.stats import DatasetSummary

        gap(dataset, dataset, tmp_path / "r.json")
        r = load_report(tmp_path / "r.json")
        summary = DatasetSummary.from_dict(r["stats"]["a"])
        assert summary.to_dict() == r["stats"]["a"]

    def test_malformed_report(self, tmp_path):
        (tmp_path / "r.json").write_text('{"raw": {"cd": 1}}')
        assert main(["report", "--json", str(tmp_path / "r.json"),
                     "--out", str(tmp_path / "p.svg")]) == 1
        (tmp_path / "r.json").write_text("{not json")
        assert main(["report", "--json", str(tmp_path / "r.json"),
                     "--out", str(tmp_path / "p.svg")]) == 1

    def test_render_rejects_negative_metric(self):
        report = {"raw": {"cd": -1.0, "mmd": 0, "emd": 0, "fd": 0},
                  "stats": {"normalized": {}}}
        with pytest.raises(ValueError):
            render_svg(report)


def test_demo_scene_command(tmp_path):
    assert main(["demo-scene", "--out", str(tmp_path)]) == 0
    assert {p.name for p in tmp_path.iterdir()} == {"city.obj", "scene.json", "sensors.json"}
    out = simulate(tmp_path / "scene.json", tmp_path / "sensors.json", tmp_path / "ds", 1)
    assert read_manifest(out).frame_ids == ["000000"]
