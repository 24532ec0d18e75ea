import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from symcomplete import (
    CloudFormat,
    DamageSpec,
    PointCloud,
    ShapeKind,
    ShapeSpec,
    bounding_box,
    damage,
    generate,
    ground_truth_planes,
    load_cloud,
    save_cloud,
)
from symcomplete.cli import main
from symcomplete.fixtures import save_plane_set


def _schema(name):
    return json.loads((resources.files("symcomplete") / "schemas" / name).read_text())


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Fixture clouds shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    full_dir = root / "full"
    damaged_dir = root / "damaged"
    full_dir.mkdir()
    damaged_dir.mkdir()
    specs = [
        ShapeSpec(ShapeKind.COMPOSITE_SYMMETRIC, point_count=2000, seed=71),
        ShapeSpec(ShapeKind.ELLIPSOID, point_count=2000, seed=72),
    ]
    for i, spec in enumerate(specs):
        cloud, _ = generate(spec)
        save_cloud(cloud, full_dir / f"obj_{i}.ply", CloudFormat.PLY_BINARY_LE)
        record = damage(cloud, DamageSpec(0.15, seed=73 + i))
        save_cloud(
            record.damaged, damaged_dir / f"obj_{i}__dr15.ply", CloudFormat.PLY_BINARY_LE
        )
    return {"root": root, "full": full_dir, "damaged": damaged_dir, "specs": specs}


class TestComplete:
    def test_basic_run(self, workdir, tmp_path, capsys):
        inp = next(iter(sorted(workdir["damaged"].glob("*.ply"))))
        out = tmp_path / "completed.ply"
        diag = tmp_path / "diag.json"
        code = main([
            "complete", str(inp), "-o", str(out),
            "--diagnostics", str(diag), "--seed", "7",
        ])
        assert code == 0
        completed = load_cloud(out)
        original = load_cloud(inp)
        assert len(completed.cloud) >= len(original.cloud)
        payload = json.loads(diag.read_text())
        jsonschema.validate(payload, _schema("diagnostics.schema.json"))

    def test_seed_reproducible_bytes(self, workdir, tmp_path):
        inp = next(iter(sorted(workdir["damaged"].glob("*.ply"))))
        out1, out2 = tmp_path / "a.ply", tmp_path / "b.ply"
        assert main(["complete", str(inp), "-o", str(out1), "--seed", "42"]) == 0
        assert main(["complete", str(inp), "-o", str(out2), "--seed", "42"]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_skip_threshold_zero_output_equals_input(self, workdir, tmp_path):
        inp = next(iter(sorted(workdir["damaged"].glob("*.ply"))))
        out = tmp_path / "skipped.ply"
        code = main([
            "complete", str(inp), "-o", str(out), "--skip-threshold", "0",
        ])
        assert code == 0
        assert np.array_equal(
            load_cloud(out).cloud.points, load_cloud(inp).cloud.points
        )

    def test_missing_input_exit_1(self, tmp_path, capsys):
        code = main(["complete", str(tmp_path / "nope.ply"), "-o", str(tmp_path / "o.ply")])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_bad_epsilon_exit_2(self, workdir, tmp_path, capsys):
        inp = next(iter(sorted(workdir["damaged"].glob("*.ply"))))
        code = main([
            "complete", str(inp), "-o", str(tmp_path / "o.ply"), "--epsilon", "2.0",
        ])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_config_file_and_override(self, workdir, tmp_path):
        inp = next(iter(sorted(workdir["damaged"].glob("*.ply"))))
        cfg = tmp_path / "run.toml"
        cfg.write_text("seed = 9\nepsilon = 0.25\n")
        out = tmp_path / "c.ply"
        diag = tmp_path / "d.json"
        code = main([
            "complete", str(inp), "-o", str(out), "--config", str(cfg),
            "--diagnostics", str(diag),
        ])
        assert code == 0
        assert json.loads(diag.read_text())["seed"] == 9

    def test_unknown_config_key_exit_2(self, workdir, tmp_path, capsys):
        inp = next(iter(sorted(workdir["damaged"].glob("*.ply"))))
        cfg = tmp_path / "run.toml"
        cfg.write_text("nonsense = 1\n")
        code = main([
            "complete", str(inp), "-o", str(tmp_path / "o.ply"), "--config", str(cfg),
        ])
        assert code == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_output_format_flag(self, workdir, tmp_path):
        inp = next(iter(sorted(workdir["damaged"].glob("*.ply"))))
        out = tmp_path / "c.xyz"
        assert main(["complete", str(inp), "-o", str(out), "--format", "xyz"]) == 0
        assert load_cloud(out).format is CloudFormat.XYZ


class TestDetectPlane:
    def test_json_output_schema(self, workdir, tmp_path):
        inp = next(iter(sorted(workdir["full"].glob("*.ply"))))
        out = tmp_path / "plane.json"
        assert main(["detect-plane", str(inp), "--json", str(out)]) == 0
        payload = json.loads(out.read_text())
        jsonschema.validate(payload, _schema("plane.schema.json"))
        assert len(payload["candidates"]) == 6

    def test_candidates_only(self, workdir, tmp_path):
        inp = next(iter(sorted(workdir["full"].glob("*.ply"))))
        out = tmp_path / "cand.json"
        assert main(["detect-plane", str(inp), "--candidates-only", "--json", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["selected"]["source"] == "initial-candidate"

    def test_selected_close_to_truth(self, workdir, tmp_path):
        spec = workdir["specs"][0]
        inp = workdir["full"] / "obj_0.ply"
        out = tmp_path / "plane.json"
        assert main(["detect-plane", str(inp), "--json", str(out)]) == 0
        payload = json.loads(out.read_text())
        _, plane = generate(spec)
        normal = np.array(payload["selected"]["normal"])
        cos = abs(float(normal @ plane.normal))
        assert np.arccos(np.clip(cos, -1, 1)) < np.deg2rad(2.0)

    def test_stdout_json(self, workdir, capsys):
        inp = next(iter(sorted(workdir["full"].glob("*.ply"))))
        assert main(["detect-plane", str(inp)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert "selected" in payload

    def test_degenerate_cloud_exit_1(self, tmp_path, capsys):
        line = np.zeros((200, 3))
        line[:, 0] = np.linspace(0, 1, 200)
        path = tmp_path / "line.xyz"
        save_cloud(PointCloud(line), path, CloudFormat.XYZ)
        assert main(["detect-plane", str(path)]) == 1

    def test_sphere_candidates_below_threshold(self, tmp_path):
        # orbit-sampled sphere is exactly symmetric about every coordinate
        # plane; the normal-direction candidates must all score ~0
        rng = np.random.default_rng(4)
        octant = np.abs(rng.normal(size=(500, 3)))
        octant /= np.linalg.norm(octant, axis=1)[:, None]
        signs = np.array(
            [[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)],
            dtype=float,
        )
        sphere = PointCloud((octant[None, :, :] * signs[:, None, :]).reshape(-1, 3))
        path = tmp_path / "sphere.xyz"
        save_cloud(sphere, path, CloudFormat.XYZ)
        out = tmp_path / "sphere.json"
        assert main(["detect-plane", str(path), "--json", str(out)]) == 0
        payload = json.loads(out.read_text())
        normals_scores = [
            c["balanced_distance"]
            for c in payload["candidates"]
            if c["source"] == "normals-pca"
        ]
        assert normals_scores and all(s < 0.05 for s in normals_scores)


class TestJobsEnv:
    def test_env_var_default(self, workdir, tmp_path, monkeypatch):
        monkeypatch.setenv("SYMCOMPLETE_JOBS", "3")
        from symcomplete.cli import build_parser, resolve_options

        args = build_parser().parse_args(
            ["eval", "--pred-dir", str(workdir["full"]), "--gt-dir", str(workdir["full"])]
        )
        assert resolve_options(args).jobs == 3

    def test_flag_overrides_env(self, workdir, monkeypatch):
        monkeypatch.setenv("SYMCOMPLETE_JOBS", "3")
        from symcomplete.cli import build_parser, resolve_options

        args = build_parser().parse_args(
            [
                "eval", "--pred-dir", str(workdir["full"]),
                "--gt-dir", str(workdir["full"]), "--jobs", "2",
            ]
        )
        assert resolve_options(args).jobs == 2


class TestAugment:
    def test_batch_outputs(self, workdir, tmp_path):
        out_dir = tmp_path / "aug"
        code = main([
            "augment", "--input-dir", str(workdir["full"]),
            "--output-dir", str(out_dir), "--rates", "0.05,0.25", "--seed", "3",
        ])
        assert code == 0
        manifest = json.loads((out_dir / "manifest.json").read_text())
        jsonschema.validate(manifest, _schema("manifest.schema.json"))
        assert len(manifest["outputs"]) == 4

    def test_bad_rates_exit_2(self, workdir, tmp_path, capsys):
        code = main([
            "augment", "--input-dir", str(workdir["full"]),
            "--output-dir", str(tmp_path / "x"), "--rates", "1.5",
        ])
        assert code == 2


class TestEval:
    def test_identical_dirs_zero_cd(self, workdir, tmp_path, capsys):
        out_json = tmp_path / "report.json"
        code = main([
            "eval", "--pred-dir", str(workdir["full"]), "--gt-dir", str(workdir["full"]),
            "--json", str(out_json), "--csv", str(tmp_path / "report.csv"),
        ])
        assert code == 0
        payload = json.loads(out_json.read_text())
        jsonschema.validate(payload, _schema("eval_completion.schema.json"))
        assert payload["overall"] == 0.0

    def test_rate_grouping(self, workdir, tmp_path):
        out_json = tmp_path / "report.json"
        code = main([
            "eval", "--pred-dir", str(workdir["damaged"]), "--gt-dir", str(workdir["full"]),
            "--json", str(out_json),
        ])
        assert code == 0
        payload = json.loads(out_json.read_text())
        assert "15" in payload["by_rate"]
        assert payload["by_rate"]["15"] > 0

    def test_unmatched_exit_1(self, workdir, tmp_path, capsys):
        lonely = tmp_path / "lonely"
        lonely.mkdir()
        cloud, _ = generate(ShapeSpec(ShapeKind.BOX, point_count=500, seed=99))
        save_cloud(cloud, lonely / "only_here.ply", CloudFormat.PLY_BINARY_LE)
        code = main([
            "eval", "--pred-dir", str(lonely), "--gt-dir", str(workdir["full"]),
        ])
        assert code == 1
        assert "unmatched" in capsys.readouterr().err

    def test_symmetry_mode(self, workdir, tmp_path):
        pred_dir = tmp_path / "planes"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        for i, spec in enumerate(workdir["specs"]):
            cloud, plane = generate(spec)
            save_plane_set(
                ground_truth_planes(spec), bounding_box(cloud), gt_dir / f"obj_{i}.json"
            )
            payload = {
                "input": f"obj_{i}.ply",
                "selected": {
                    "anchor": plane.anchor.tolist(),
                    "normal": plane.normal.tolist(),
                    "source": "refined",
                },
                "candidates": [],
                "notes": [],
            }
            (pred_dir / f"obj_{i}.json").write_text(json.dumps(payload))
        out_json = tmp_path / "sym.json"
        code = main([
            "eval", "--symmetry", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir),
            "--json", str(out_json),
        ])
        assert code == 0
        payload = json.loads(out_json.read_text())
        jsonschema.validate(payload, _schema("eval_symmetry.schema.json"))
        assert payload["accuracy"] == 1.0


class TestSweepThreshold:
    def test_single_value_one_row(self, workdir, tmp_path):
        out_csv = tmp_path / "sweep.csv"
        code = main([
            "sweep-threshold", "--input-dir", str(workdir["damaged"]),
            "--gt-dir", str(workdir["full"]), "--values", "2.0",
            "--csv", str(out_csv), "--seed", "1",
        ])
        assert code == 0
        rows = out_csv.read_text().strip().splitlines()
        assert rows[0] == "d_star,mean_cd_x1e4"
        assert len(rows) == 2

    def test_degenerate_thresholds(self, workdir, tmp_path):
        from symcomplete import chamfer_distance

        out_csv = tmp_path / "sweep2.csv"
        code = main([
            "sweep-threshold", "--input-dir", str(workdir["damaged"]),
            "--gt-dir", str(workdir["full"]), "--values", "0,1e9",
            "--csv", str(out_csv), "--seed", "1",
        ])
        assert code == 0
        rows = out_csv.read_text().strip().splitlines()[1:]
        got = {row.split(",")[0]: float(row.split(",")[1]) for row in rows}
        # d*=0 skips everything: mean CD of the damaged inputs themselves
        damaged_cd = []
        for stem in ("obj_0", "obj_1"):
            d = load_cloud(workdir["damaged"] / f"{stem}__dr15.ply").cloud
            g = load_cloud(workdir["full"] / f"{stem}.ply").cloud
            damaged_cd.append(chamfer_distance(d, g))
        want = 1e4 * float(np.mean(damaged_cd))
        assert got["0.0"] == pytest.approx(want, rel=1e-9)
        # d*=inf keeps everything: completed CD is the improved one
        assert got["1000000000.0"] <= got["0.0"]

    def test_empty_range_exit_2(self, workdir, tmp_path, capsys):
        code = main([
            "sweep-threshold", "--input-dir", str(workdir["damaged"]),
            "--gt-dir", str(workdir["full"]),
        ])
        assert code == 2
