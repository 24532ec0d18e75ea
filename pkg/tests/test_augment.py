import json

import numpy as np
import pytest

from symcomplete import (
    CloudFormat,
    DamageSpec,
    GeometryError,
    PointCloud,
    ShapeKind,
    ShapeSpec,
    damage,
    damage_batch,
    generate,
    save_cloud,
)
from symcomplete.augment import derive_file_seed


class TestDamageSpec:
    def test_region_bounds_twenty_percent(self):
        spec = DamageSpec(0.20)
        assert spec.region_count_low == 14  # floor(0.7 * 20)
        assert spec.region_count_high == 19  # ceil(0.95 * 20)

    def test_region_bounds_five_percent(self):
        spec = DamageSpec(0.05)
        assert spec.region_count_low == 3
        assert spec.region_count_high == 5

    def test_region_bounds_tiny_rate_clamped(self):
        spec = DamageSpec(0.01)
        assert spec.region_count_low == 1
        assert spec.region_count_high >= 1

    def test_rate_validation(self):
        with pytest.raises(GeometryError):
            DamageSpec(0.0)
        with pytest.raises(GeometryError):
            DamageSpec(1.0)


class TestDamage:
    def test_five_percent_of_16384(self):
        cloud, _ = generate(ShapeSpec(ShapeKind.ELLIPSOID, point_count=16384, seed=1))
        record = damage(cloud, DamageSpec(0.05, seed=2))
        removed = len(record.removed_indices)
        assert abs(removed - 819) <= 0.02 * 16384  # 16384 * 0.05 = 819.2

    def test_removal_fraction_exact(self):
        cloud, _ = generate(ShapeSpec(ShapeKind.BOX, point_count=4000, seed=3))
        for rate in (0.05, 0.25, 0.45):
            record = damage(cloud, DamageSpec(rate, seed=4))
            achieved = len(record.removed_indices) / 4000
            assert abs(achieved - rate) <= 0.02

    def test_region_count_within_bounds(self):
        cloud, _ = generate(ShapeSpec(ShapeKind.WEDGE, point_count=5000, seed=5))
        for rate in (0.05, 0.15, 0.25, 0.35, 0.45):
            spec = DamageSpec(rate, seed=6)
            record = damage(cloud, spec)
            assert spec.region_count_low <= len(record.region_centers) <= spec.region_count_high

    def test_deterministic(self):
        cloud, _ = generate(ShapeSpec(ShapeKind.COMPOSITE_SYMMETRIC, point_count=3000, seed=7))
        spec = DamageSpec(0.2, seed=99)
        r1 = damage(cloud, spec)
        r2 = damage(cloud, spec)
        assert np.array_equal(r1.removed_indices, r2.removed_indices)
        assert np.array_equal(r1.region_centers, r2.region_centers)

    def test_partition(self):
        cloud, _ = generate(ShapeSpec(ShapeKind.BOX, point_count=2000, seed=8))
        record = damage(cloud, DamageSpec(0.3, seed=9))
        kept = {tuple(p) for p in record.damaged.points}
        removed = {tuple(cloud.points[i]) for i in record.removed_indices}
        everything = {tuple(p) for p in cloud.points}
        assert kept | removed == everything
        assert not (kept & removed)
        assert len(record.damaged) + len(record.removed_indices) == 2000

    def test_removed_indices_sorted_distinct(self):
        cloud, _ = generate(ShapeSpec(ShapeKind.ELLIPSOID, point_count=2000, seed=10))
        record = damage(cloud, DamageSpec(0.25, seed=11))
        idx = record.removed_indices
        assert np.all(np.diff(idx) > 0)

    def test_regions_localized(self):
        cloud, _ = generate(ShapeSpec(ShapeKind.COMPOSITE_SYMMETRIC, point_count=8000, seed=12))
        record = damage(cloud, DamageSpec(0.2, seed=13))
        within = 0
        total = 0
        for center, members in zip(record.region_centers, record.region_indices):
            pts = cloud.points[members]
            radii = np.linalg.norm(pts - center, axis=1)
            final_radius = radii.max()
            within += int((radii <= 2 * final_radius).sum())
            total += len(members)
        assert within / total >= 0.95

    def test_infeasible_spec_errors(self):
        cloud, _ = generate(ShapeSpec(ShapeKind.BOX, point_count=100, seed=14))
        # 45% of 100 = 45 removals but up to 43 regions: feasible; force
        # infeasibility with a tiny cloud and high region count
        pts = cloud.points[:40]
        with pytest.raises(GeometryError):
            damage(PointCloud(pts), DamageSpec(0.45, seed=15))


class TestDamageBatch:
    def _make_inputs(self, tmp_path, n_files=3):
        src = tmp_path / "in"
        src.mkdir()
        for i in range(n_files):
            cloud, _ = generate(
                ShapeSpec(ShapeKind.ELLIPSOID, point_count=2200, seed=50 + i)
            )
            save_cloud(cloud, src / f"cloud_{i}.ply", CloudFormat.PLY_BINARY_LE)
        return src

    def test_output_counts(self, tmp_path):
        src = self._make_inputs(tmp_path, 3)
        out = tmp_path / "out"
        manifest_path = damage_batch(src, out, [0.05, 0.25, 0.45], seed=1)
        manifest = json.loads(manifest_path.read_text())
        assert len(manifest["outputs"]) == 9
        assert manifest["errors"] == []
        for entry in manifest["outputs"]:
            assert (out / entry["output"]).exists()
            assert (out / (entry["output"] + ".json")).exists()

    def test_deterministic_checksums(self, tmp_path):
        src = self._make_inputs(tmp_path, 2)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        m1 = json.loads(damage_batch(src, out1, [0.1, 0.3], seed=7).read_text())
        m2 = json.loads(damage_batch(src, out2, [0.1, 0.3], seed=7).read_text())
        assert [e["checksum"] for e in m1["outputs"]] == [
            e["checksum"] for e in m2["outputs"]
        ]

    def test_jobs_do_not_change_output(self, tmp_path):
        src = self._make_inputs(tmp_path, 2)
        out1, out2 = tmp_path / "j1", tmp_path / "j2"
        m1 = json.loads(damage_batch(src, out1, [0.2], seed=3, jobs=1).read_text())
        m2 = json.loads(damage_batch(src, out2, [0.2], seed=3, jobs=4).read_text())
        assert m1["outputs"] == m2["outputs"]

    def test_sidecar_fraction_recount(self, tmp_path):
        src = self._make_inputs(tmp_path, 1)
        out = tmp_path / "out"
        damage_batch(src, out, [0.15], seed=5)
        sidecar = json.loads(next(out.glob("*.ply.json")).read_text())
        removed = sum(len(r["removed"]) for r in sidecar["regions"])
        assert abs(removed / 2200 - 0.15) <= 0.02

    def test_unreadable_file_recorded(self, tmp_path):
        src = self._make_inputs(tmp_path, 1)
        (src / "broken.ply").write_bytes(b"ply\nformat ascii 1.0\n")  # truncated
        out = tmp_path / "out"
        manifest = json.loads(damage_batch(src, out, [0.2], seed=2).read_text())
        assert len(manifest["errors"]) == 1
        assert manifest["errors"][0]["input"] == "broken.ply"
        assert len(manifest["outputs"]) == 1

    def test_sidecar_validates_against_schema(self, tmp_path):
        import jsonschema
        from importlib import resources

        src = self._make_inputs(tmp_path, 1)
        out = tmp_path / "out"
        manifest_path = damage_batch(src, out, [0.2], seed=2)
        schema_dir = resources.files("symcomplete") / "schemas"
        sidecar_schema = json.loads((schema_dir / "sidecar.schema.json").read_text())
        manifest_schema = json.loads((schema_dir / "manifest.schema.json").read_text())
        jsonschema.validate(
            json.loads(next(out.glob("*.ply.json")).read_text()), sidecar_schema
        )
        jsonschema.validate(json.loads(manifest_path.read_text()), manifest_schema)


class TestSeedDerivation:
    def test_stable(self):
        assert derive_file_seed(1, "a.ply", 0.2) == derive_file_seed(1, "a.ply", 0.2)

    def test_distinct_per_rate_and_name(self):
        seeds = {
            derive_file_seed(1, "a.ply", 0.2),
            derive_file_seed(1, "a.ply", 0.3),
            derive_file_seed(1, "b.ply", 0.2),
            derive_file_seed(2, "a.ply", 0.2),
        }
        assert len(seeds) == 4
