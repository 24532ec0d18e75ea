"""Reproducible damage protocol: carve localized regions out of clean clouds."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import GeometryError, PointCloud
from .io import load_cloud, save_cloud

__all__ = [
    "DamageSpec",
    "DamageRecord",
    "damage",
    "damage_batch",
    "derive_file_seed",
]

log = logging.getLogger(__name__)

_SUPPORTED_SUFFIXES = (".ply", ".xyz")


@dataclass(frozen=True)
class DamageSpec:
    """Damage rate plus the derived bounds on how many regions get carved.

    The region-count bounds scale with the rate expressed in percent: a 20%
    rate yields between floor(0.7 * 20) = 14 and ceil(0.95 * 20) = 19 regions.
    """

    damage_rate: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.damage_rate < 1.0):
            raise GeometryError(f"damage_rate must be in (0, 1), got {self.damage_rate}")

    @property
    def region_count_low(self) -> int:
        return max(1, math.floor(0.7 * 100.0 * self.damage_rate))

    @property
    def region_count_high(self) -> int:
        return max(self.region_count_low, math.ceil(0.95 * 100.0 * self.damage_rate))


@dataclass(frozen=True)
class DamageRecord:
    damaged: PointCloud
    removed_indices: np.ndarray          # sorted, distinct, into the original cloud
    region_centers: np.ndarray           # (h, 3) seed points of the carved regions
    region_indices: tuple[np.ndarray, ...]  # per-region removed indices


def _split_budget(rng: np.random.Generator, total: int, regions: int) -> np.ndarray:
    """Random region sizes (Dirichlet weights) that sum exactly to `total`."""
    weights = rng.dirichlet(np.ones(regions))
    raw = weights * (total - regions)  # reserve one point per region
    sizes = np.floor(raw).astype(np.int64) + 1
    remainder = total - int(sizes.sum())
    if remainder > 0:
        order = np.argsort(-(raw - np.floor(raw)), kind="stable")
        sizes[order[:remainder]] += 1
    return sizes


def damage(cloud: PointCloud, spec: DamageSpec) -> DamageRecord:
    """Carve a controlled fraction of the cloud into localized missing regions.

    Seed points are drawn uniformly; regions then grow outward one nearest
    unclaimed point at a time, rotating among regions until each reaches its
    randomized share of the removal budget. Deterministic for a fixed seed.
    """
    n = len(cloud)
    target = int(round(spec.damage_rate * n))
    rng = np.random.default_rng(spec.seed)
    region_count = int(rng.integers(spec.region_count_low, spec.region_count_high + 1))
    if target < region_count:
        raise GeometryError(
            f"infeasible damage spec: {region_count} regions exceed the "
            f"{target}-point removal budget"
        )
    if target >= n:
        raise GeometryError("damage would remove the whole cloud")

    seeds = rng.choice(n, size=region_count, replace=False)
    sizes = _split_budget(rng, target, region_count)

    # full distance ordering per region; regions are few so this stays cheap
    tree = cKDTree(cloud.points)
    _, order = tree.query(cloud.points[seeds], k=n)
    order = np.atleast_2d(order)

    claimed = np.zeros(n, dtype=bool)
    cursors = np.zeros(region_count, dtype=np.int64)
    grabbed: list[list[int]] = [[] for _ in range(region_count)]
    remaining = sizes.copy()
    active = True
    while active:
        active = False
        for r in range(region_count):
            if remaining[r] == 0:
                continue
            c = cursors[r]
            while c < n and claimed[order[r, c]]:
                c += 1
            cursors[r] = c
            if c >= n:
                remaining[r] = 0
                continue
            point = int(order[r, c])
            claimed[point] = True
            grabbed[r].append(point)
            remaining[r] -= 1
            active = True

    region_indices = tuple(np.asarray(g, dtype=np.intp) for g in grabbed)
    removed = np.sort(np.concatenate(region_indices))
    keep = np.flatnonzero(~claimed)
    return DamageRecord(
        damaged=cloud.take(keep),
        removed_indices=removed,
        region_centers=cloud.points[seeds],
        region_indices=region_indices,
    )


def derive_file_seed(master_seed: int, name: str, rate: float) -> int:
    """Stable per-file seed so batch outputs do not depend on scheduling."""
    digest = hashlib.sha256(f"{master_seed}:{name}:{rate:.6f}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _sidecar_payload(spec: DamageSpec, record: DamageRecord) -> dict:
    return {
        "rate": spec.damage_rate,
        "seed": spec.seed,
        "regions": [
            {"center": center.tolist(), "removed": idx.tolist()}
            for center, idx in zip(record.region_centers, record.region_indices)
        ],
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def damage_batch(dir_in, dir_out, rates, seed: int = 0, *, jobs: int = 1) -> Path:
    """Damage every loadable cloud in `dir_in` at each rate; returns the manifest path.

    Per output: a damaged cloud file plus a JSON sidecar. Unreadable inputs are
    logged, skipped, and recorded in the manifest. Identical seeds give
    identical bytes regardless of `jobs`.
    """
    dir_in, dir_out = Path(dir_in), Path(dir_out)
    dir_out.mkdir(parents=True, exist_ok=True)
    inputs = sorted(p for p in dir_in.iterdir() if p.suffix.lower() in _SUPPORTED_SUFFIXES)

    def one(path: Path, rate: float) -> dict:
        loaded = load_cloud(path)
        spec = DamageSpec(rate, derive_file_seed(seed, path.name, rate))
        record = damage(loaded.cloud, spec)
        out_name = f"{path.stem}__dr{round(rate * 100):02d}{path.suffix}"
        out_path = dir_out / out_name
        save_cloud(record.damaged, out_path, loaded.format)
        sidecar = out_path.with_suffix(out_path.suffix + ".json")
        sidecar.write_text(json.dumps(_sidecar_payload(spec, record)) + "\n")
        return {
            "input": path.name,
            "output": out_name,
            "rate": rate,
            "checksum": _sha256(out_path),
        }

    tasks = [(path, rate) for path in inputs for rate in rates]
    entries: list[dict] = []
    errors: list[dict] = []

    def run(task):
        path, rate = task
        try:
            return one(path, rate), None
        except Exception as exc:  # record and continue: batch ergonomics
            return None, {"input": path.name, "rate": rate, "error": str(exc)}

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    for entry, err in results:
        if entry is not None:
            entries.append(entry)
        else:
            log.warning("augment: skipped %s at rate %s: %s", err["input"], err["rate"], err["error"])
            errors.append(err)

    entries.sort(key=lambda e: (e["input"], e["rate"]))
    manifest = {"seed": seed, "outputs": entries, "errors": errors}
    manifest_path = dir_out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path
