"""Deterministic synthetic shapes with known symmetry planes, for tests and benchmarks.

Symmetric kinds are sampled mirror-paired: base samples are folded onto one
side of the planted plane and unioned with their exact reflections, so the
ground-truth plane holds exactly, not just statistically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import (
    BoundingBox,
    GeometryError,
    Plane,
    PointCloud,
    RigidTransform,
)

__all__ = [
    "ShapeKind",
    "ShapeSpec",
    "generate",
    "ground_truth_planes",
    "save_manifest",
    "load_manifest",
    "save_plane_set",
]

_CANONICAL_PLANE = Plane(np.zeros(3), np.array([1.0, 0.0, 0.0]))


class ShapeKind(str, Enum):
    BOX = "box"
    WEDGE = "wedge"
    ELLIPSOID = "ellipsoid"
    COMPOSITE_SYMMETRIC = "composite-symmetric"
    ASYMMETRIC_BLOB = "asymmetric-blob"


@dataclass(frozen=True)
class ShapeSpec:
    kind: ShapeKind
    point_count: int = 2048
    plane: Plane = _CANONICAL_PLANE      # planted symmetry; ignored for blobs
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.point_count < 100:
            raise GeometryError(f"point_count must be >= 100, got {self.point_count}")


# ------------------------------------------------------------------ samplers

def _sample_box(m: int, rng: np.random.Generator, half=(0.8, 0.5, 0.3)) -> np.ndarray:
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    faces = rng.choice(6, size=m, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(m, 2))
    pts = np.empty((m, 3))
    for f in range(6):
        sel = faces == f
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        others = [i for i in range(3) if i != axis]
        pts[sel, axis] = sign * half[axis]
        pts[sel, others[0]] = u[sel, 0] * half[others[0]]
        pts[sel, others[1]] = u[sel, 1] * half[others[1]]
    return pts


def _sample_triangle(m: int, rng: np.random.Generator, a, b, c) -> np.ndarray:
    r1 = np.sqrt(rng.uniform(size=m))[:, None]
    r2 = rng.uniform(size=m)[:, None]
    return (1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c


def _sample_wedge(m: int, rng: np.random.Generator) -> np.ndarray:
    # triangular prism: isoceles cross-section in xy, extruded along z
    a2, b2, c2 = np.array([-0.8, 0.0]), np.array([0.8, 0.0]), np.array([0.0, 0.9])
    h = 0.4
    tri_area = 0.5 * abs((b2 - a2)[0] * (c2 - a2)[1] - (b2 - a2)[1] * (c2 - a2)[0])
    sides = [(a2, b2), (b2, c2), (c2, a2)]
    side_areas = [np.linalg.norm(q - p) * 2 * h for p, q in sides]
    areas = np.array([tri_area, tri_area] + side_areas)
    which = rng.choice(5, size=m, p=areas / areas.sum())
    pts = np.empty((m, 3))
    for f in range(2):
        sel = which == f
        uv = _sample_triangle(int(sel.sum()), rng, a2, b2, c2)
        pts[sel, :2] = uv
        pts[sel, 2] = h if f == 0 else -h
    for s, (p, q) in enumerate(sides, start=2):
        sel = which == s
        k = int(sel.sum())
        t = rng.uniform(size=(k, 1))
        pts[sel, :2] = p + t * (q - p)
        pts[sel, 2] = rng.uniform(-h, h, size=k)
    return pts


def _sample_ellipsoid(m: int, rng: np.random.Generator, axes=(0.9, 0.6, 0.4)) -> np.ndarray:
    d = rng.normal(size=(m, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * np.asarray(axes)


def _sample_sphere(m: int, rng: np.random.Generator, center, radius: float) -> np.ndarray:
    d = rng.normal(size=(m, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return np.asarray(center) + radius * d


def _sample_composite(m: int, rng: np.random.Generator) -> np.ndarray:
    # body + one side lobe + an off-center fin; mirror pairing restores the
    # matching lobe, leaving exactly one symmetry plane
    n_body = int(0.55 * m)
    n_lobe = int(0.25 * m)
    n_fin = m - n_body - n_lobe
    body = _sample_ellipsoid(n_body, rng, axes=(0.7, 0.45, 0.35))
    lobe = _sample_sphere(n_lobe, rng, (0.55, 0.25, 0.1), 0.25)
    fin = _sample_box(n_fin, rng, half=(0.35, 0.12, 0.2)) + np.array([0.0, -0.5, -0.2])
    return np.vstack([body, lobe, fin])


def _sample_blob(m: int, rng: np.random.Generator) -> np.ndarray:
    # chiral helix of clusters with growing sizes: no reflection maps the
    # arrangement near itself, so mirror-based completion has nothing to grab
    clusters = 6
    weights = np.arange(1, clusters + 1) ** 2
    counts = np.floor(m * weights / weights.sum()).astype(int)
    counts[-1] += m - counts.sum()
    parts = []
    for c in range(clusters):
        angle = c * 1.9 + rng.uniform(-0.2, 0.2)
        center = np.array([0.7 * np.cos(angle), 0.7 * np.sin(angle), -0.6 + 0.24 * c])
        axes = (0.08 + 0.09 * c) * rng.uniform(0.6, 1.4, size=3)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        parts.append(_sample_ellipsoid(int(counts[c]), rng, axes=axes) @ q.T + center)
    return np.vstack(parts)


_SAMPLERS = {
    ShapeKind.BOX: _sample_box,
    ShapeKind.WEDGE: _sample_wedge,
    ShapeKind.ELLIPSOID: _sample_ellipsoid,
    ShapeKind.COMPOSITE_SYMMETRIC: _sample_composite,
    ShapeKind.ASYMMETRIC_BLOB: _sample_blob,
}


def _reflect_points(points: np.ndarray, plane: Plane) -> np.ndarray:
    d = (points - plane.anchor) @ plane.normal
    return points - 2.0 * d[:, None] * plane.normal


def _fold(points: np.ndarray, planes: list[Plane]) -> np.ndarray:
    """Fold points onto the positive side of every (orthogonal) plane."""
    out = points
    for plane in planes:
        d = (out - plane.anchor) @ plane.normal
        out = out - 2.0 * np.minimum(d, 0.0)[:, None] * plane.normal
    return out


def _expand_orbit(points: np.ndarray, planes: list[Plane]) -> np.ndarray:
    """Union of the points with all their images under the reflection group."""
    out = points
    for plane in planes:
        out = np.vstack([out, _reflect_points(out, plane)])
    return out


def _orbit_planes(spec: ShapeSpec) -> list[Plane]:
    """All symmetry planes the sample is built to satisfy exactly (canonical frame)."""
    planes = [spec.plane]
    if np.allclose(spec.plane.anchor, 0.0) and np.allclose(spec.plane.normal, (1.0, 0.0, 0.0)):
        extra = {
            ShapeKind.BOX: ((0, 1, 0), (0, 0, 1)),
            ShapeKind.WEDGE: ((0, 0, 1),),
            ShapeKind.ELLIPSOID: ((0, 1, 0), (0, 0, 1)),
            ShapeKind.COMPOSITE_SYMMETRIC: (),
        }[spec.kind]
        planes.extend(Plane(np.zeros(3), np.array(a, dtype=float)) for a in extra)
    return planes


def generate(spec: ShapeSpec) -> tuple[PointCloud, Plane | None]:
    """Deterministic fixture cloud and its planted plane (None for blobs).

    Symmetric kinds are built as reflection-group orbits, so every plane in
    ground_truth_planes maps the sample exactly onto itself; a remainder that
    does not fill a whole orbit is mirror-paired about the planted plane only.
    """
    rng = np.random.default_rng(spec.seed)
    sampler = _SAMPLERS[spec.kind]
    if spec.kind is ShapeKind.ASYMMETRIC_BLOB:
        pts = sampler(spec.point_count, rng)
        cloud = PointCloud(spec.pose.apply(pts))
        return cloud, None

    planes = _orbit_planes(spec)
    group = 2 ** len(planes)
    orbits, rest = divmod(spec.point_count, group)
    blocks = []
    if orbits:
        base = _fold(sampler(orbits, rng), planes)
        blocks.append(_expand_orbit(base, planes))
    pairs, odd = divmod(rest, 2)
    if pairs:
        base = _fold(sampler(pairs, rng), planes[:1])
        blocks.append(_expand_orbit(base, planes[:1]))
    if odd:
        blocks.append(spec.plane.project(sampler(1, rng)))
    pts = np.vstack(blocks)
    cloud = PointCloud(spec.pose.apply(pts))
    planted = Plane(
        spec.pose.apply(spec.plane.anchor), spec.pose.rotate(spec.plane.normal)
    )
    return cloud, planted


def ground_truth_planes(spec: ShapeSpec) -> tuple[Plane, ...]:
    """Every symmetry plane the generated shape has, pose-transformed.

    Extra coordinate planes apply only when the planted plane is the canonical
    one; folding about a custom plane destroys the samplers' axis symmetries.
    """
    if spec.kind is ShapeKind.ASYMMETRIC_BLOB:
        return ()
    return tuple(
        Plane(spec.pose.apply(p.anchor), spec.pose.rotate(p.normal))
        for p in _orbit_planes(spec)
    )


# ------------------------------------------------------------------ manifests

def _spec_to_dict(spec: ShapeSpec) -> dict:
    return {
        "kind": spec.kind.value,
        "point_count": spec.point_count,
        "plane": {"anchor": spec.plane.anchor.tolist(), "normal": spec.plane.normal.tolist()},
        "pose": {
            "rotation": spec.pose.rotation.tolist(),
            "translation": spec.pose.translation.tolist(),
        },
        "seed": spec.seed,
    }


def _spec_from_dict(d: dict) -> ShapeSpec:
    return ShapeSpec(
        kind=ShapeKind(d["kind"]),
        point_count=int(d["point_count"]),
        plane=Plane(d["plane"]["anchor"], d["plane"]["normal"]),
        pose=RigidTransform(d["pose"]["rotation"], d["pose"]["translation"]),
        seed=int(d["seed"]),
    )


def save_manifest(specs, path) -> None:
    Path(path).write_text(
        json.dumps({"fixtures": [_spec_to_dict(s) for s in specs]}, indent=2) + "\n"
    )


def load_manifest(path) -> list[ShapeSpec]:
    data = json.loads(Path(path).read_text())
    return [_spec_from_dict(d) for d in data["fixtures"]]


def save_plane_set(planes, bounds: BoundingBox, path) -> None:
    """Ground-truth plane-set JSON consumed by the symmetry evaluation mode."""
    payload = {
        "planes": [
            {"anchor": p.anchor.tolist(), "normal": p.normal.tolist()} for p in planes
        ],
        "bounds": {
            "min": bounds.min_corner.tolist(),
            "max": bounds.max_corner.tolist(),
        },
    }
    Path(path).write_text(json.dumps(payload) + "\n")
