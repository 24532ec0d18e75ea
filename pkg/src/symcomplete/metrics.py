"""Cloud quality measures: balance statistics, Chamfer distance, plane accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    BoundingBox,
    GeometryError,
    Plane,
    PointCloud,
    SpatialIndex,
    average_nn_distance,
    build_index,
)

__all__ = [
    "BalanceConfig",
    "default_balance_config",
    "is_balanced",
    "balance_counts",
    "balanced_point_mask",
    "balanced_distance",
    "chamfer_distance",
    "SymmetryEvalConfig",
    "default_symmetry_eval_config",
    "plane_patch_distance",
    "symmetry_correct",
    "accuracy",
]


@dataclass(frozen=True)
class BalanceConfig:
    """Cube side and tolerance used by the balance test.

    A point is balanced when the counts of the two clouds inside its axis-aligned
    cube differ by at most `epsilon` relatively; an empty cube is unbalanced.
    """

    cube_side: float
    epsilon: float = 0.3

    def __post_init__(self) -> None:
        if not (self.cube_side > 0 and np.isfinite(self.cube_side)):
            raise GeometryError(f"cube_side must be positive, got {self.cube_side}")
        if not (0.0 < self.epsilon < 1.0):
            raise GeometryError(f"epsilon must be in (0, 1), got {self.epsilon}")


def default_balance_config(
    cloud: PointCloud, *, epsilon: float = 0.3, side_factor: float = 4.0
) -> BalanceConfig:
    """Cube side tied to the cloud's sampling density so the test is scale-free."""
    return BalanceConfig(side_factor * average_nn_distance(cloud), epsilon)


def balance_counts(
    points, index_a: SpatialIndex, index_b: SpatialIndex, cfg: BalanceConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point cube occupancy counts against both indexed clouds."""
    pts = np.asarray(points, dtype=np.float64)
    a = np.asarray(index_a.cube_count(pts, cfg.cube_side))
    b = np.asarray(index_b.cube_count(pts, cfg.cube_side))
    return a, b


def is_balanced(
    point, index_a: SpatialIndex, index_b: SpatialIndex, cfg: BalanceConfig
) -> tuple[bool, int, int]:
    """Balance test for one point; returns (balanced, count_a, count_b)."""
    a, b = balance_counts(np.asarray(point, dtype=np.float64)[None, :], index_a, index_b, cfg)
    a0, b0 = int(a[0]), int(b[0])
    total = a0 + b0
    balanced = total > 0 and abs(a0 - b0) <= cfg.epsilon * total
    return balanced, a0, b0


def balanced_point_mask(
    points, index_a: SpatialIndex, index_b: SpatialIndex, cfg: BalanceConfig
) -> np.ndarray:
    a, b = balance_counts(points, index_a, index_b, cfg)
    total = a + b
    return (total > 0) & (np.abs(a - b) <= cfg.epsilon * total)


def balanced_distance(
    cloud_a: PointCloud,
    cloud_b: PointCloud,
    cfg: BalanceConfig,
    *,
    index_a: SpatialIndex | None = None,
    index_b: SpatialIndex | None = None,
    self_counts_a: np.ndarray | None = None,
) -> float:
    """IoU-style mismatch in [0, 1]: 1 minus the balanced fraction of both clouds.

    `self_counts_a` may carry precomputed cube counts of cloud_a's points
    against cloud_a itself, which callers scoring many mirrors of one cloud can
    reuse.
    """
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise GeometryError("balanced_distance: empty point cloud")
    idx_a = index_a or build_index(cloud_a)
    idx_b = index_b or build_index(cloud_b)
    aa = (
        np.asarray(self_counts_a)
        if self_counts_a is not None
        else np.asarray(idx_a.cube_count(cloud_a.points, cfg.cube_side))
    )
    ab = np.asarray(idx_b.cube_count(cloud_a.points, cfg.cube_side))
    ba, bb = balance_counts(cloud_b.points, idx_a, idx_b, cfg)

    def count_balanced(a: np.ndarray, b: np.ndarray) -> int:
        total = a + b
        return int(((total > 0) & (np.abs(a - b) <= cfg.epsilon * total)).sum())

    balanced = count_balanced(aa, ab) + count_balanced(ba, bb)
    return 1.0 - balanced / (len(cloud_a) + len(cloud_b))


def chamfer_distance(cloud_a: PointCloud, cloud_b: PointCloud) -> float:
    """Sum of both directed mean nearest-neighbor distances (plain, not squared)."""
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise GeometryError("chamfer_distance: empty point cloud")
    idx_a = build_index(cloud_a)
    idx_b = build_index(cloud_b)
    d_ab, _ = idx_b.nearest(cloud_a.points, k=1)
    d_ba, _ = idx_a.nearest(cloud_b.points, k=1)
    return float(np.mean(d_ab) + np.mean(d_ba))


@dataclass(frozen=True)
class SymmetryEvalConfig:
    angle_threshold: float = 0.2   # radians
    center_threshold: float = 0.05  # model units

    def __post_init__(self) -> None:
        if self.angle_threshold <= 0:
            raise GeometryError("angle_threshold must be positive")
        if self.center_threshold <= 0:
            raise GeometryError("center_threshold must be positive")


def default_symmetry_eval_config(
    bounds: BoundingBox, *, angle_threshold: float = 0.2, diag_fraction: float = 20.0
) -> SymmetryEvalConfig:
    """Center threshold tied to the object's bounding-box diagonal."""
    return SymmetryEvalConfig(angle_threshold, bounds.diagonal / diag_fraction)


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.zeros(3)
    ref[int(np.argmin(np.abs(normal)))] = 1.0
    u = np.cross(normal, ref)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return u, v


def plane_patch_distance(point, plane: Plane, bounds: BoundingBox) -> float:
    """Distance from `point` to the plane patch covering the object's footprint.

    The projection onto the plane is clamped, in plane coordinates, to the
    rectangle spanned by the bounding-box corners projected onto the plane.
    """
    p = np.asarray(point, dtype=np.float64).reshape(3)
    u, v = _plane_basis(plane.normal)
    corners = bounds.corners() - plane.anchor
    cu, cv = corners @ u, corners @ v
    q = plane.project(p) - plane.anchor
    qu = np.clip(q @ u, cu.min(), cu.max())
    qv = np.clip(q @ v, cv.min(), cv.max())
    clamped = plane.anchor + qu * u + qv * v
    return float(np.linalg.norm(p - clamped))


def symmetry_correct(
    pred: Plane, gt: Plane, gt_bounds: BoundingBox, cfg: SymmetryEvalConfig
) -> bool:
    """Accept a predicted plane when its normal and position both match the truth.

    The normal test ignores sign; the position test measures the predicted
    anchor against the ground-truth plane patch.
    """
    cos = abs(float(pred.normal @ gt.normal))
    angle = float(np.arccos(np.clip(cos, -1.0, 1.0)))
    if angle > cfg.angle_threshold:
        return False
    return plane_patch_distance(pred.anchor, gt, gt_bounds) <= cfg.center_threshold


def accuracy(
    preds: list[Plane],
    gt_plane_sets: list[tuple[Plane, ...]],
    gt_bounds: list[BoundingBox],
    cfg: SymmetryEvalConfig,
) -> float:
    """Fraction of objects whose prediction matches at least one true plane."""
    if not (len(preds) == len(gt_plane_sets) == len(gt_bounds)):
        raise GeometryError(
            "accuracy: preds, ground-truth sets and bounds must have equal lengths "
            f"({len(preds)}, {len(gt_plane_sets)}, {len(gt_bounds)})"
        )
    if not preds:
        raise GeometryError("accuracy: empty evaluation set")
    hits = 0
    for pred, planes, bounds in zip(preds, gt_plane_sets, gt_bounds):
        if pred is not None and any(
            symmetry_correct(pred, gt, bounds, cfg) for gt in planes
        ):
            hits += 1
    return hits / len(preds)
