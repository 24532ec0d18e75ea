"""Geometric primitives: point clouds, planes, rigid transforms, spatial queries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "GeometryError",
    "DegenerateGeometryError",
    "PointCloud",
    "Plane",
    "RigidTransform",
    "BoundingBox",
    "SpatialIndex",
    "bounding_box",
    "bbox_centroid",
    "mass_center",
    "reflect",
    "reflection_matrix",
    "apply_transform",
    "build_index",
    "average_nn_distance",
]

# |norm - 1| tolerated on user-supplied unit vectors before we refuse them
UNIT_TOL = 1e-6


class GeometryError(ValueError):
    """A geometric precondition was violated."""


class DegenerateGeometryError(GeometryError):
    """Input collapses to a lower dimension than the operation requires."""


def _as_vec3(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, copy=True).reshape(-1)
    if arr.shape != (3,):
        raise GeometryError(f"{name} must be a 3-vector, got shape {np.shape(value)}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, copy=True)
    if arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr).all(axis=1))[0, 0])
        raise GeometryError(f"{name} contains non-finite values (first at row {bad})")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PointCloud:
    """Immutable ordered set of 3D points with optional unit surface normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = _as_matrix(self.points, "points")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _as_matrix(self.normals, "normals")
            if nrm.shape[0] != pts.shape[0]:
                raise GeometryError(
                    f"normals length {nrm.shape[0]} != points length {pts.shape[0]}"
                )
            lengths = np.linalg.norm(nrm, axis=1)
            if nrm.shape[0] and np.max(np.abs(lengths - 1.0)) > UNIT_TOL:
                bad = int(np.argmax(np.abs(lengths - 1.0)))
                raise GeometryError(
                    f"normals must be unit length (row {bad} has norm {lengths[bad]:.6g})"
                )
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def with_normals(self, normals) -> "PointCloud":
        return PointCloud(self.points, normals)

    def without_normals(self) -> "PointCloud":
        return PointCloud(self.points) if self.has_normals else self

    def take(self, indices) -> "PointCloud":
        """Subset of the cloud at `indices`, preserving the given order."""
        idx = np.asarray(indices)
        nrm = self.normals[idx] if self.has_normals else None
        return PointCloud(self.points[idx], nrm)


@dataclass(frozen=True)
class Plane:
    """Plane through `anchor` with unit `normal`."""

    anchor: np.ndarray
    normal: np.ndarray

    def __post_init__(self) -> None:
        anchor = _as_vec3(self.anchor, "anchor")
        normal = np.array(_as_vec3(self.normal, "normal"))
        length = float(np.linalg.norm(normal))
        if abs(length - 1.0) > UNIT_TOL:
            raise GeometryError(f"plane normal must be unit length, got norm {length:.6g}")
        normal /= length
        normal.setflags(write=False)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "normal", normal)

    @classmethod
    def from_point_normal(cls, point, direction) -> "Plane":
        """Build a plane from any nonzero normal direction (normalized here)."""
        d = np.asarray(direction, dtype=np.float64).reshape(3)
        length = float(np.linalg.norm(d))
        if length < 1e-12 or not np.isfinite(length):
            raise GeometryError("plane normal direction must be nonzero and finite")
        return cls(point, d / length)

    @property
    def offset(self) -> float:
        """Signed distance of the plane from the origin along its normal."""
        return float(self.anchor @ self.normal)

    def signed_distance(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.anchor) @ self.normal

    def project(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        d = self.signed_distance(pts)
        return pts - np.multiply.outer(d, self.normal)

    def flipped(self) -> "Plane":
        return Plane(self.anchor, -self.normal)


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion x -> R x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.array(self.rotation, dtype=np.float64, copy=True)
        if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
            raise GeometryError("rotation must be a finite 3x3 matrix")
        ortho_err = float(np.max(np.abs(rot.T @ rot - np.eye(3))))
        if ortho_err > UNIT_TOL:
            raise GeometryError(f"rotation is not orthonormal (error {ortho_err:.3g})")
        det = float(np.linalg.det(rot))
        if abs(det - 1.0) > UNIT_TOL:
            raise GeometryError(f"rotation must have determinant +1, got {det:.6g}")
        rot.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", _as_vec3(self.translation, "translation"))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self @ other)(x) = self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; depends on the cloud's pose, not just its shape."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self) -> None:
        lo = _as_vec3(self.min_corner, "min_corner")
        hi = _as_vec3(self.max_corner, "max_corner")
        if np.any(lo > hi):
            raise GeometryError(f"min_corner {lo} exceeds max_corner {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max_corner - self.min_corner))

    def corners(self) -> np.ndarray:
        """All 8 corners as combinations of the extreme coordinates."""
        lo, hi = self.min_corner, self.max_corner
        out = np.empty((8, 3))
        for i in range(8):
            out[i] = [hi[k] if (i >> k) & 1 else lo[k] for k in range(3)]
        return out

    def contains(self, points, atol: float = 0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return np.all(
            (pts >= self.min_corner - atol) & (pts <= self.max_corner + atol), axis=-1
        )


class SpatialIndex:
    """kd-tree over a fixed point set; read-only, safe for concurrent queries."""

    def __init__(self, points) -> None:
        if isinstance(points, PointCloud):
            points = points.points
        pts = _as_matrix(points, "points")
        if pts.shape[0] == 0:
            raise GeometryError("cannot index an empty point cloud")
        self._points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return int(self._points.shape[0])

    @property
    def points(self) -> np.ndarray:
        return self._points

    def nearest(self, query, k: int = 1):
        """Distances and indices of the k nearest points (scipy shape semantics)."""
        return self._tree.query(np.asarray(query, dtype=np.float64), k=k)

    def within_radius(self, query, radius: float):
        """Indices of points within Euclidean `radius` of `query`."""
        return self._tree.query_ball_point(
            np.asarray(query, dtype=np.float64), radius
        )

    def cube_count(self, centers, side: float):
        """Number of points inside the axis-aligned cube(s) of side `side`."""
        if side <= 0:
            raise GeometryError(f"cube side must be positive, got {side}")
        return self._tree.query_ball_point(
            np.asarray(centers, dtype=np.float64), side / 2.0, p=np.inf,
            return_length=True,
        )

    def cube_indices(self, center, side: float) -> np.ndarray:
        """Sorted indices of points inside the axis-aligned cube around `center`."""
        if side <= 0:
            raise GeometryError(f"cube side must be positive, got {side}")
        idx = self._tree.query_ball_point(
            np.asarray(center, dtype=np.float64), side / 2.0, p=np.inf
        )
        return np.sort(np.asarray(idx, dtype=np.intp))


def _require_points(cloud: PointCloud, minimum: int, op: str) -> None:
    if len(cloud) < minimum:
        if minimum == 1:
            raise GeometryError(f"{op}: empty point cloud")
        raise GeometryError(f"{op}: need at least {minimum} points, got {len(cloud)}")


def bounding_box(cloud: PointCloud) -> BoundingBox:
    """Componentwise extremes of the cloud."""
    _require_points(cloud, 1, "bounding_box")
    return BoundingBox(cloud.points.min(axis=0), cloud.points.max(axis=0))


def bbox_centroid(box: BoundingBox) -> np.ndarray:
    """Midpoint of the box; less sensitive to localized missing regions than the mean."""
    return (box.min_corner + box.max_corner) / 2.0


def mass_center(cloud: PointCloud) -> np.ndarray:
    _require_points(cloud, 1, "mass_center")
    return cloud.points.mean(axis=0)


def reflect(cloud: PointCloud, plane: Plane) -> PointCloud:
    """Mirror the cloud about `plane`; normals are reflected as free vectors."""
    d = (cloud.points - plane.anchor) @ plane.normal
    pts = cloud.points - 2.0 * np.multiply.outer(d, plane.normal)
    nrm = None
    if cloud.has_normals:
        dn = cloud.normals @ plane.normal
        nrm = cloud.normals - 2.0 * np.multiply.outer(dn, plane.normal)
    return PointCloud(pts, nrm)


def reflection_matrix(plane: Plane) -> tuple[np.ndarray, np.ndarray]:
    """Linear part H and offset s of the mirror map x -> H x + s (det H = -1)."""
    n = plane.normal
    lin = np.eye(3) - 2.0 * np.outer(n, n)
    return lin, 2.0 * plane.offset * n


def apply_transform(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    pts = transform.apply(cloud.points)
    nrm = transform.rotate(cloud.normals) if cloud.has_normals else None
    return PointCloud(pts, nrm)


def build_index(cloud: PointCloud) -> SpatialIndex:
    _require_points(cloud, 1, "build_index")
    return SpatialIndex(cloud)


def average_nn_distance(cloud: PointCloud) -> float:
    """Mean distance from each point to its nearest other point (sampling scale)."""
    _require_points(cloud, 2, "average_nn_distance")
    dists, _ = cKDTree(cloud.points).query(cloud.points, k=2)
    return float(dists[:, 1].mean())
