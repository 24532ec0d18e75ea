"""Surface-normal estimation by local plane fitting, with consistent orientation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from .geometry import GeometryError, PointCloud, SpatialIndex, _as_vec3

__all__ = [
    "Viewpoint",
    "Axis",
    "OrientationReference",
    "NormalParams",
    "NormalDiagnostics",
    "estimate_normals",
    "orient_normals",
]

log = logging.getLogger(__name__)

# relative eigenvalue gap below which the two smallest eigenvalues count as tied
_TIE_REL = 1e-6


@dataclass(frozen=True)
class Viewpoint:
    """Orient normals toward a sensor position."""

    position: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _as_vec3(self.position, "position"))


@dataclass(frozen=True)
class Axis:
    """Orient normals into the half-space of a fixed unit direction."""

    direction: np.ndarray

    def __post_init__(self) -> None:
        d = _as_vec3(self.direction, "direction")
        if abs(float(np.linalg.norm(d)) - 1.0) > 1e-6:
            raise GeometryError("orientation axis must be a unit vector")
        object.__setattr__(self, "direction", d)


OrientationReference = Union[Viewpoint, Axis]

DEFAULT_AXIS = Axis(np.array([0.0, 0.0, 1.0]))


@dataclass(frozen=True)
class NormalParams:
    neighbor_count: int = 30
    orientation: OrientationReference = DEFAULT_AXIS

    def __post_init__(self) -> None:
        if self.neighbor_count < 3:
            raise GeometryError(f"neighbor_count must be >= 3, got {self.neighbor_count}")


@dataclass(frozen=True)
class NormalDiagnostics:
    """Indices of points whose local fit was not a clean plane."""

    degenerate: np.ndarray      # neighborhood collapsed to (nearly) a single point
    low_confidence: np.ndarray  # locally linear data: smallest eigenvalues tied


def _lex_largest_perp(direction: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to `direction` with lexicographically largest components."""
    for basis in np.eye(3):
        cand = basis - (basis @ direction) * direction
        norm = float(np.linalg.norm(cand))
        if norm > 1e-9:
            cand = cand / norm
            lead = cand[np.argmax(np.abs(cand) > 1e-12)]
            return cand if lead > 0 else -cand
    raise GeometryError("cannot build a perpendicular to a zero direction")


def estimate_normals(
    cloud: PointCloud,
    params: NormalParams | None = None,
    *,
    return_diagnostics: bool = False,
):
    """Attach per-point unit normals from the smallest covariance eigenvector.

    Each point's neighborhood is itself plus its `neighbor_count - 1` nearest
    neighbors. Deterministic for a fixed point order and parameters.
    """
    params = params or NormalParams()
    k = params.neighbor_count
    n = len(cloud)
    if n <= k:
        raise GeometryError(f"estimate_normals: need more than {k} points, got {n}")

    pts = cloud.points
    index = SpatialIndex(pts)
    _, idx = index.nearest(pts, k=k)
    neighborhoods = pts[idx]                      # (n, k, 3)
    centers = neighborhoods.mean(axis=1)
    centered = neighborhoods - centers[:, None, :]
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)        # ascending eigenvalues

    normals = eigvecs[:, :, 0].copy()

    scale = max(float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))), 1e-30)
    degenerate = eigvals[:, 2] <= (1e-9 * scale) ** 2
    if degenerate.any():
        normals[degenerate] = (0.0, 0.0, 1.0)
        log.warning("estimate_normals: %d degenerate neighborhoods, normals set to +z",
                    int(degenerate.sum()))

    gap = eigvals[:, 1] - eigvals[:, 0]
    tied = ~degenerate & (gap <= _TIE_REL * np.maximum(eigvals[:, 2], 1e-300))
    for i in np.flatnonzero(tied):
        normals[i] = _lex_largest_perp(eigvecs[i, :, 2])

    normals /= np.linalg.norm(normals, axis=1)[:, None]
    out = orient_normals(PointCloud(pts, normals), params.orientation)
    if return_diagnostics:
        diag = NormalDiagnostics(np.flatnonzero(degenerate), np.flatnonzero(tied))
        return out, diag
    return out


def orient_normals(cloud: PointCloud, reference: OrientationReference) -> PointCloud:
    """Flip normals so they consistently face the reference; idempotent."""
    if not cloud.has_normals:
        raise GeometryError("orient_normals: cloud has no normals")
    if isinstance(reference, Viewpoint):
        toward = reference.position - cloud.points
        dots = np.einsum("ij,ij->i", cloud.normals, toward)
    elif isinstance(reference, Axis):
        dots = cloud.normals @ reference.direction
    else:
        raise GeometryError(f"unknown orientation reference: {reference!r}")
    flip = dots < 0
    if not flip.any():
        return cloud
    normals = cloud.normals.copy()
    normals[flip] *= -1.0
    return PointCloud(cloud.points, normals)
