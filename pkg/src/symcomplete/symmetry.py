"""Symmetry-plane candidates from direction statistics, scored by balance."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geometry import (
    DegenerateGeometryError,
    GeometryError,
    Plane,
    PointCloud,
    SpatialIndex,
    build_index,
    reflect,
)
from .metrics import BalanceConfig, balanced_distance
from .normals import NormalParams, estimate_normals

__all__ = [
    "DirectionProvenance",
    "DirectionSet",
    "PCAResult",
    "CandidateSource",
    "SymmetryCandidate",
    "ConvexHullResult",
    "pca",
    "convex_hull",
    "normal_direction_candidates",
    "hull_direction_candidates",
    "score_candidates",
    "select_best_candidate",
]

log = logging.getLogger(__name__)


class DirectionProvenance(Enum):
    NORMALS = "normals"
    HULL_EDGES = "hull-edges"


class CandidateSource(str, Enum):
    NORMALS_PCA = "normals-pca"
    HULL_PCA = "hull-pca"


@dataclass(frozen=True)
class DirectionSet:
    """Unit directions on the sphere; hull-edge sets carry both signs of each edge."""

    directions: np.ndarray
    provenance: DirectionProvenance

    def __post_init__(self) -> None:
        dirs = np.array(self.directions, dtype=np.float64, copy=True)
        if dirs.ndim != 2 or dirs.shape[1] != 3:
            raise GeometryError(f"directions must have shape (m, 3), got {dirs.shape}")
        lengths = np.linalg.norm(dirs, axis=1)
        if dirs.shape[0] and np.max(np.abs(lengths - 1.0)) > 1e-9:
            raise GeometryError("directions must be unit vectors")
        dirs.setflags(write=False)
        object.__setattr__(self, "directions", dirs)


@dataclass(frozen=True)
class PCAResult:
    """Eigenvalues (descending) and matching orthonormal directions (rows)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class SymmetryCandidate:
    plane: Plane
    source: CandidateSource
    score: float | None = None  # balanced distance once scored; lower is better


@dataclass(frozen=True)
class ConvexHullResult:
    vertex_indices: np.ndarray  # indices into the input cloud
    edges: np.ndarray           # (e, 2) index pairs, each sorted, unique
    simplices: np.ndarray       # (f, 3) triangular facets


def pca(directions) -> PCAResult:
    """Eigen-decomposition of the mean-centered covariance of direction points."""
    dirs = directions.directions if isinstance(directions, DirectionSet) else np.asarray(
        directions, dtype=np.float64
    )
    if dirs.shape[0] < 3:
        raise GeometryError(f"pca: need at least 3 directions, got {dirs.shape[0]}")
    centered = dirs - dirs.mean(axis=0)
    cov = centered.T @ centered / dirs.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1].T
    if eigvals[0] <= 1e-18 or eigvals[1] <= 1e-12 * eigvals[0]:
        raise DegenerateGeometryError("degenerate direction distribution")
    return PCAResult(eigvals, eigvecs)


def convex_hull(cloud: PointCloud) -> ConvexHullResult:
    """Quickhull-family hull of the cloud; fails on flat or linear input."""
    if len(cloud) < 4:
        raise GeometryError(f"convex_hull: need at least 4 points, got {len(cloud)}")
    try:
        hull = ConvexHull(cloud.points)
    except QhullError as exc:
        raise DegenerateGeometryError(
            "convex hull is not 3-dimensional (coplanar or collinear cloud)"
        ) from exc
    simplices = np.asarray(hull.simplices, dtype=np.intp)
    pairs = np.concatenate(
        [simplices[:, [0, 1]], simplices[:, [1, 2]], simplices[:, [0, 2]]], axis=0
    )
    pairs.sort(axis=1)
    edges = np.unique(pairs, axis=0)
    return ConvexHullResult(np.asarray(hull.vertices, dtype=np.intp), edges, simplices)


def _planes_from_pca(
    cloud: PointCloud, result: PCAResult, center, source: CandidateSource
) -> list[SymmetryCandidate]:
    # anchor: `center` slid along each normal to the midpoint of the cloud's
    # projection extent -- the 1-D analogue of the bounding-box centroid, so
    # the anchor inherits its robustness to localized damage for any normal
    center = np.asarray(center, dtype=np.float64)
    out = []
    for vec in result.eigenvectors:
        proj = cloud.points @ vec
        mid = 0.5 * (proj.max() + proj.min())
        anchor = center + (mid - float(center @ vec)) * vec
        out.append(SymmetryCandidate(Plane(anchor, vec), source))
    return out


def normal_direction_candidates(
    cloud: PointCloud, center, *, normal_params: NormalParams | None = None
) -> list[SymmetryCandidate]:
    """Three planes orthogonal to the principal directions of the normal set.

    Normals enter with both signs so the statistics do not depend on the
    orientation pass or the cloud's pose. Returns fewer (possibly zero)
    candidates when the distribution is degenerate, with a logged diagnostic.
    """
    if not cloud.has_normals:
        cloud = estimate_normals(cloud, normal_params)
    signed = np.concatenate([cloud.normals, -cloud.normals], axis=0)
    dirs = DirectionSet(signed, DirectionProvenance.NORMALS)
    try:
        result = pca(dirs)
    except DegenerateGeometryError as exc:
        log.warning("normal direction candidates unavailable: %s", exc)
        return []
    return _planes_from_pca(cloud, result, center, CandidateSource.NORMALS_PCA)


def hull_direction_candidates(cloud: PointCloud, center) -> list[SymmetryCandidate]:
    """Three planes orthogonal to the dominant hull-edge directions.

    Every hull edge contributes its unit direction with both signs, one sample
    per edge regardless of edge length.
    """
    hull = convex_hull(cloud)
    vecs = cloud.points[hull.edges[:, 1]] - cloud.points[hull.edges[:, 0]]
    lengths = np.linalg.norm(vecs, axis=1)
    keep = lengths > 1e-12
    dirs = vecs[keep] / lengths[keep, None]
    signed = np.concatenate([dirs, -dirs], axis=0)
    result = pca(DirectionSet(signed, DirectionProvenance.HULL_EDGES))
    return _planes_from_pca(cloud, result, center, CandidateSource.HULL_PCA)


def score_candidates(
    cloud: PointCloud,
    candidates: list[SymmetryCandidate],
    cfg: BalanceConfig,
    *,
    index: SpatialIndex | None = None,
) -> list[SymmetryCandidate]:
    """Balanced distance of the cloud against its mirror image, per candidate."""
    idx = index or build_index(cloud)
    self_counts = np.asarray(idx.cube_count(cloud.points, cfg.cube_side))
    scored = []
    for cand in candidates:
        mirrored = reflect(cloud, cand.plane)
        bd = balanced_distance(
            cloud, mirrored, cfg, index_a=idx, self_counts_a=self_counts
        )
        scored.append(replace(cand, score=bd))
    return scored


def select_best_candidate(
    cloud: PointCloud,
    candidates: list[SymmetryCandidate],
    cfg: BalanceConfig,
    *,
    index: SpatialIndex | None = None,
) -> SymmetryCandidate:
    """Lowest balanced distance wins; ties keep the earliest candidate."""
    if not candidates:
        raise GeometryError("select_best_candidate: no candidates")
    scored = score_candidates(cloud, candidates, cfg, index=index)
    best = scored[0]
    for cand in scored[1:]:
        if cand.score < best.score:
            best = cand
    return best
