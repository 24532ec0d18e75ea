"""End-to-end pipeline: detect the symmetry plane, align the mirror, fill holes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DegenerateGeometryError,
    GeometryError,
    Plane,
    PointCloud,
    SpatialIndex,
    average_nn_distance,
    bbox_centroid,
    bounding_box,
    build_index,
    reflect,
)
from .metrics import (
    BalanceConfig,
    balance_counts,
    balanced_distance,
    balanced_point_mask,
    chamfer_distance,
)
from .normals import NormalParams, estimate_normals
from .registration import (
    RegistrationError,
    RegistrationParams,
    RegistrationResult,
    derive_registration_params,
    refine_symmetry_plane,
)
from .symmetry import (
    SymmetryCandidate,
    hull_direction_candidates,
    normal_direction_candidates,
    score_candidates,
)

__all__ = [
    "MIN_CLOUD_SIZE",
    "CompletionConfig",
    "CompletionDiagnostics",
    "CompletionResult",
    "PlaneDetection",
    "detect_holes",
    "fill",
    "skip_validate",
    "detect_symmetry_plane",
    "complete",
]

log = logging.getLogger(__name__)

# below this, neighborhood statistics are too thin for detection to mean anything
MIN_CLOUD_SIZE = 100

# refinement restarts from lower-ranked candidates while the best balanced
# distance stays above this (heavy-damage rescue), up to the attempt cap
_REFINE_GOOD_ENOUGH = 0.3
_REFINE_ATTEMPTS = 3


@dataclass(frozen=True)
class CompletionConfig:
    """Pipeline knobs; balance and registration derive from point spacing when None."""

    balance: BalanceConfig | None = None
    registration: RegistrationParams | None = None
    normal_params: NormalParams = field(default_factory=NormalParams)
    skip_threshold: float = 4.0     # scaled Chamfer units
    seed: int = 0
    passes: int = 1
    balance_epsilon: float = 0.3    # used when balance is None
    cube_side_factor: float = 4.0   # used when balance is None

    def __post_init__(self) -> None:
        if self.skip_threshold < 0:
            raise GeometryError("skip_threshold must be non-negative")
        if self.passes < 1:
            raise GeometryError("passes must be at least 1")


@dataclass(frozen=True)
class PlaneDetection:
    """Detected plane plus everything the selection looked at."""

    plane: Plane
    source: str                                    # "refined" or "initial-candidate"
    candidates: tuple[SymmetryCandidate, ...]       # all scored candidates
    registration: RegistrationResult | None
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class CompletionDiagnostics:
    candidate_scores: tuple[tuple[str, tuple[float, float, float], float], ...]
    plane_source: str
    registration_fitness: float | None
    registration_rmse: float | None
    scaled_chamfer: float | None
    added_count: int
    passes_run: int
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "candidates": [
                {"source": src, "normal": list(normal), "balanced_distance": score}
                for src, normal, score in self.candidate_scores
            ],
            "plane_source": self.plane_source,
            "registration_fitness": self.registration_fitness,
            "registration_rmse": self.registration_rmse,
            "scaled_chamfer": self.scaled_chamfer,
            "added_count": self.added_count,
            "passes_run": self.passes_run,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class CompletionResult:
    completed: PointCloud
    added_points: PointCloud
    plane: Plane | None
    skipped: bool
    diagnostics: CompletionDiagnostics


def detect_holes(
    cloud: PointCloud,
    mirrored: PointCloud,
    cfg: BalanceConfig,
    *,
    index: SpatialIndex | None = None,
    mirror_index: SpatialIndex | None = None,
) -> PointCloud:
    """Mirror points sitting where the mirror outnumbers the original cloud.

    A mirrored point belongs to a hole when its cube neighborhood is unbalanced
    and the mirror-side count strictly exceeds the original-side count.
    """
    idx_p = index or build_index(cloud)
    idx_m = mirror_index or build_index(mirrored)
    balanced = balanced_point_mask(mirrored.points, idx_p, idx_m, cfg)
    a, b = balance_counts(mirrored.points, idx_p, idx_m, cfg)
    hole_mask = ~balanced & (b > a)
    return mirrored.take(np.flatnonzero(hole_mask))


def fill(cloud: PointCloud, holes: PointCloud) -> PointCloud:
    """Concatenate hole points after the original cloud, preserving order."""
    if len(holes) == 0:
        return cloud
    points = np.vstack([cloud.points, holes.points])
    normals = None
    if cloud.has_normals and holes.has_normals:
        normals = np.vstack([cloud.normals, holes.normals])
    return PointCloud(points, normals)


def skip_validate(cloud: PointCloud, completed: PointCloud, threshold: float) -> bool:
    """True when the completion stays close to the input in sampling-scale units."""
    spacing = average_nn_distance(cloud)
    return chamfer_distance(cloud, completed) / spacing <= threshold


def _resolve_configs(
    cloud: PointCloud, cfg: CompletionConfig, spacing: float
) -> tuple[BalanceConfig, RegistrationParams]:
    balance = cfg.balance or BalanceConfig(
        cfg.cube_side_factor * spacing, cfg.balance_epsilon
    )
    registration = cfg.registration or derive_registration_params(spacing)
    return balance, registration


def detect_symmetry_plane(
    cloud: PointCloud, cfg: CompletionConfig | None = None, *, refine: bool = True
) -> PlaneDetection:
    """Candidate generation, balanced-distance selection, registration refinement.

    Raises DegenerateGeometryError when no candidate generator produces a plane.
    """
    cfg = cfg or CompletionConfig()
    work = cloud if cloud.has_normals else estimate_normals(cloud, cfg.normal_params)
    spacing = average_nn_distance(work)
    balance, reg_params = _resolve_configs(work, cfg, spacing)
    center = bbox_centroid(bounding_box(work))

    notes: list[str] = []
    candidates: list[SymmetryCandidate] = []
    normal_cands = normal_direction_candidates(work, center)
    if normal_cands:
        candidates.extend(normal_cands)
    else:
        notes.append("normal-direction candidates unavailable (degenerate distribution)")
    try:
        candidates.extend(hull_direction_candidates(work, center))
    except (DegenerateGeometryError, GeometryError) as exc:
        notes.append(f"hull-direction candidates unavailable: {exc}")
    if not candidates:
        raise DegenerateGeometryError(
            "no symmetry plane candidates available: " + "; ".join(notes)
        )

    index = build_index(work)
    scored = score_candidates(work, candidates, balance, index=index)
    ranked = sorted(range(len(scored)), key=lambda i: (scored[i].score, i))
    best = scored[ranked[0]]

    plane = best.plane
    score = best.score
    source = "initial-candidate"
    registration = None
    if refine:
        # refinement must beat the candidate it started from on balanced
        # distance; further candidates are tried only while the result is poor
        for attempt, idx in enumerate(ranked[:_REFINE_ATTEMPTS]):
            if attempt > 0 and score <= _REFINE_GOOD_ENOUGH:
                break
            try:
                refined, reg = refine_symmetry_plane(
                    work,
                    scored[idx].plane,
                    reg_params,
                    seed=cfg.seed,
                    use_global=attempt == 0,
                )
            except (RegistrationError, GeometryError) as exc:
                notes.append(f"refinement attempt {attempt} failed: {exc}")
                log.warning("plane refinement failed: %s", exc)
                continue
            bd = balanced_distance(
                work, reflect(work, refined), balance, index_a=index
            )
            if bd < score:
                plane, score, registration, source = refined, bd, reg, "refined"
    return PlaneDetection(plane, source, tuple(scored), registration, tuple(notes))


def _empty_like(cloud: PointCloud) -> PointCloud:
    normals = np.zeros((0, 3)) if cloud.has_normals else None
    return PointCloud(np.zeros((0, 3)), normals)


def _skipped_result(
    cloud: PointCloud,
    plane: Plane | None,
    diag: CompletionDiagnostics,
) -> CompletionResult:
    return CompletionResult(
        completed=cloud,
        added_points=_empty_like(cloud),
        plane=plane,
        skipped=True,
        diagnostics=diag,
    )


def _candidate_rows(
    candidates: tuple[SymmetryCandidate, ...]
) -> tuple[tuple[str, tuple[float, float, float], float], ...]:
    return tuple(
        (cand.source.value, tuple(cand.plane.normal.tolist()), float(cand.score))
        for cand in candidates
    )


def complete(cloud: PointCloud, cfg: CompletionConfig | None = None) -> CompletionResult:
    """Fill the holes of a mirror-symmetric cloud from its aligned reflection.

    Runs normal estimation, candidate detection and selection, mirror
    registration, hole detection and filling, then the skip validation that
    returns the input unchanged when the completion drifted too far.
    Deterministic for a fixed config and seed.
    """
    cfg = cfg or CompletionConfig()
    if len(cloud) < MIN_CLOUD_SIZE:
        raise GeometryError(
            f"complete: point cloud too small ({len(cloud)} < {MIN_CLOUD_SIZE})"
        )
    carry_normals = cloud.has_normals
    work = cloud if carry_normals else estimate_normals(cloud, cfg.normal_params)
    spacing = average_nn_distance(work)
    balance, _ = _resolve_configs(work, cfg, spacing)

    try:
        detection = detect_symmetry_plane(work, cfg)
    except DegenerateGeometryError as exc:
        diag = CompletionDiagnostics(
            candidate_scores=(),
            plane_source="none",
            registration_fitness=None,
            registration_rmse=None,
            scaled_chamfer=None,
            added_count=0,
            passes_run=0,
            notes=(str(exc),),
        )
        return _skipped_result(cloud, None, diag)

    current = work
    added_chunks: list[PointCloud] = []
    passes_run = 0
    for _ in range(cfg.passes):
        mirrored = reflect(current, detection.plane)
        holes = detect_holes(current, mirrored, balance)
        passes_run += 1
        if len(holes) == 0:
            break
        added_chunks.append(holes)
        current = fill(current, holes)

    added_count = sum(len(c) for c in added_chunks)
    scaled = chamfer_distance(cloud, current) / spacing if added_count else 0.0
    reg = detection.registration
    diag = CompletionDiagnostics(
        candidate_scores=_candidate_rows(detection.candidates),
        plane_source=detection.source,
        registration_fitness=reg.fitness if reg else None,
        registration_rmse=reg.inlier_rmse if reg else None,
        scaled_chamfer=float(scaled),
        added_count=added_count,
        passes_run=passes_run,
        notes=detection.notes,
    )

    if scaled > cfg.skip_threshold:
        return _skipped_result(cloud, detection.plane, diag)

    if added_count == 0:
        return CompletionResult(cloud, _empty_like(cloud), detection.plane, False, diag)

    if added_chunks[0].has_normals:
        added = PointCloud(
            np.vstack([c.points for c in added_chunks]),
            np.vstack([c.normals for c in added_chunks]),
        )
    else:
        added = PointCloud(np.vstack([c.points for c in added_chunks]))
    if not carry_normals:
        current = current.without_normals()
        added = added.without_normals()
    return CompletionResult(current, added, detection.plane, False, diag)
