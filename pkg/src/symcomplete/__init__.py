"""Training-free completion of mirror-symmetric 3D point clouds.

Detects the symmetry plane of a damaged cloud, registers the cloud against its
own mirror image, and fills the detected holes from the aligned reflection.
"""

from .augment import DamageRecord, DamageSpec, damage, damage_batch
from .completion import (
    MIN_CLOUD_SIZE,
    CompletionConfig,
    CompletionResult,
    complete,
    detect_holes,
    detect_symmetry_plane,
    fill,
    skip_validate,
)
from .estimators import SymmetryCompleter, SymmetryPlaneEstimator
from .fixtures import ShapeKind, ShapeSpec, generate, ground_truth_planes
from .geometry import (
    BoundingBox,
    DegenerateGeometryError,
    GeometryError,
    Plane,
    PointCloud,
    RigidTransform,
    SpatialIndex,
    apply_transform,
    average_nn_distance,
    bbox_centroid,
    bounding_box,
    build_index,
    mass_center,
    reflect,
)
from .io import CloudFile, CloudFormat, CloudParseError, load_cloud, save_cloud
from .metrics import (
    BalanceConfig,
    SymmetryEvalConfig,
    accuracy,
    balanced_distance,
    chamfer_distance,
    is_balanced,
    symmetry_correct,
)
from .normals import Axis, NormalParams, Viewpoint, estimate_normals, orient_normals
from .registration import (
    RegistrationError,
    RegistrationParams,
    RegistrationResult,
    compute_fpfh,
    downsample_voxel,
    global_registration,
    icp_refine,
    refine_symmetry_plane,
)
from .symmetry import (
    SymmetryCandidate,
    convex_hull,
    hull_direction_candidates,
    normal_direction_candidates,
    pca,
    select_best_candidate,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "PointCloud",
    "Plane",
    "RigidTransform",
    "BoundingBox",
    "SpatialIndex",
    "GeometryError",
    "DegenerateGeometryError",
    "bounding_box",
    "bbox_centroid",
    "mass_center",
    "reflect",
    "apply_transform",
    "build_index",
    "average_nn_distance",
    "CloudFile",
    "CloudFormat",
    "CloudParseError",
    "load_cloud",
    "save_cloud",
    "Axis",
    "Viewpoint",
    "NormalParams",
    "estimate_normals",
    "orient_normals",
    "SymmetryCandidate",
    "pca",
    "convex_hull",
    "normal_direction_candidates",
    "hull_direction_candidates",
    "select_best_candidate",
    "BalanceConfig",
    "SymmetryEvalConfig",
    "is_balanced",
    "balanced_distance",
    "chamfer_distance",
    "symmetry_correct",
    "accuracy",
    "RegistrationError",
    "RegistrationParams",
    "RegistrationResult",
    "compute_fpfh",
    "downsample_voxel",
    "global_registration",
    "icp_refine",
    "refine_symmetry_plane",
    "MIN_CLOUD_SIZE",
    "CompletionConfig",
    "CompletionResult",
    "detect_holes",
    "fill",
    "skip_validate",
    "detect_symmetry_plane",
    "complete",
    "DamageSpec",
    "DamageRecord",
    "damage",
    "damage_batch",
    "ShapeKind",
    "ShapeSpec",
    "generate",
    "ground_truth_planes",
    "SymmetryCompleter",
    "SymmetryPlaneEstimator",
]
