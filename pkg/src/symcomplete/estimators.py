"""Scikit-learn style estimators wrapping the completion pipeline.

These let the algorithms drop into sklearn tooling: `get_params`/`set_params`,
`clone`, and pipeline composition all work, and inputs are plain (n, 3) arrays.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_point_array
from .completion import (
    MIN_CLOUD_SIZE,
    CompletionConfig,
    complete,
    detect_symmetry_plane,
)
from .geometry import PointCloud, average_nn_distance, build_index, reflect
from .metrics import BalanceConfig, balanced_distance
from .normals import NormalParams

__all__ = ["SymmetryPlaneEstimator", "SymmetryCompleter"]


class SymmetryPlaneEstimator(BaseEstimator):
    """Detect the dominant mirror-symmetry plane of a 3D point cloud.

    Parameters
    ----------
    neighbor_count : size of the neighborhood for normal estimation.
    epsilon : balance tolerance used to score candidate planes.
    cube_side_factor : balance cube side as a multiple of the point spacing.
    refine : also run mirror registration to polish the selected candidate.
    random_state : seed for the registration stage.

    After ``fit``, ``plane_anchor_`` and ``plane_normal_`` hold the detected
    plane and ``candidate_scores_`` the balanced distance of every candidate.
    """

    def __init__(
        self,
        neighbor_count: int = 30,
        epsilon: float = 0.3,
        cube_side_factor: float = 4.0,
        refine: bool = True,
        random_state: int = 0,
    ):
        self.neighbor_count = neighbor_count
        self.epsilon = epsilon
        self.cube_side_factor = cube_side_factor
        self.refine = refine
        self.random_state = random_state

    def _config(self) -> CompletionConfig:
        return CompletionConfig(
            normal_params=NormalParams(neighbor_count=self.neighbor_count),
            balance_epsilon=self.epsilon,
            cube_side_factor=self.cube_side_factor,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        pts = check_point_array(X, min_points=max(MIN_CLOUD_SIZE, self.neighbor_count + 1))
        detection = detect_symmetry_plane(
            PointCloud(pts), self._config(), refine=self.refine
        )
        self.plane_ = detection.plane
        self.plane_anchor_ = np.array(detection.plane.anchor)
        self.plane_normal_ = np.array(detection.plane.normal)
        self.candidate_scores_ = [
            (c.source.value, float(c.score)) for c in detection.candidates
        ]
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        """Signed distance of each point to the fitted plane."""
        if not hasattr(self, "plane_"):
            raise AttributeError("SymmetryPlaneEstimator is not fitted yet")
        pts = check_point_array(X)
        return self.plane_.signed_distance(pts)

    def score(self, X, y=None):
        """Negative balanced distance of X against its mirror image (higher is better)."""
        if not hasattr(self, "plane_"):
            raise AttributeError("SymmetryPlaneEstimator is not fitted yet")
        cloud = PointCloud(check_point_array(X, min_points=2))
        cfg = BalanceConfig(
            self.cube_side_factor * average_nn_distance(cloud), self.epsilon
        )
        mirrored = reflect(cloud, self.plane_)
        return -balanced_distance(cloud, mirrored, cfg, index_a=build_index(cloud))


class SymmetryCompleter(TransformerMixin, BaseEstimator):
    """Complete a damaged mirror-symmetric cloud; ``transform`` returns the filled array.

    The transform is transductive: fitting caches the completion of the fitted
    array, and transforming a different array reruns the pipeline on it with
    the same parameters.
    """

    def __init__(
        self,
        neighbor_count: int = 30,
        epsilon: float = 0.3,
        cube_side_factor: float = 4.0,
        skip_threshold: float = 4.0,
        passes: int = 1,
        random_state: int = 0,
    ):
        self.neighbor_count = neighbor_count
        self.epsilon = epsilon
        self.cube_side_factor = cube_side_factor
        self.skip_threshold = skip_threshold
        self.passes = passes
        self.random_state = random_state

    def _config(self) -> CompletionConfig:
        return CompletionConfig(
            normal_params=NormalParams(neighbor_count=self.neighbor_count),
            balance_epsilon=self.epsilon,
            cube_side_factor=self.cube_side_factor,
            skip_threshold=self.skip_threshold,
            passes=self.passes,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        pts = check_point_array(X, min_points=MIN_CLOUD_SIZE)
        self.result_ = complete(PointCloud(pts), self._config())
        self._fitted_points = pts
        self.plane_ = self.result_.plane
        self.skipped_ = self.result_.skipped
        self.added_count_ = len(self.result_.added_points)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        if not hasattr(self, "result_"):
            raise AttributeError("SymmetryCompleter is not fitted yet")
        pts = check_point_array(X, min_points=MIN_CLOUD_SIZE)
        if pts.shape == self._fitted_points.shape and np.array_equal(
            pts, self._fitted_points
        ):
            return np.array(self.result_.completed.points)
        return np.array(complete(PointCloud(pts), self._config()).completed.points)
