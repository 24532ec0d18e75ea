import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from symcomplete import Plane, PointCloud, RigidTransform


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def unit_ball_cloud(rng):
    """1000 points in the unit ball."""
    pts = rng.normal(size=(1000, 3))
    pts *= (rng.uniform(size=1000) ** (1 / 3) / np.linalg.norm(pts, axis=1))[:, None]
    return PointCloud(pts)


@pytest.fixture
def yz_plane():
    return Plane((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))


def random_plane(rng) -> Plane:
    normal = rng.normal(size=3)
    while np.linalg.norm(normal) < 1e-6:
        normal = rng.normal(size=3)
    return Plane.from_point_normal(rng.uniform(-1, 1, size=3), normal)


def random_rotation(rng) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_rigid(rng) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-1, 1, size=3))
