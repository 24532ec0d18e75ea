"""Brute-force reference implementations used to cross-check the library.

Everything here is written as plainly as possible (loops, O(n^2) scans, no
spatial index, no shared helpers) so it stays an independent route.
"""

from __future__ import annotations

import math

import numpy as np


def brute_bbox(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = points[0].copy()
    hi = points[0].copy()
    for p in points[1:]:
        for k in range(3):
            lo[k] = min(lo[k], p[k])
            hi[k] = max(hi[k], p[k])
    return lo, hi


def brute_mass_center(points: np.ndarray) -> np.ndarray:
    total = np.zeros(3)
    for p in points:
        total += p
    return total / len(points)


def brute_knn(points: np.ndarray, query: np.ndarray, k: int) -> list[int]:
    d = [float(np.linalg.norm(p - query)) for p in points]
    return sorted(range(len(points)), key=lambda i: (d[i], i))[:k]


def brute_radius(points: np.ndarray, query: np.ndarray, r: float) -> set[int]:
    return {i for i, p in enumerate(points) if np.linalg.norm(p - query) <= r}


def brute_cube_count(points: np.ndarray, center: np.ndarray, side: float) -> int:
    half = side / 2.0
    count = 0
    for p in points:
        if all(abs(p[k] - center[k]) <= half for k in range(3)):
            count += 1
    return count


def brute_average_nn(points: np.ndarray) -> float:
    total = 0.0
    for i in range(len(points)):
        best = math.inf
        for j in range(len(points)):
            if i == j:
                continue
            best = min(best, float(np.linalg.norm(points[i] - points[j])))
        total += best
    return total / len(points)


def brute_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    def directed(src, dst):
        total = 0.0
        for p in src:
            total += min(float(np.linalg.norm(p - q)) for q in dst)
        return total / len(src)

    return directed(a, b) + directed(b, a)


def brute_balanced_distance(
    a: np.ndarray, b: np.ndarray, side: float, epsilon: float
) -> float:
    balanced = 0
    for cloud in (a, b):
        for p in cloud:
            ca = brute_cube_count(a, p, side)
            cb = brute_cube_count(b, p, side)
            total = ca + cb
            if total > 0 and abs(ca - cb) <= epsilon * total:
                balanced += 1
    return 1.0 - balanced / (len(a) + len(b))


def brute_hole_indices(
    original: np.ndarray, mirrored: np.ndarray, side: float, epsilon: float
) -> list[int]:
    holes = []
    for i, p in enumerate(mirrored):
        ca = brute_cube_count(original, p, side)
        cb = brute_cube_count(mirrored, p, side)
        total = ca + cb
        balanced = total > 0 and abs(ca - cb) <= epsilon * total
        if not balanced and cb > ca:
            holes.append(i)
    return holes


def brute_covariance(dirs: np.ndarray) -> np.ndarray:
    mean = np.zeros(3)
    for d in dirs:
        mean += d
    mean /= len(dirs)
    cov = np.zeros((3, 3))
    for d in dirs:
        c = d - mean
        for i in range(3):
            for j in range(3):
                cov[i, j] += c[i] * c[j]
    return cov / len(dirs)


def naive_fpfh(points: np.ndarray, normals: np.ndarray, radius: float) -> np.ndarray:
    """Index-free O(n^2) FPFH: same definition as the library, different route."""
    n = len(points)
    bins = 11

    neighborhoods: list[list[int]] = []
    for i in range(n):
        nb = []
        for j in range(n):
            if j != i and np.linalg.norm(points[j] - points[i]) <= radius:
                nb.append(j)
        neighborhoods.append(nb)

    def pair_feature(i: int, j: int):
        d = points[j] - points[i]
        dist = float(np.linalg.norm(d))
        if dist <= 1e-12:
            return None
        dhat = d / dist
        ni, nj = normals[i], normals[j]
        gap = abs(float(nj @ dhat)) - abs(float(ni @ dhat))
        if gap > 1e-12 or (abs(gap) <= 1e-12 and j < i):
            src, tgt = nj, ni
            dhat = -dhat
        else:
            src, tgt = ni, nj
        v = np.cross(dhat, src)
        vn = float(np.linalg.norm(v))
        if vn <= 1e-12:
            return None
        v = v / vn
        w = np.cross(src, v)
        alpha = float(v @ tgt)
        phi = float(src @ dhat)
        theta = math.atan2(float(w @ tgt), float(src @ tgt))
        return alpha, phi, theta, dist

    def bin_of(value: float, low: float, high: float) -> int:
        b = int((value - low) * bins / (high - low))
        return min(max(b, 0), bins - 1)

    spfh = np.zeros((n, 33))
    degree = np.zeros(n)
    dists = np.zeros((n, n))
    for i in range(n):
        valid_pairs = []
        for j in neighborhoods[i]:
            feat = pair_feature(i, j)
            if feat is not None:
                valid_pairs.append((j, feat))
        degree[i] = len(valid_pairs)
        if not valid_pairs:
            continue
        w_inc = 1.0 / len(valid_pairs)
        for j, (alpha, phi, theta, dist) in valid_pairs:
            dists[i, j] = dist
            spfh[i, bin_of(theta, -math.pi, math.pi)] += w_inc
            spfh[i, 11 + bin_of(alpha, -1.0, 1.0)] += w_inc
            spfh[i, 22 + bin_of(phi, -1.0, 1.0)] += w_inc

    fpfh = spfh.copy()
    for i in range(n):
        if degree[i] == 0:
            continue
        acc = np.zeros(33)
        used = 0
        for j in neighborhoods[i]:
            if dists[i, j] > 0:
                acc += spfh[j] / dists[i, j]
                used += 1
        if used:
            fpfh[i] += acc / degree[i]
    return fpfh


def numeric_rigid_fit(src: np.ndarray, dst: np.ndarray):
    """Minimize the mean squared pair error over rotations and translations numerically."""
    from scipy.optimize import minimize
    from scipy.spatial.transform import Rotation

    def cost(x):
        rot = Rotation.from_rotvec(x[:3]).as_matrix()
        moved = src @ rot.T + x[3:]
        return float(np.mean(np.sum((moved - dst) ** 2, axis=1)))

    best = None
    for start in (
        np.zeros(6),
        np.concatenate([np.full(3, 0.1), dst.mean(axis=0) - src.mean(axis=0)]),
        np.concatenate([np.full(3, -0.2), np.zeros(3)]),
    ):
        res = minimize(cost, start, method="Nelder-Mead",
                       options={"maxiter": 6000, "xatol": 1e-12, "fatol": 1e-14})
        res = minimize(cost, res.x, method="BFGS", options={"maxiter": 2000})
        if best is None or res.fun < best.fun:
            best = res
    rot = Rotation.from_rotvec(best.x[:3]).as_matrix()
    return rot, best.x[3:], float(best.fun)
