"""Mirror-image registration: FPFH descriptors, RANSAC alignment, ICP refinement.

The registration aligns a cloud's mirror image back onto the cloud; the
composite of reflection and recovered rigid motion is an improper isometry
whose fixed plane is the refined symmetry plane.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .geometry import (
    GeometryError,
    Plane,
    PointCloud,
    RigidTransform,
    average_nn_distance,
    bbox_centroid,
    bounding_box,
    reflect,
    reflection_matrix,
)
from .normals import NormalParams, estimate_normals

__all__ = [
    "RegistrationError",
    "ReflectionDriftError",
    "RegistrationParams",
    "RegistrationResult",
    "derive_registration_params",
    "compute_fpfh",
    "downsample_voxel",
    "least_squares_rigid",
    "global_registration",
    "icp_refine",
    "refine_symmetry_plane",
]

log = logging.getLogger(__name__)

FPFH_SIZE = 33
_BINS = 11
_RANSAC_EVAL_CAP = 1500


class RegistrationError(RuntimeError):
    """Registration could not produce a usable alignment."""


class ReflectionDriftError(RegistrationError):
    """The composite mirror-plus-rigid map no longer looks like a reflection."""


@dataclass(frozen=True)
class RegistrationParams:
    """Alignment knobs; thresholds left as None derive from the voxel size."""

    voxel_size: float
    fpfh_radius: float | None = None
    ransac_iterations: int = 100_000
    ransac_distance_threshold: float | None = None
    ransac_confidence: float = 0.999
    edge_similarity: float = 0.9
    icp_max_iterations: int = 60
    icp_distance_threshold: float | None = None
    icp_convergence_delta: float = 1e-12

    def __post_init__(self) -> None:
        if self.voxel_size <= 0:
            raise GeometryError(f"voxel_size must be positive, got {self.voxel_size}")
        if self.fpfh_radius is None:
            object.__setattr__(self, "fpfh_radius", 5.0 * self.voxel_size)
        if self.ransac_distance_threshold is None:
            object.__setattr__(self, "ransac_distance_threshold", 1.5 * self.voxel_size)
        if self.icp_distance_threshold is None:
            object.__setattr__(self, "icp_distance_threshold", self.voxel_size)
        for name in (
            "fpfh_radius",
            "ransac_iterations",
            "ransac_distance_threshold",
            "icp_max_iterations",
            "icp_distance_threshold",
            "icp_convergence_delta",
        ):
            if getattr(self, name) <= 0:
                raise GeometryError(f"{name} must be positive")
        if not (0.0 < self.ransac_confidence < 1.0):
            raise GeometryError("ransac_confidence must be in (0, 1)")
        if not (0.0 < self.edge_similarity <= 1.0):
            raise GeometryError("edge_similarity must be in (0, 1]")


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    fitness: float                      # matched fraction in [0, 1]
    inlier_rmse: float
    objective_history: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not (0.0 <= self.fitness <= 1.0):
            raise GeometryError(f"fitness must be in [0, 1], got {self.fitness}")


def derive_registration_params(spacing: float) -> RegistrationParams:
    """Defaults tied to the cloud's mean point spacing."""
    if spacing <= 0:
        raise GeometryError(f"spacing must be positive, got {spacing}")
    return RegistrationParams(voxel_size=2.5 * spacing)


# ------------------------------------------------------------------ features

def compute_fpfh(cloud: PointCloud, radius: float) -> np.ndarray:
    """33-bin fast point feature histograms over radius neighborhoods.

    Per point, the three Darboux-frame angles of every point/neighbor pair are
    histogrammed into 11 bins each (the simplified pass), then neighbors'
    histograms are folded in with inverse-distance weights. Isolated points get
    a zero feature.
    """
    if not cloud.has_normals:
        raise GeometryError("compute_fpfh: cloud must carry oriented normals")
    if radius <= 0:
        raise GeometryError(f"fpfh radius must be positive, got {radius}")
    pts, nrm = cloud.points, cloud.normals
    n = len(cloud)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")

    spfh = np.zeros((n, FPFH_SIZE))
    if len(pairs) == 0:
        log.warning("compute_fpfh: all %d points isolated at radius %g", n, radius)
        return spfh

    # the source-selection rule makes the angle triplet independent of pair
    # order, so each unordered pair is evaluated once and credited to both ends
    pi, pj = pairs[:, 0], pairs[:, 1]
    diff = pts[pj] - pts[pi]
    dist = np.linalg.norm(diff, axis=1)
    valid = dist > 1e-12
    dhat = np.zeros_like(diff)
    dhat[valid] = diff[valid] / dist[valid, None]

    ni, nj = nrm[pi], nrm[pj]
    cos_i = np.einsum("ij,ij->i", ni, dhat)
    cos_j = np.einsum("ij,ij->i", nj, dhat)
    # source = endpoint whose normal is closer to the connecting line; ties
    # (within roundoff margin) go to the lower index so the choice is stable
    swap = np.abs(cos_j) - np.abs(cos_i) > 1e-12
    src_n = np.where(swap[:, None], nj, ni)
    tgt_n = np.where(swap[:, None], ni, nj)
    dhat[swap] *= -1.0

    v = np.cross(dhat, src_n)
    v_norm = np.linalg.norm(v, axis=1)
    valid &= v_norm > 1e-12
    v[valid] /= v_norm[valid, None]
    w = np.cross(src_n, v)

    alpha = np.einsum("ij,ij->i", v, tgt_n)
    phi = np.einsum("ij,ij->i", src_n, dhat)
    theta = np.arctan2(np.einsum("ij,ij->i", w, tgt_n), np.einsum("ij,ij->i", src_n, tgt_n))

    bins = np.empty((len(pairs), 3), dtype=np.intp)
    bins[:, 0] = np.clip(((theta + np.pi) * (_BINS / (2 * np.pi))).astype(np.intp), 0, _BINS - 1)
    bins[:, 1] = _BINS + np.clip(((alpha + 1.0) * (_BINS / 2.0)).astype(np.intp), 0, _BINS - 1)
    bins[:, 2] = 2 * _BINS + np.clip(((phi + 1.0) * (_BINS / 2.0)).astype(np.intp), 0, _BINS - 1)

    # ordered-pair view: each valid unordered pair contributes in both directions
    pi_v, pj_v = pi[valid], pj[valid]
    own = np.concatenate([pi_v, pj_v])
    other = np.concatenate([pj_v, pi_v])
    dist_v = np.concatenate([dist[valid], dist[valid]])
    bins_v = np.concatenate([bins[valid], bins[valid]])

    deg = np.bincount(own, minlength=n).astype(np.float64)
    nonzero = deg > 0
    weight = np.zeros(n)
    weight[nonzero] = 1.0 / deg[nonzero]
    wv = weight[own]
    flat = (own[:, None] * FPFH_SIZE + bins_v).ravel()
    spfh = np.bincount(
        flat, weights=np.repeat(wv, 3), minlength=n * FPFH_SIZE
    ).reshape(n, FPFH_SIZE)

    isolated = n - int(nonzero.sum())
    if isolated:
        log.warning("compute_fpfh: %d isolated points with zero features", isolated)

    # second pass: inverse-distance-weighted neighbor histograms
    weights_mat = sparse.csr_matrix(
        (1.0 / dist_v, (own, other)), shape=(n, n)
    )
    acc = weights_mat @ spfh
    fpfh = spfh + acc * weight[:, None]
    return fpfh


def downsample_voxel(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """One representative point per occupied voxel (centroid of its members).

    Normals are averaged and renormalized; output order follows the voxel grid,
    so it does not depend on the input point order.
    """
    if voxel_size <= 0:
        raise GeometryError(f"voxel_size must be positive, got {voxel_size}")
    if len(cloud) == 0:
        raise GeometryError("downsample_voxel: empty point cloud")
    pts = cloud.points
    keys = np.floor((pts - pts.min(axis=0)) / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)

    centers = np.zeros((len(uniq), 3))
    np.add.at(centers, inverse, pts)
    centers /= counts[:, None]

    normals = None
    if cloud.has_normals:
        sums = np.zeros((len(uniq), 3))
        np.add.at(sums, inverse, cloud.normals)
        lengths = np.linalg.norm(sums, axis=1)
        cancelled = lengths < 1e-12
        if cancelled.any():
            # opposing members cancelled out: fall back to the first member's normal
            first = np.full(len(uniq), len(pts), dtype=np.intp)
            np.minimum.at(first, inverse, np.arange(len(pts), dtype=np.intp))
            sums[cancelled] = cloud.normals[first[cancelled]]
            lengths = np.linalg.norm(sums, axis=1)
        normals = sums / lengths[:, None]
    return PointCloud(centers, normals)


# ------------------------------------------------------------------ rigid fits

def least_squares_rigid(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Closed-form (SVD) minimizer of mean squared error for src -> dst pairs."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise GeometryError("least_squares_rigid: inputs must both have shape (n, 3)")
    if src.shape[0] < 3:
        raise GeometryError("least_squares_rigid: need at least 3 correspondences")
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, c_dst - rot @ c_src)


def _rigid_batch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Kabsch over stacks of correspondence triplets."""
    c_src = src.mean(axis=1, keepdims=True)
    c_dst = dst.mean(axis=1, keepdims=True)
    h = np.einsum("bni,bnj->bij", src - c_src, dst - c_dst)
    u, _, vt = np.linalg.svd(h)
    det = np.linalg.det(np.einsum("bij,bjk->bik", vt.transpose(0, 2, 1), u.transpose(0, 2, 1)))
    fix = np.ones((len(src), 3))
    fix[:, 2] = np.sign(det)
    rot = np.einsum("bij,bj,bkj->bik", vt.transpose(0, 2, 1), fix, u)
    t = c_dst[:, 0, :] - np.einsum("bij,bj->bi", rot, c_src[:, 0, :])
    return rot, t


def _feature_matches(feat_src: np.ndarray, feat_dst: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Nearest-neighbor match in feature space for each source row."""
    dst_sq = np.einsum("ij,ij->i", feat_dst, feat_dst)
    out = np.empty(len(feat_src), dtype=np.intp)
    for start in range(0, len(feat_src), chunk):
        block = feat_src[start : start + chunk]
        d2 = dst_sq[None, :] - 2.0 * (block @ feat_dst.T)
        out[start : start + chunk] = np.argmin(d2, axis=1)
    return out


def global_registration(
    src: PointCloud, dst: PointCloud, params: RegistrationParams, seed: int = 0
) -> RegistrationResult:
    """Coarse src -> dst alignment by RANSAC over FPFH correspondences.

    Triplets of feature matches propose rigid transforms, cheap edge-length
    compatibility prunes them, and surviving proposals are scored by inlier
    fraction over a capped correspondence subset; the winner is refit on its
    full inlier set. Deterministic for a fixed seed.
    """
    if len(src) < 3 or len(dst) < 3:
        raise RegistrationError("insufficient feature matches (need at least 3 points)")
    feat_src = compute_fpfh(src, params.fpfh_radius)
    feat_dst = compute_fpfh(dst, params.fpfh_radius)
    match = _feature_matches(feat_src, feat_dst)
    corr_src = src.points
    corr_dst = dst.points[match]
    n_corr = len(corr_src)

    rng = np.random.default_rng(seed)
    # inlier counting during the search runs on a capped correspondence
    # subset; the final refit and reported fitness use the full set
    if n_corr > _RANSAC_EVAL_CAP:
        eval_idx = rng.choice(n_corr, _RANSAC_EVAL_CAP, replace=False)
    else:
        eval_idx = np.arange(n_corr)
    eval_src = corr_src[eval_idx]
    eval_dst = corr_dst[eval_idx]
    n_eval = len(eval_idx)

    thr = params.ransac_distance_threshold
    sim = params.edge_similarity
    best_rot = np.eye(3)
    best_t = np.zeros(3)
    best_count = 0
    needed = params.ransac_iterations
    done = 0
    batch = 1024
    edge_pairs = ((0, 1), (1, 2), (0, 2))

    while done < needed:
        m = min(batch, needed - done)
        done += m
        triples = rng.integers(0, n_corr, size=(m, 3))
        distinct = (
            (triples[:, 0] != triples[:, 1])
            & (triples[:, 1] != triples[:, 2])
            & (triples[:, 0] != triples[:, 2])
        )
        triples = triples[distinct]
        if not len(triples):
            continue
        a = corr_src[triples]
        b = corr_dst[triples]

        ok = np.ones(len(triples), dtype=bool)
        for i, j in edge_pairs:
            la = np.linalg.norm(a[:, i] - a[:, j], axis=1)
            lb = np.linalg.norm(b[:, i] - b[:, j], axis=1)
            ok &= (la > 1e-12) & (lb > 1e-12)
            ok &= np.minimum(la, lb) >= sim * np.maximum(la, lb)
        cross = np.cross(a[:, 1] - a[:, 0], a[:, 2] - a[:, 0])
        ok &= np.linalg.norm(cross, axis=1) > 1e-12
        if not ok.any():
            continue

        rot, t = _rigid_batch(a[ok], b[ok])
        for s in range(0, len(rot), 256):
            r_blk, t_blk = rot[s : s + 256], t[s : s + 256]
            moved = np.einsum("bij,nj->bni", r_blk, eval_src) + t_blk[:, None, :]
            resid = np.linalg.norm(moved - eval_dst[None, :, :], axis=2)
            counts = (resid < thr).sum(axis=1)
            k = int(np.argmax(counts))
            if counts[k] > best_count:
                best_count = int(counts[k])
                best_rot, best_t = r_blk[k], t_blk[k]
        if best_count:
            ratio = min(max(best_count / n_eval, 1e-12), 1.0 - 1e-12)
            p_fail = 1.0 - ratio**3
            if p_fail <= 1e-12:
                needed = done
            else:
                enough = int(np.ceil(np.log(1.0 - params.ransac_confidence) / np.log(p_fail)))
                needed = min(needed, max(enough, 1))

    if best_count < 3:
        return RegistrationResult(RigidTransform.identity(), 0.0, 0.0)

    resid = np.linalg.norm(corr_src @ best_rot.T + best_t - corr_dst, axis=1)
    inliers = resid < thr
    if inliers.sum() < 3:
        return RegistrationResult(RigidTransform.identity(), 0.0, 0.0)
    transform = least_squares_rigid(corr_src[inliers], corr_dst[inliers])
    resid = np.linalg.norm(transform.apply(corr_src) - corr_dst, axis=1)
    inliers = resid < thr
    fitness = float(inliers.mean())
    rmse = float(np.sqrt(np.mean(resid[inliers] ** 2))) if inliers.any() else 0.0
    return RegistrationResult(transform, fitness, rmse)


def icp_refine(
    src: PointCloud,
    dst: PointCloud,
    init: RigidTransform,
    params: RegistrationParams,
) -> RegistrationResult:
    """Point-to-point ICP from `init`; the recorded objective never increases.

    Each iteration matches transformed source points to their nearest target
    within the distance threshold and refits the rigid transform in closed
    form; an update that would raise the mean squared error is discarded and
    iteration stops.
    """
    src_pts = src.points
    tree = cKDTree(dst.points)
    thr = params.icp_distance_threshold
    transform = init
    history: list[float] = []
    fitness = 0.0
    rmse = 0.0
    prev_e = np.inf

    for _ in range(params.icp_max_iterations):
        moved = transform.apply(src_pts)
        dists, idx = tree.query(moved)
        mask = dists <= thr
        if mask.sum() < 3:
            if not history:
                return RegistrationResult(init, 0.0, 0.0)
            break
        a = src_pts[mask]
        b = dst.points[idx[mask]]
        candidate = least_squares_rigid(a, b)
        e_new = float(np.mean(np.sum((candidate.apply(a) - b) ** 2, axis=1)))
        if e_new > prev_e:
            break
        transform = candidate
        history.append(e_new)
        fitness = float(mask.mean())
        rmse = float(np.sqrt(e_new))
        if e_new == 0.0 or prev_e - e_new < params.icp_convergence_delta:
            break
        prev_e = e_new

    return RegistrationResult(transform, fitness, rmse, tuple(history))


# ------------------------------------------------------------------ plane recovery

def refine_symmetry_plane(
    cloud: PointCloud,
    initial: Plane,
    params: RegistrationParams | None = None,
    *,
    seed: int = 0,
    normal_params: NormalParams | None = None,
    use_global: bool = True,
) -> tuple[Plane, RegistrationResult]:
    """Register the mirror image back onto the cloud and read off the fixed plane.

    On the downsampled clouds, ICP runs from two seeds, the identity (the
    candidate plane is already a coarse alignment) and the RANSAC global
    registration; the better fit wins and gets a tight-threshold polish at
    full resolution. The composite of the initial reflection and the recovered
    rigid motion is an improper isometry; the eigenvector of its symmetrized
    linear part closest to eigenvalue -1 gives the refined normal, and the
    offset follows from the translation component along it.
    """
    if params is None:
        params = derive_registration_params(average_nn_distance(cloud))
    work = cloud if cloud.has_normals else estimate_normals(cloud, normal_params)
    mirrored = reflect(work, initial)

    src_down = downsample_voxel(mirrored, params.voxel_size)
    dst_down = downsample_voxel(work, params.voxel_size)
    race = [icp_refine(src_down, dst_down, RigidTransform.identity(), params)]
    if use_global:
        coarse = global_registration(src_down, dst_down, params, seed=seed)
        race.append(icp_refine(src_down, dst_down, coarse.transform, params))
    winner = max(race, key=lambda r: (r.fitness, -r.inlier_rmse))

    polish_params = replace(
        params, icp_distance_threshold=0.4 * params.voxel_size
    )
    result = icp_refine(mirrored, work, winner.transform, polish_params)
    if result.fitness <= 0.05:
        result = icp_refine(mirrored, work, winner.transform, params)

    lin_mirror, shift = reflection_matrix(initial)
    rot, t = result.transform.rotation, result.transform.translation
    lin = rot @ lin_mirror
    offset = rot @ shift + t
    det = float(np.linalg.det(lin))
    if abs(det + 1.0) > 1e-6:
        raise ReflectionDriftError(f"composite map determinant {det:.6g}, expected -1")

    sym = (lin + lin.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    if abs(eigvals[0] + 1.0) > 0.1:
        raise ReflectionDriftError(
            f"registration destroyed reflection structure (eigenvalue {eigvals[0]:.4f})"
        )
    normal = eigvecs[:, 0]
    if float(normal @ initial.normal) < 0:
        normal = -normal
    plane_offset = float(offset @ normal) / 2.0
    center = bbox_centroid(bounding_box(work))
    anchor = center - (float(center @ normal) - plane_offset) * normal
    return Plane(anchor, normal), result
