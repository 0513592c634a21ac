"""Coarse-to-fine rigid registration.

The alignment loop mirrors a classic global-registration recipe: voxel
downsample, describe with FPFH, hypothesise a coarse transform with RANSAC
over descriptor correspondences, polish with point-to-point ICP, then judge
the round by symmetric chamfer discrepancy.  Rounds repeat with a loosening
acceptance threshold until the discrepancy drops below it or the round budget
runs out; the best state seen is returned either way.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .errors import CoarseAlignmentError, InvalidInputError, InvalidParameterError
from .fpfh import compute_fpfh
from .geometry import (
    F64,
    PointCloud,
    Points,
    RigidTransform,
    apply_transform,
    chamfer_loss,
    compose,
    estimate_normals,
    voxel_downsample,
)
from .rng import derive_seed
from .runtime import worker_count

log = logging.getLogger(__name__)

# Alignment-loop defaults; the chamfer acceptance threshold loosens by one
# step after every round that fails it.
DEFAULT_CHAMFER_THRESHOLD = 0.016
DEFAULT_THRESHOLD_STEP = 0.001
DEFAULT_MAX_ROUNDS = 10


def fit_rigid(source: Points, target: Points) -> RigidTransform:
    """Least-squares rigid motion mapping source points onto target points.

    SVD solution of the orthogonal Procrustes problem with the usual
    reflection guard (smallest singular direction flipped when the determinant
    comes out negative).
    """
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 3:
        raise InvalidInputError(
            f"paired point sets must share shape (n, 3), got {src.shape} and {tgt.shape}"
        )
    if src.shape[0] < 3:
        raise InvalidInputError("rigid fit needs at least 3 point pairs")
    src_mean = src.mean(axis=0)
    tgt_mean = tgt.mean(axis=0)
    cov = (src - src_mean).T @ (tgt - tgt_mean)
    u, _, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    diag = np.diag([1.0, 1.0, sign if sign != 0 else 1.0])
    rotation = vt.T @ diag @ u.T
    translation = tgt_mean - rotation @ src_mean
    return RigidTransform(rotation, translation)


def _batched_fit(src: NDArray[F64], tgt: NDArray[F64]) -> tuple[NDArray[F64], NDArray[F64]]:
    """Procrustes fit per hypothesis; inputs shaped (h, s, 3)."""
    src_mean = src.mean(axis=1, keepdims=True)
    tgt_mean = tgt.mean(axis=1, keepdims=True)
    cov = np.einsum("hsi,hsj->hij", src - src_mean, tgt - tgt_mean)
    u, _, vt = np.linalg.svd(cov)
    rot = np.einsum("hji,hkj->hik", vt, u)
    dets = np.linalg.det(rot)
    flip = dets < 0.0
    if flip.any():
        vt_fixed = vt.copy()
        vt_fixed[flip, 2, :] *= -1.0
        rot = np.einsum("hji,hkj->hik", vt_fixed, u)
    trans = tgt_mean[:, 0, :] - np.einsum("hij,hj->hi", rot, src_mean[:, 0, :])
    return rot, trans


@dataclass(frozen=True, slots=True)
class RansacParams:
    """Knobs for correspondence RANSAC."""

    distance_threshold: float
    max_iterations: int = 20_000
    sample_size: int = 3
    edge_length_ratio: float = 0.9
    confidence: float = 0.999

    def __post_init__(self) -> None:
        if self.distance_threshold <= 0.0:
            raise InvalidParameterError("distance_threshold must be positive")
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")
        if self.sample_size < 3:
            raise InvalidParameterError("sample_size must be >= 3")
        if not 0.0 < self.edge_length_ratio < 1.0:
            raise InvalidParameterError("edge_length_ratio must lie in (0, 1)")
        if not 0.0 < self.confidence < 1.0:
            raise InvalidParameterError("confidence must lie in (0, 1)")


@dataclass(frozen=True, slots=True)
class RansacResult:
    transform: RigidTransform
    inlier_count: int
    correspondence_count: int
    hypotheses_evaluated: int

    @property
    def inlier_fraction(self) -> float:
        return self.inlier_count / self.correspondence_count


def _mutual_correspondences(
    src_desc: NDArray[F64], tgt_desc: NDArray[F64]
) -> tuple[NDArray[np.intp], NDArray[np.intp]]:
    workers = worker_count()
    _, fwd = cKDTree(tgt_desc).query(src_desc, k=1, workers=workers)
    _, back = cKDTree(src_desc).query(tgt_desc, k=1, workers=workers)
    src_idx = np.arange(src_desc.shape[0])
    mutual = back[fwd] == src_idx
    return src_idx[mutual], fwd[mutual]


_HYPOTHESIS_BATCH = 256


def ransac_align(
    src: PointCloud,
    tgt: PointCloud,
    src_desc: NDArray[F64],
    tgt_desc: NDArray[F64],
    params: RansacParams,
    seed: int,
) -> RansacResult:
    """Coarse transform from descriptor correspondences.

    Correspondences are mutual nearest neighbours in descriptor space.  Each
    hypothesis samples ``sample_size`` of them, passes an edge-length-ratio
    compatibility gate, is fit by rigid Procrustes, and is scored by how many
    correspondences land within ``distance_threshold``.  The best hypothesis
    is refit on its inliers.  Fully deterministic for a given seed; raises
    CoarseAlignmentError when there are too few correspondences to sample.
    """
    if src_desc.shape[0] != len(src) or tgt_desc.shape[0] != len(tgt):
        raise InvalidInputError("descriptor rows must match their cloud sizes")
    src_corr_idx, tgt_corr_idx = _mutual_correspondences(src_desc, tgt_desc)
    n_corr = src_corr_idx.shape[0]
    if n_corr < params.sample_size:
        raise CoarseAlignmentError(
            f"only {n_corr} mutual correspondences, need {params.sample_size}"
        )
    p = src.points[src_corr_idx]
    q = tgt.points[tgt_corr_idx]

    rng = np.random.default_rng(seed)
    pair_a, pair_b = np.triu_indices(params.sample_size, k=1)
    ratio = params.edge_length_ratio

    best_count = -1
    best_rot = np.eye(3)
    best_trans = np.zeros(3)
    evaluated = 0
    needed = float(params.max_iterations)

    while evaluated < min(params.max_iterations, needed):
        batch = int(min(_HYPOTHESIS_BATCH, params.max_iterations - evaluated))
        picks = rng.integers(0, n_corr, size=(batch, params.sample_size))
        evaluated += batch

        sample_src = p[picks]
        sample_tgt = q[picks]
        edge_src = np.linalg.norm(
            sample_src[:, pair_a] - sample_src[:, pair_b], axis=2
        )
        edge_tgt = np.linalg.norm(
            sample_tgt[:, pair_a] - sample_tgt[:, pair_b], axis=2
        )
        compatible = (
            (edge_src > ratio * edge_tgt)
            & (edge_tgt > ratio * edge_src)
            & (edge_src > 1e-12)
            & (edge_tgt > 1e-12)
        ).all(axis=1)
        if not compatible.any():
            continue

        rot, trans = _batched_fit(sample_src[compatible], sample_tgt[compatible])
        moved = np.einsum("hij,cj->hci", rot, p) + trans[:, None, :]
        dist_sq = np.sum((moved - q[None, :, :]) ** 2, axis=2)
        counts = np.sum(dist_sq < params.distance_threshold**2, axis=1)
        top = int(np.argmax(counts))
        if counts[top] > best_count:
            best_count = int(counts[top])
            best_rot = rot[top]
            best_trans = trans[top]
            inlier_ratio = best_count / n_corr
            hit_prob = inlier_ratio**params.sample_size
            if hit_prob >= 1.0:
                needed = 0.0
            elif hit_prob > 0.0:
                needed = np.log1p(-params.confidence) / np.log1p(-hit_prob)

    if best_count < 0:
        raise CoarseAlignmentError("no hypothesis passed the edge-compatibility gate")

    transform = RigidTransform(best_rot, best_trans)
    inliers = np.sum((apply_points_rowwise(transform, p) - q) ** 2, axis=1)
    inlier_mask = inliers < params.distance_threshold**2
    if int(inlier_mask.sum()) >= 3:
        transform = fit_rigid(p[inlier_mask], q[inlier_mask])
        inliers = np.sum((apply_points_rowwise(transform, p) - q) ** 2, axis=1)
        inlier_mask = inliers < params.distance_threshold**2
    return RansacResult(
        transform=transform,
        inlier_count=int(inlier_mask.sum()),
        correspondence_count=n_corr,
        hypotheses_evaluated=evaluated,
    )


def apply_points_rowwise(transform: RigidTransform, points: Points) -> Points:
    return points @ transform.rotation.T + transform.translation


@dataclass(frozen=True, slots=True)
class IcpParams:
    max_iterations: int = 50
    tolerance: float = 1e-10

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")
        if self.tolerance < 0.0:
            raise InvalidParameterError("tolerance must be >= 0")


@dataclass(frozen=True, slots=True)
class IcpResult:
    transform: RigidTransform
    mse: float
    iterations: int
    mse_history: tuple[float, ...]


def icp_refine(
    src: PointCloud,
    tgt: PointCloud,
    init: RigidTransform,
    params: IcpParams = IcpParams(),
) -> IcpResult:
    """Point-to-point ICP started from ``init``.

    Alternates exact nearest-neighbour correspondence with a closed-form rigid
    fit; stops once the mean-squared residual improves by less than the
    tolerance.  The returned transform includes ``init``.
    """
    tree = cKDTree(tgt.points)
    workers = worker_count()
    transform = init
    current = apply_points_rowwise(transform, src.points)
    dists, idx = tree.query(current, k=1, workers=workers)
    mse = float(np.mean(dists**2))
    history = [mse]
    iterations = 0
    for _ in range(params.max_iterations):
        delta = fit_rigid(current, tgt.points[idx])
        transform = compose(delta, transform)
        current = apply_points_rowwise(delta, current)
        dists, idx = tree.query(current, k=1, workers=workers)
        new_mse = float(np.mean(dists**2))
        history.append(new_mse)
        iterations += 1
        improved = mse - new_mse
        mse = new_mse
        if improved < params.tolerance:
            break
    return IcpResult(
        transform=transform, mse=mse, iterations=iterations, mse_history=tuple(history)
    )


@dataclass(frozen=True, slots=True)
class AlignmentOptions:
    """Secondary knobs of the alignment loop, bundled to keep pose_align tidy."""

    voxel_divisor: float = 20.0
    fpfh_radius_factor: float = 5.0
    normals_k: int = 16
    ransac_distance_factor: float = 1.5
    ransac_max_iterations: int = 20_000
    ransac_sample_size: int = 3
    edge_length_ratio: float = 0.9
    ransac_confidence: float = 0.999
    icp: IcpParams = field(default_factory=IcpParams)
    full_cloud_chamfer: bool = False

    def __post_init__(self) -> None:
        if self.voxel_divisor <= 0.0:
            raise InvalidParameterError("voxel_divisor must be positive")
        if self.fpfh_radius_factor <= 0.0:
            raise InvalidParameterError("fpfh_radius_factor must be positive")
        if self.normals_k < 3:
            raise InvalidParameterError("normals_k must be >= 3")
        if self.ransac_distance_factor <= 0.0:
            raise InvalidParameterError("ransac_distance_factor must be positive")


@dataclass(frozen=True, slots=True)
class RoundRecord:
    delta: RigidTransform
    chamfer: float
    ransac_failed: bool


@dataclass(frozen=True, slots=True)
class AlignmentResult:
    aligned: PointCloud
    transform: RigidTransform
    chamfer: float
    rounds: int
    converged: bool
    ransac_failures: int
    round_log: tuple[RoundRecord, ...]


def _described_downsample(
    cloud: PointCloud, voxel: float, options: AlignmentOptions
) -> tuple[PointCloud, NDArray[F64]] | None:
    sparse = voxel_downsample(cloud, voxel)
    if len(sparse) < max(3, options.ransac_sample_size):
        return None
    k = min(options.normals_k, len(sparse))
    with_normals, _ = estimate_normals(sparse, k=k, viewpoint=sparse.centroid())
    descriptors = compute_fpfh(with_normals, options.fpfh_radius_factor * voxel)
    return with_normals, descriptors


def pose_align(
    src: PointCloud,
    tgt: PointCloud,
    voxel_size: float | None = None,
    chamfer_threshold: float = DEFAULT_CHAMFER_THRESHOLD,
    threshold_step: float = DEFAULT_THRESHOLD_STEP,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    seed: int = 0,
    options: AlignmentOptions | None = None,
) -> AlignmentResult:
    """Align ``src`` onto ``tgt`` with the coarse-to-fine loop.

    ``voxel_size`` defaults to the target bounding-box diagonal divided by
    ``options.voxel_divisor``.  Each round runs downsample, FPFH, RANSAC and
    ICP, accumulates the round's full transform, and measures the symmetric
    chamfer discrepancy of the downsampled pair (full clouds when
    ``options.full_cloud_chamfer``).  A round beating the current acceptance
    threshold ends the loop as converged; otherwise the threshold loosens by
    ``threshold_step`` and the loop continues, returning the best round seen.

    A failed coarse stage (too few correspondences) falls back to an identity
    initialisation for that round's ICP; it is counted and logged, not fatal.
    """
    if max_rounds < 1:
        raise InvalidParameterError("max_rounds must be >= 1")
    if chamfer_threshold < 0.0 or threshold_step < 0.0:
        raise InvalidParameterError("chamfer threshold and step must be >= 0")
    opts = options if options is not None else AlignmentOptions()
    voxel = tgt.bbox_diagonal() / opts.voxel_divisor if voxel_size is None else voxel_size
    if voxel <= 0.0:
        raise InvalidParameterError(f"voxel size must be positive, got {voxel}")

    tgt_described = _described_downsample(tgt, voxel, opts)
    tgt_sparse = tgt_described[0] if tgt_described else None
    ransac_params = RansacParams(
        distance_threshold=opts.ransac_distance_factor * voxel,
        max_iterations=opts.ransac_max_iterations,
        sample_size=opts.ransac_sample_size,
        edge_length_ratio=opts.edge_length_ratio,
        confidence=opts.ransac_confidence,
    )

    cumulative = RigidTransform.identity()
    current = src
    threshold = chamfer_threshold
    best_loss = np.inf
    best_transform = cumulative
    records: list[RoundRecord] = []
    converged = False
    failures = 0

    for round_index in range(1, max_rounds + 1):
        coarse = RigidTransform.identity()
        failed = True
        src_described = _described_downsample(current, voxel, opts)
        if src_described is not None and tgt_described is not None:
            src_sparse, src_desc = src_described
            try:
                coarse = ransac_align(
                    src_sparse,
                    tgt_described[0],
                    src_desc,
                    tgt_described[1],
                    ransac_params,
                    seed=derive_seed(seed, f"coarse-round-{round_index}"),
                ).transform
                failed = False
            except CoarseAlignmentError as exc:
                log.warning("round %d coarse alignment failed: %s", round_index, exc)
        else:
            log.warning(
                "round %d skipped coarse alignment: downsampled cloud too small",
                round_index,
            )
        if failed:
            failures += 1

        refined = icp_refine(current, tgt, init=coarse, params=opts.icp)
        round_delta = refined.transform
        cumulative = compose(round_delta, cumulative)
        current = apply_transform(round_delta, current)

        if opts.full_cloud_chamfer or tgt_sparse is None:
            loss = chamfer_loss(current, tgt)
        else:
            loss = chamfer_loss(voxel_downsample(current, voxel), tgt_sparse)
        records.append(RoundRecord(delta=round_delta, chamfer=loss, ransac_failed=failed))

        if loss <= best_loss:
            best_loss = loss
            best_transform = cumulative
        if loss < threshold:
            converged = True
            break
        threshold += threshold_step

    return AlignmentResult(
        aligned=apply_transform(best_transform, src),
        transform=best_transform,
        chamfer=best_loss,
        rounds=len(records),
        converged=converged,
        ransac_failures=failures,
        round_log=tuple(records),
    )
