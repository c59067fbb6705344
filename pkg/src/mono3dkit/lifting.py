"""Geometric 2D-to-3D lifting: point extraction, box fitting, refinement.

The pipeline turns (point cloud, instance mask, 2D box, camera) into an
oriented 3D box candidate:

    extract_object_points -> remove_outliers -> largest_cluster
    -> fit_oriented_box -> optimize_translation -> adaptive_select
    -> correct_rotation

All stages are deterministic given their seeds. Distances are meters.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.optimize import minimize
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .camera import CameraModel, project
from .geometry import Box2D, Box3D, giou2d, iou2d, matrix_to_quat

__all__ = [
    "DEFAULT_GRAVITY",
    "OptimizerConfig",
    "LiftCandidate",
    "TranslationResult",
    "extract_object_points",
    "remove_outliers",
    "largest_cluster",
    "fit_oriented_box",
    "anchor_weights",
    "sample_anchors",
    "inclusion_loss",
    "tightness_loss",
    "projected_box2d",
    "projection_loss",
    "optimize_translation",
    "scale_depth_to_box2d",
    "adaptive_select",
    "estimate_gravity",
    "correct_rotation",
    "lift_annotation",
]

# Vertical axis of the camera frame (y points down in pixel space).
DEFAULT_GRAVITY = np.array([0.0, -1.0, 0.0])

_BEHIND_CAMERA_PENALTY = 1e6


@dataclass
class OptimizerConfig:
    """Knobs of the translation refinement and its anchor losses."""

    grid_size: int = 5
    window_scale: float = 1.0
    lambda_inclusion: float = 1.0
    lambda_tightness: float = 0.5
    lambda_projection: float = 0.5
    inclusion_buffer: float = 0.02
    tightness_buffer: float = 0.1
    max_iterations: int = 100
    f_tol: float = 1e-6
    fd_step: float = 1e-4
    anchor_count: int = 256
    mahalanobis_alpha: float = 0.5
    projected_iou_threshold: float = 0.4

    def __post_init__(self):
        if self.grid_size < 1 or self.grid_size % 2 == 0:
            raise ValueError("grid_size must be odd so the unshifted center is a grid point")
        if self.window_scale <= 0:
            raise ValueError("window_scale must be positive")


@dataclass
class TranslationResult:
    """Outcome of the two-stage translation search."""

    box: Box3D
    loss: float
    grid_loss: float
    n_grid_evaluations: int
    flags: tuple = ()


@dataclass
class LiftCandidate:
    """A lifted 3D box with its provenance and diagnostics."""

    box: Box3D
    generator: str = "ransac_pca"
    status: str = "raw"  # raw | optimized | filtered
    losses: dict = field(default_factory=dict)
    measurements: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Point extraction and cleaning
# ---------------------------------------------------------------------------


def extract_object_points(cloud, mask) -> np.ndarray:
    """Cloud points whose source pixel survives one erosion of the mask.

    Args:
        cloud: a SceneCloud (``points`` (N, 3), ``pixels`` (N, 2) as
            (row, col) provenance).
        mask: (H, W) boolean instance mask.

    Raises:
        ValueError: empty mask, or no points left after erosion.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty instance mask")
    eroded = binary_erosion(mask, structure=np.ones((3, 3), dtype=bool))
    if not eroded.any():
        raise ValueError("mask vanished under erosion")
    px = cloud.pixels
    if px is None or len(px) != len(cloud.points):
        raise ValueError("cloud lacks per-point pixel provenance")
    sel = eroded[px[:, 0], px[:, 1]]
    pts = cloud.points[sel]
    if pts.shape[0] == 0:
        raise ValueError("no cloud points inside the eroded mask")
    return pts


def remove_outliers(points, k: int = 16, sigma: float = 2.0) -> np.ndarray:
    """Statistical outlier removal on mean k-nearest-neighbor distance.

    Points whose statistic exceeds mean + ``sigma`` * std are dropped.
    Fewer than k + 1 points pass through unchanged.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] <= k:
        return pts.copy()
    tree = cKDTree(pts)
    dists, _ = tree.query(pts, k=k + 1)
    stat = dists[:, 1:].mean(axis=1)
    cutoff = stat.mean() + sigma * stat.std()
    return pts[stat <= cutoff]


def largest_cluster(points, min_points: int = 8, eps_factor: float = 3.0) -> np.ndarray:
    """Largest density cluster; radius is 3x the median NN distance.

    Density clustering in the DBSCAN sense: core points have at least
    ``min_points`` neighbors (self included) within eps; clusters grow
    through core points; border points join the first cluster that reaches
    them. Ties in size break toward the smaller mean depth (z).

    Raises:
        ValueError: if every point is noise.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("no points to cluster")
    tree = cKDTree(pts)
    if n > 1:
        nn, _ = tree.query(pts, k=2)
        eps = eps_factor * float(np.median(nn[:, 1]))
    else:
        eps = 0.0
    if eps <= 0:
        raise ValueError("degenerate point spacing; all points classified as noise")
    neighbors = tree.query_ball_point(pts, eps)
    core = np.fromiter((len(nb) >= min_points for nb in neighbors), dtype=bool, count=n)
    labels = np.full(n, -1, dtype=np.int64)
    n_clusters = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = n_clusters
        queue = [i]
        while queue:
            j = queue.pop()
            for nb in neighbors[j]:
                if labels[nb] == -1:
                    labels[nb] = n_clusters
                    if core[nb]:
                        queue.append(nb)
        n_clusters += 1
    if n_clusters == 0:
        raise ValueError("all points classified as noise")
    best_label = -1
    best_key = None
    for c in range(n_clusters):
        members = labels == c
        key = (int(np.count_nonzero(members)), -float(pts[members, 2].mean()))
        if best_key is None or key > best_key:
            best_key = key
            best_label = c
    return pts[labels == best_label]


# ---------------------------------------------------------------------------
# Oriented box fitting
# ---------------------------------------------------------------------------


def _horizontal_basis(height_axis: np.ndarray):
    """Two orthonormal in-plane directions (u, v) with u x v = height axis."""
    ref = np.array([1.0, 0.0, 0.0])
    if abs(float(ref @ height_axis)) > 0.9:
        ref = np.array([0.0, 0.0, 1.0])
    u = ref - (ref @ height_axis) * height_axis
    u /= np.linalg.norm(u)
    v = np.cross(height_axis, u)
    return u, v


def _min_area_rectangle(fp: np.ndarray):
    """Rotating calipers: minimum-area rectangle over the convex hull.

    Returns (theta, center2d, extents2d); theta is the angle of the first
    rectangle axis. The optimal rectangle is flush with a hull edge; the
    first strictly smallest edge wins, which keeps ties deterministic.
    """
    try:
        hull = ConvexHull(fp)
    except QhullError as exc:
        raise ValueError("degenerate footprint: points are collinear") from exc
    hp = fp[hull.vertices]
    best = None
    for k in range(len(hp)):
        edge = hp[(k + 1) % len(hp)] - hp[k]
        ne = float(np.linalg.norm(edge))
        if ne < 1e-12:
            continue
        c, s = edge[0] / ne, edge[1] / ne
        rot = np.array([[c, -s], [s, c]])  # rotate by -theta (row vectors)
        q = hp @ rot
        lo, hi = q.min(axis=0), q.max(axis=0)
        area = float((hi - lo).prod())
        if best is None or area < best[0] - 1e-15:
            mid = 0.5 * (lo + hi)
            center = mid @ rot.T
            best = (area, math.atan2(s, c), center, hi - lo)
    if best is None:
        raise ValueError("degenerate footprint: no usable hull edge")
    _, theta, center, extents = best
    return theta, center, extents


def _ransac_rectangle_inliers(
    fp: np.ndarray,
    rng: np.random.Generator,
    iterations: int = 200,
    threshold: float = 0.05,
) -> np.ndarray:
    """Inlier mask of the best rectangle hypothesis over the footprint.

    Each iteration takes an orientation from two sampled points, builds the
    [0.5, 99.5]-percentile extent rectangle in that frame, and counts points
    within ``threshold`` of the rectangle region. Best hypothesis by count,
    ties by smaller area. Degenerate samples are skipped; if nothing usable
    comes up, all points are inliers.
    """
    n = fp.shape[0]
    best = None
    for _ in range(iterations):
        i, j = rng.choice(n, size=2, replace=False)
        d = fp[j] - fp[i]
        nd = float(np.linalg.norm(d))
        if nd < 1e-12:
            continue
        c, s = d[0] / nd, d[1] / nd
        q = fp @ np.array([[c, -s], [s, c]])
        lo = np.percentile(q, 0.5, axis=0)
        hi = np.percentile(q, 99.5, axis=0)
        outside = np.maximum(np.maximum(lo - q, q - hi), 0.0)
        dist = np.hypot(outside[:, 0], outside[:, 1])
        mask = dist <= threshold
        key = (int(np.count_nonzero(mask)), -float((hi - lo).prod()))
        if best is None or key > best[0]:
            best = (key, mask)
    if best is None:
        return np.ones(n, dtype=bool)
    return best[1]


def fit_oriented_box(
    points,
    gravity=DEFAULT_GRAVITY,
    seed: int = 0,
    ransac_iterations: int = 200,
    inlier_threshold: float = 0.05,
    height_percentiles: tuple[float, float] = (1.0, 99.0),
    min_height: float | None = None,
) -> Box3D:
    """Gravity-aligned oriented box around a point cloud.

    The height axis follows gravity; the footprint (points projected along
    gravity) passes RANSAC inlier rejection and a rotating-calipers
    minimum-area rectangle; height spans the [1, 99] percentile band of the
    vertical coordinate. The result's rotation is yaw-only about gravity.

    Args:
        points: (N, 3), N >= 10.
        gravity: vertical axis; only its line matters.
        min_height: when the vertical span is zero, use this height instead
            of raising.

    Raises:
        ValueError: too few points, collinear footprint, or zero height
            without ``min_height``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] < 10:
        raise ValueError("need at least 10 points to fit a box")
    g = np.asarray(gravity, dtype=np.float64)
    g = g / np.linalg.norm(g)
    # Height axis with positive y so gravity-default boxes are pure yaws.
    haxis = -g if g[1] < 0 else g
    u, v = _horizontal_basis(haxis)

    hcoord = pts @ haxis
    h_lo, h_hi = np.percentile(hcoord, height_percentiles)
    height = float(h_hi - h_lo)
    if height < 1e-9:
        if min_height is None:
            raise ValueError("points span zero height; pass min_height to override")
        height = float(min_height)

    fp = np.column_stack([pts @ u, pts @ v])
    rng = np.random.default_rng(seed)
    inliers = _ransac_rectangle_inliers(fp, rng, ransac_iterations, inlier_threshold)
    if np.count_nonzero(inliers) < 3:
        inliers = np.ones(fp.shape[0], dtype=bool)
    theta, center2d, extents = _min_area_rectangle(fp[inliers])

    a1 = math.cos(theta) * u + math.sin(theta) * v
    rot = np.column_stack([a1, haxis, np.cross(a1, haxis)])
    center = center2d[0] * u + center2d[1] * v + 0.5 * (h_lo + h_hi) * haxis
    dims = np.array([max(extents[0], 1e-6), height, max(extents[1], 1e-6)])
    return Box3D(center=center, dims=dims, quaternion=matrix_to_quat(rot))


# ---------------------------------------------------------------------------
# Anchor weighting
# ---------------------------------------------------------------------------


def anchor_weights(points, alpha: float = 0.5) -> np.ndarray:
    """Per-point weights exp(-alpha * Mahalanobis distance), in (0, 1].

    The covariance is regularized with 1e-6 * I; if inversion still fails
    the weights fall back to uniform.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0)
    mu = pts.mean(axis=0)
    centered = pts - mu
    cov = centered.T @ centered / max(n, 1) + 1e-6 * np.eye(3)
    try:
        inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        return np.ones(n)
    m = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", centered, inv, centered), 0.0))
    return np.exp(-alpha * m)


def sample_anchors(points, weights, count: int = 256, seed: int = 0):
    """Weight-proportional subsample of at most ``count`` anchors."""
    pts = np.asarray(points, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if pts.shape[0] <= count:
        return pts, w
    rng = np.random.default_rng(seed)
    idx = rng.choice(pts.shape[0], size=count, replace=False, p=w / w.sum())
    idx.sort()
    return pts[idx], w[idx]


# ---------------------------------------------------------------------------
# Translation losses and refinement
# ---------------------------------------------------------------------------


def inclusion_loss(box: Box3D, anchor_points, weights, buffer: float = 0.02) -> float:
    """Weighted mean distance of anchors outside the buffered box.

    Zero iff every anchor lies inside the box grown by ``buffer`` on each
    face; strictly positive otherwise.
    """
    pts = np.asarray(anchor_points, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    local = (pts - box.center) @ box.rotation
    over = np.maximum(np.abs(local) - (box.dims / 2.0 + buffer), 0.0)
    dist = np.linalg.norm(over, axis=1)
    return float(np.sum(w * dist) / np.sum(w))


def tightness_loss(box: Box3D, anchor_points, buffer: float = 0.1) -> float:
    """Mean face-plane slack: hinge of (nearest anchor distance - buffer).

    Zero when every one of the six face planes has an anchor within
    ``buffer``; grows as faces drift away from the cloud.
    """
    pts = np.asarray(anchor_points, dtype=np.float64)
    local = (pts - box.center) @ box.rotation
    half = box.dims / 2.0
    total = 0.0
    for axis in range(3):
        for sign in (1.0, -1.0):
            nearest = float(np.min(np.abs(local[:, axis] - sign * half[axis])))
            total += max(0.0, nearest - buffer)
    return total / 6.0


def projected_box2d(box: Box3D, camera: CameraModel) -> Box2D:
    """Axis-aligned pixel box around the projected 3D corners."""
    px = project(camera, box.corners())
    return Box2D(float(px[:, 0].min()), float(px[:, 1].min()), float(px[:, 0].max()), float(px[:, 1].max()))


def projection_loss(box: Box3D, box2d: Box2D, camera: CameraModel) -> float:
    """1 - GIoU between the projected box and the annotated 2D box.

    Boxes reaching behind the camera get a large constant penalty.
    """
    corners = box.corners()
    if corners[:, 2].min() <= 1e-6:
        return _BEHIND_CAMERA_PENALTY
    return 1.0 - giou2d(projected_box2d(box, camera), box2d)


def _translation_objective(box: Box3D, anchor_points, weights, box2d, camera, cfg: OptimizerConfig):
    def objective(center: np.ndarray) -> float:
        moved = Box3D(center, box.dims, box.quaternion)
        return (
            cfg.lambda_inclusion * inclusion_loss(moved, anchor_points, weights, cfg.inclusion_buffer)
            + cfg.lambda_tightness * tightness_loss(moved, anchor_points, cfg.tightness_buffer)
            + cfg.lambda_projection * projection_loss(moved, box2d, camera)
        )

    return objective


def optimize_translation(
    candidate: Box3D,
    anchor_points,
    weights,
    box2d: Box2D,
    camera: CameraModel,
    cfg: OptimizerConfig | None = None,
) -> TranslationResult:
    """Refine the candidate's center; dims and rotation stay fixed.

    Stage 1 evaluates the anchor/projection objective on a grid_size^3
    lattice spanning ``window_scale`` x dims around the center (the center
    itself is a lattice point). Stage 2 polishes the best lattice point with
    bounded L-BFGS-B (central-difference gradients, step 1e-4) inside the
    same window. If polishing fails to improve, the lattice best is returned
    with a flag; the final loss never exceeds the lattice best.
    """
    cfg = cfg or OptimizerConfig()
    objective = _translation_objective(candidate, anchor_points, weights, box2d, camera, cfg)
    origin = candidate.center
    half_window = candidate.dims * cfg.window_scale / 2.0

    axes = [np.linspace(-hw, hw, cfg.grid_size) for hw in half_window]
    n_evals = 0
    best_center = None
    best_val = math.inf
    for off in itertools.product(*axes):
        c = origin + np.asarray(off)
        val = objective(c)
        n_evals += 1
        if val < best_val:
            best_val = val
            best_center = c
    grid_loss = best_val

    bounds = [(origin[k] - half_window[k], origin[k] + half_window[k]) for k in range(3)]

    def jac(center: np.ndarray) -> np.ndarray:
        g = np.zeros(3)
        for k in range(3):
            step = np.zeros(3)
            step[k] = cfg.fd_step
            g[k] = (objective(center + step) - objective(center - step)) / (2 * cfg.fd_step)
        return g

    flags = ()
    try:
        res = minimize(
            objective,
            best_center,
            jac=jac,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": cfg.max_iterations, "ftol": cfg.f_tol},
        )
        refined_center, refined_val = res.x, float(res.fun)
    except Exception:
        refined_center, refined_val = best_center, math.inf
        flags = ("refinement_error",)
    if not math.isfinite(refined_val) or refined_val > grid_loss:
        refined_center, refined_val = best_center, grid_loss
        flags = flags or ("refinement_rejected",)

    final = Box3D(refined_center, candidate.dims, candidate.quaternion)
    return TranslationResult(
        box=final,
        loss=refined_val,
        grid_loss=grid_loss,
        n_grid_evaluations=n_evals,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# Fallback scaling and selection
# ---------------------------------------------------------------------------


def scale_depth_to_box2d(box: Box3D, box2d: Box2D, camera: CameraModel) -> Box3D:
    """Move the box along its viewing ray so projected size matches box2d.

    The scale blends height (0.7) and width (0.3) ratios between the
    annotated and projected 2D boxes; depth is divided by the scale, so a
    projection that is too small comes closer.
    """
    proj = projected_box2d(box, camera)
    if proj.height <= 0 or proj.width <= 0:
        raise ValueError("projected box is degenerate")
    s = 0.7 * (box2d.height / proj.height) + 0.3 * (box2d.width / proj.width)
    if s <= 0:
        raise ValueError("non-positive projection scale")
    return Box3D(box.center / s, box.dims, box.quaternion)


def adaptive_select(
    optimized: Box3D,
    fallback: Box3D,
    box2d: Box2D,
    camera: CameraModel,
    iou_threshold: float = 0.4,
) -> tuple[Box3D, str]:
    """Optimized box if its projection overlaps the 2D box enough, else fallback.

    Returns the chosen box and the branch name ("optimized" or "fallback").
    """
    overlap = iou2d(projected_box2d(optimized, camera), box2d)
    if overlap >= iou_threshold:
        return optimized, "optimized"
    return fallback, "fallback"


# ---------------------------------------------------------------------------
# Rotation correction
# ---------------------------------------------------------------------------


def estimate_gravity(points, default=DEFAULT_GRAVITY, max_tilt_deg: float = 15.0) -> np.ndarray:
    """Scene gravity from the dominant ground plane, else the default.

    Takes the lowest quarter of the scene (largest y; y points down), fits a
    plane by PCA, and accepts its normal when within ``max_tilt_deg`` of the
    default vertical; otherwise returns the default.
    """
    pts = np.asarray(points, dtype=np.float64)
    d = np.asarray(default, dtype=np.float64)
    d = d / np.linalg.norm(d)
    if pts.shape[0] < 10:
        return d
    y = pts[:, 1]
    low = pts[y >= np.percentile(y, 75)]
    if low.shape[0] < 10:
        return d
    centered = low - low.mean(axis=0)
    cov = centered.T @ centered / low.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    normal = eigvecs[:, 0]
    cos = abs(float(normal @ d))
    if math.degrees(math.acos(min(1.0, cos))) <= max_tilt_deg:
        return normal if normal @ d >= 0 else -normal
    return d


def correct_rotation(
    box: Box3D,
    scene_points,
    box2d: Box2D,
    camera: CameraModel,
    default_gravity=DEFAULT_GRAVITY,
) -> Box3D:
    """Re-align the box to gravity and pick the best-projecting yaw.

    Gravity comes from :func:`estimate_gravity` over the scene points. Yaw
    is searched exhaustively on a 1-degree grid over [0, 180); the box's own
    yaw is kept when it already achieves the grid minimum, so an aligned,
    perfectly projecting box is a fixed point.
    """
    g = estimate_gravity(scene_points, default=default_gravity)
    haxis = -g if g[1] < 0 else g
    u, v = _horizontal_basis(haxis)

    def box_at(yaw: float) -> Box3D:
        a1 = math.cos(yaw) * u + math.sin(yaw) * v
        rot = np.column_stack([a1, haxis, np.cross(a1, haxis)])
        return Box3D(box.center, box.dims, matrix_to_quat(rot))

    best_yaw = None
    best_val = math.inf
    for deg in range(180):
        yaw = math.radians(deg)
        val = projection_loss(box_at(yaw), box2d, camera)
        if val < best_val - 1e-15:
            best_val = val
            best_yaw = yaw

    # Keep the current orientation when it is already gravity-aligned and
    # no grid yaw beats it.
    current_axis = box.rotation[:, 1]
    if abs(float(current_axis @ haxis)) >= 1.0 - 1e-9:
        current_val = projection_loss(box, box2d, camera)
        if current_val <= best_val + 1e-12:
            return box
    return box_at(best_yaw)


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def lift_annotation(
    cloud,
    mask,
    box2d: Box2D,
    camera: CameraModel,
    config: OptimizerConfig | None = None,
    seed: int = 0,
    gravity=DEFAULT_GRAVITY,
) -> LiftCandidate:
    """Run the full lifting pipeline for one annotated object.

    Raises ValueError when a stage cannot produce a candidate (empty mask,
    all points noise, degenerate footprint); callers log and skip.
    """
    cfg = config or OptimizerConfig()
    pts = extract_object_points(cloud, mask)
    n_extracted = pts.shape[0]
    cleaned = remove_outliers(pts)
    n_inliers = cleaned.shape[0]
    cluster = largest_cluster(cleaned)
    n_clustered = cluster.shape[0]

    fitted = fit_oriented_box(cluster, gravity=gravity, seed=seed)
    # Anchors come from the full cleaned cloud, not the dominant cluster:
    # sparse but real surface points (grazing-angle faces) are what pin the
    # translation along the viewing ray.
    weights = anchor_weights(cleaned, cfg.mahalanobis_alpha)
    a_pts, a_w = sample_anchors(cleaned, weights, cfg.anchor_count, seed=seed)

    result = optimize_translation(fitted, a_pts, a_w, box2d, camera, cfg)
    fallback = scale_depth_to_box2d(fitted, box2d, camera)
    selected, branch = adaptive_select(result.box, fallback, box2d, camera, cfg.projected_iou_threshold)
    corrected = correct_rotation(selected, cloud.points, box2d, camera, default_gravity=gravity)

    losses = {
        "inclusion": inclusion_loss(corrected, a_pts, a_w, cfg.inclusion_buffer),
        "tightness": tightness_loss(corrected, a_pts, cfg.tightness_buffer),
        "projection": projection_loss(corrected, box2d, camera),
    }
    measurements = {
        "n_extracted": n_extracted,
        "n_after_outliers": n_inliers,
        "n_cluster": n_clustered,
        "n_anchors": int(a_pts.shape[0]),
        "branch": branch,
        "grid_loss": result.grid_loss,
        "refined_loss": result.loss,
        "n_grid_evaluations": result.n_grid_evaluations,
    }
    return LiftCandidate(box=corrected, status="optimized", losses=losses, measurements=measurements)
