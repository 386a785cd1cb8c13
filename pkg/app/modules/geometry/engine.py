"""Dense ground-constraint scale recovery.

backproject -> compute_normal_map -> detect_ground -> camera_heights
-> estimate_camera_height -> scale_factor -> recover_absolute

Every step is a pure function of its inputs. All arithmetic is float64.
"""
import logging
import math
from typing import Optional

import numpy as np

from app.core.config import DEFAULT_ANGLE_THRESHOLD_DEG, DEFAULT_LOW_CONFIDENCE_RATIO
from app.core.errors import InputValidationError, NoGroundDetected
from app.modules.geometry.schemas import (
    CameraIntrinsics,
    DepthKind,
    DepthMap,
    GroundMask,
    HeightSamples,
    NormalMap,
    PointGrid,
    RecoveryResult,
    ScaleEstimate,
)

logger = logging.getLogger(__name__)

# Ideal ground normal in y-down camera coordinates
GROUND_NORMAL = np.array([0.0, 1.0, 0.0])

# Cross products shorter than this (grid units squared) mark the pixel invalid
DEGENERATE_NORM = 1e-12

# (row offset, col offset) pairs around the centre pixel. Each pair spans a
# right angle and all four share the same handedness, so their cross
# products agree in sign before orientation.
NEIGHBOR_PAIRS = (
    ((1, 0), (0, -1)),
    ((-1, 0), (0, 1)),
    ((1, -1), (-1, -1)),
    ((-1, 1), (1, 1)),
)

UNIT_TOLERANCE = 1e-6


def rotation_x(degrees: float) -> np.ndarray:
    """Rotation about the camera x-axis (pitch)."""
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def pixel_rays(height: int, width: int, k: CameraIntrinsics) -> np.ndarray:
    """K^-1 [col, row, 1] for every pixel, shape (H, W, 3); z is exactly 1."""
    rows, cols = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    rays = np.empty((height, width, 3))
    rays[..., 0] = (cols - k.cx) / k.fx
    rays[..., 1] = (rows - k.cy) / k.fy
    rays[..., 2] = 1.0
    return rays


def backproject(depth: DepthMap, k: CameraIntrinsics) -> PointGrid:
    k.check_shape(depth.height, depth.width)
    rows, cols = np.meshgrid(
        np.arange(depth.height, dtype=np.float64), np.arange(depth.width, dtype=np.float64), indexing="ij"
    )
    d = depth.values
    points = np.empty(depth.shape + (3,))
    points[..., 0] = (cols - k.cx) * d / k.fx
    points[..., 1] = (rows - k.cy) * d / k.fy
    points[..., 2] = d
    points[~depth.valid] = 0.0
    return PointGrid(points, depth.valid)


def project(points: np.ndarray, k: CameraIntrinsics):
    """Pixel coordinates (col, row) of camera-frame points; z <= 0 gives nan."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(z > 0, z, np.nan)
        u = k.fx * points[..., 0] / safe + k.cx
        v = k.fy * points[..., 1] / safe + k.cy
    return u, v


def orient_normals(vectors: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Flip normals so y >= 0.

    A normal lying exactly in the x-z plane keeps the sign that faces the camera.
    """
    vectors = np.array(vectors, dtype=np.float64, copy=True)
    facing = np.einsum("...i,...i->...", vectors, points)
    flip = (vectors[..., 1] < 0) | ((vectors[..., 1] == 0) & (facing > 0))
    vectors[flip] *= -1.0
    return vectors


def _interior_normals(points: np.ndarray, valid: np.ndarray):
    """Normals for every pixel that has a full 8-neighbourhood.

    Returns (normals, ok) with shape (H-2, W-2, 3) and (H-2, W-2).
    """
    h, w = valid.shape
    if h < 3 or w < 3:
        return np.zeros((max(h - 2, 0), max(w - 2, 0), 3)), np.zeros((max(h - 2, 0), max(w - 2, 0)), dtype=bool)

    def shifted(arr, dr, dc):
        return arr[1 + dr : h - 1 + dr, 1 + dc : w - 1 + dc]

    centre = shifted(points, 0, 0)
    ok = np.ones((h - 2, w - 2), dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            ok &= shifted(valid, dr, dc)

    total = np.zeros_like(centre)
    for first, second in NEIGHBOR_PAIRS:
        n = np.cross(shifted(points, *first) - centre, shifted(points, *second) - centre)
        norm = np.linalg.norm(n, axis=-1)
        usable = norm >= DEGENERATE_NORM
        ok &= usable
        total += n / np.where(usable, norm, 1.0)[..., None]

    mean = total / len(NEIGHBOR_PAIRS)
    norm = np.linalg.norm(mean, axis=-1)
    ok &= norm >= DEGENERATE_NORM
    unit = mean / np.where(ok, norm, 1.0)[..., None]

    unit = orient_normals(unit, centre)
    unit[~ok] = 0.0
    return unit, ok


def normal_at(grid: PointGrid, row: int, col: int) -> Optional[np.ndarray]:
    """Unit normal of one strictly interior pixel, or None when it is invalid."""
    h, w = grid.shape
    if not (1 <= row <= h - 2 and 1 <= col <= w - 2):
        raise InputValidationError(f"pixel ({row}, {col}) is not strictly interior to a {h}x{w} grid")
    unit, ok = _interior_normals(
        grid.points[row - 1 : row + 2, col - 1 : col + 2], grid.valid[row - 1 : row + 2, col - 1 : col + 2]
    )
    if not ok[0, 0]:
        return None
    return unit[0, 0].copy()


def compute_normal_map(grid: PointGrid) -> NormalMap:
    h, w = grid.shape
    vectors = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    unit, ok = _interior_normals(grid.points, grid.valid)
    if ok.size:
        vectors[1:-1, 1:-1] = unit
        valid[1:-1, 1:-1] = ok
    return NormalMap(vectors, valid)


def _angle_from_vertical(ny) -> np.ndarray:
    return np.degrees(np.arccos(np.clip(ny, -1.0, 1.0)))


def ground_similarity(n) -> float:
    """Angle in degrees between a unit normal and the ideal ground normal."""
    n = np.asarray(n, dtype=np.float64)
    if n.shape != (3,) or not np.all(np.isfinite(n)):
        raise InputValidationError("normal must be a finite 3-vector")
    if abs(np.linalg.norm(n) - 1.0) > UNIT_TOLERANCE:
        raise InputValidationError(f"normal is not unit length (norm {np.linalg.norm(n):.6g})")
    return float(abs(_angle_from_vertical(float(GROUND_NORMAL @ n))))


def similarity_map(normals: NormalMap) -> np.ndarray:
    """Per-pixel ground_similarity; nan where the normal is invalid."""
    angles = _angle_from_vertical(normals.vectors[..., 1])
    return np.where(normals.valid, angles, np.nan)


def detect_ground(normals: NormalMap, points: PointGrid, angle_threshold_deg: float = DEFAULT_ANGLE_THRESHOLD_DEG) -> GroundMask:
    if normals.shape != points.shape:
        raise InputValidationError(f"normal map {normals.shape} and point grid {points.shape} differ in size")
    if not 0 < angle_threshold_deg < 90:
        raise InputValidationError(f"angle threshold must lie in (0, 90) degrees, got {angle_threshold_deg}")

    angles = similarity_map(normals)
    with np.errstate(invalid="ignore"):
        mask = normals.valid & points.valid & (angles < angle_threshold_deg) & (points.y > 0)
    return GroundMask(mask, int(np.count_nonzero(points.valid)))


def camera_heights(points: PointGrid, normals: NormalMap, mask: GroundMask) -> HeightSamples:
    if not (points.shape == normals.shape == mask.mask.shape):
        raise InputValidationError("points, normals and ground mask differ in size")
    rows, cols = np.nonzero(mask.mask)
    values = np.einsum("ij,ij->i", normals.vectors[rows, cols], points.points[rows, cols])
    return HeightSamples(values, rows, cols, mask.ground_ratio)


def estimate_camera_height(samples: HeightSamples, min_samples: int = 1) -> float:
    """Median of the per-point heights (mean of the central pair for even counts)."""
    if len(samples) == 0 or len(samples) < min_samples:
        raise NoGroundDetected(ground_ratio=samples.ground_ratio, n_samples=len(samples))
    return float(np.median(samples.values))


def _require_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise InputValidationError(f"{name} must be positive and finite, got {value}")


def scale_factor(camera_height: float, estimated_height: float) -> float:
    _require_positive("camera height", camera_height)
    _require_positive("estimated height", estimated_height)
    return camera_height / estimated_height


def recover_absolute(depth: DepthMap, factor: float) -> DepthMap:
    if depth.kind is not DepthKind.RELATIVE:
        raise InputValidationError("depth map is already absolute")
    _require_positive("scale factor", factor)
    return depth.scaled(factor, DepthKind.ABSOLUTE)


def recover_metric_depth(
    depth: DepthMap,
    k: CameraIntrinsics,
    camera_height: float,
    angle_threshold_deg: float = DEFAULT_ANGLE_THRESHOLD_DEG,
    low_confidence_ratio: float = DEFAULT_LOW_CONFIDENCE_RATIO,
    min_samples: int = 1,
) -> RecoveryResult:
    """Full pipeline from a relative depth map to metric depth."""
    if depth.kind is not DepthKind.RELATIVE:
        raise InputValidationError("scale recovery expects a relative depth map")
    _require_positive("camera height", camera_height)

    points = backproject(depth, k)
    normals = compute_normal_map(points)
    ground = detect_ground(normals, points, angle_threshold_deg)
    samples = camera_heights(points, normals, ground)
    logger.debug("ground ratio %.4f, %d height samples", ground.ground_ratio, len(samples))

    estimated = estimate_camera_height(samples, min_samples)
    if estimated <= 0:
        # Only reachable on non-physical input where most ground points face away
        raise NoGroundDetected(
            ground_ratio=ground.ground_ratio, n_samples=len(samples), message="median camera height is not positive"
        )
    factor = scale_factor(camera_height, estimated)
    low_confidence = ground.ground_ratio < low_confidence_ratio
    if low_confidence:
        logger.warning("ground ratio %.4f below %.4f, scale is low-confidence", ground.ground_ratio, low_confidence_ratio)

    estimate = ScaleEstimate(
        estimated_height=estimated,
        camera_height=camera_height,
        scale_factor=factor,
        ground_ratio=ground.ground_ratio,
        n_samples=len(samples),
        low_confidence=low_confidence,
    )
    return RecoveryResult(
        absolute=recover_absolute(depth, factor),
        estimate=estimate,
        ground=ground,
        normals=normals,
        points=points,
        samples=samples,
    )
