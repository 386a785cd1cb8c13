"""Self-supervision losses as pure image/depth operations (no autodiff)."""
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from app.core.errors import InputValidationError
from app.modules.geometry.engine import backproject, project
from app.modules.geometry.schemas import CameraIntrinsics, DepthMap
from app.modules.photometric.schemas import Image, LossWeights, Pose, WarpResult

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WINDOW = 3

# Projected coordinates this close to a pixel centre are taken as that centre
SNAP_TOLERANCE = 1e-9


def _check_same_size(a: Image, b: Image) -> None:
    if a.values.shape != b.values.shape:
        raise InputValidationError(f"image shapes differ: {a.values.shape} vs {b.values.shape}")


def _local_mean(x: np.ndarray) -> np.ndarray:
    # mode="mirror" reflects about the edge pixel without repeating it
    return uniform_filter(x, size=(SSIM_WINDOW, SSIM_WINDOW, 1), mode="mirror")


def ssim_map(a: Image, b: Image) -> np.ndarray:
    """Local SSIM over a 3x3 window, clipped to [0, 1] and averaged over channels."""
    _check_same_size(a, b)
    x, y = a.values, b.values
    mu_x = _local_mean(x)
    mu_y = _local_mean(y)
    sigma_x = _local_mean(x * x) - mu_x * mu_x
    sigma_y = _local_mean(y * y) - mu_y * mu_y
    sigma_xy = _local_mean(x * y) - mu_x * mu_y

    numerator = (2 * mu_x * mu_y + SSIM_C1) * (2 * sigma_xy + SSIM_C2)
    denominator = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return np.clip(numerator / denominator, 0.0, 1.0).mean(axis=2)


def photometric_error(a: Image, b: Image, alpha: float = 0.85) -> np.ndarray:
    if not 0 <= alpha <= 1:
        raise InputValidationError(f"alpha must lie in [0, 1], got {alpha}")
    _check_same_size(a, b)
    structural = (1.0 - ssim_map(a, b)) / 2.0
    l1 = np.abs(a.values - b.values).mean(axis=2)
    return alpha * structural + (1.0 - alpha) * l1


def _snap(coords: np.ndarray) -> np.ndarray:
    nearest = np.round(coords)
    return np.where(np.abs(coords - nearest) < SNAP_TOLERANCE, nearest, coords)


def _bilinear(values: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) values at in-range float coordinates (u = col, v = row)."""
    h, w = values.shape[:2]
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (u - x0)[..., None]
    wy = (v - y0)[..., None]
    return (
        values[y0, x0] * (1 - wx) * (1 - wy)
        + values[y0, x1] * wx * (1 - wy)
        + values[y1, x0] * (1 - wx) * wy
        + values[y1, x1] * wx * wy
    )


def inverse_warp(source: Image, target_depth: DepthMap, pose: Pose, k: CameraIntrinsics) -> WarpResult:
    """Rebuild the target view by sampling the source along target-depth rays.

    `pose` maps target-camera points into the source camera. Pixels whose ray
    lands outside the source, or behind it, are invalid and take the
    edge-clamped sample.
    """
    h, w = target_depth.shape
    if (source.height, source.width) != (h, w):
        raise InputValidationError(
            f"source image {source.height}x{source.width} and target depth {h}x{w} differ in size"
        )

    points = backproject(target_depth, k).points
    u, v = project(pose.apply(points), k)
    u = _snap(u)
    v = _snap(v)
    with np.errstate(invalid="ignore"):
        valid = (
            target_depth.valid
            & np.isfinite(u)
            & np.isfinite(v)
            & (u >= 0)
            & (u <= w - 1)
            & (v >= 0)
            & (v <= h - 1)
        )

    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    u = np.clip(np.where(np.isnan(u), cols, u), 0, w - 1)
    v = np.clip(np.where(np.isnan(v), rows, v), 0, h - 1)
    warped = np.clip(_bilinear(source.values, u, v), 0.0, 1.0)
    return WarpResult(Image(warped), valid)


def per_pixel_min_loss(candidates: Sequence[np.ndarray]) -> np.ndarray:
    if len(candidates) == 0:
        raise InputValidationError("at least one candidate error map is required")
    shape = np.shape(candidates[0])
    if any(np.shape(c) != shape for c in candidates):
        raise InputValidationError("candidate error maps differ in size")
    return np.minimum.reduce([np.asarray(c, dtype=np.float64) for c in candidates])


def minimum_reprojection(
    target: Image,
    warped: Sequence[Image],
    raw: Sequence[Image] = (),
    alpha: float = 0.85,
    valid: Optional[Sequence[np.ndarray]] = None,
) -> np.ndarray:
    """Per-pixel minimum error over warped sources and the unwarped sources themselves.

    With `valid`, one mask per warped source, a warped candidate drops out
    wherever its sample was invalid. Pixels no candidate covers are +inf.
    """
    if valid is not None and len(valid) != len(warped):
        raise InputValidationError("give one validity mask per warped source")
    candidates = [photometric_error(c, target, alpha) for c in warped]
    if valid is not None:
        candidates = [np.where(np.asarray(m, dtype=bool), e, np.inf) for e, m in zip(candidates, valid)]
    candidates += [photometric_error(c, target, alpha) for c in raw]
    return per_pixel_min_loss(candidates)


def smoothness_loss(depth: DepthMap, image: Image) -> float:
    """Edge-aware smoothness of mean-normalised inverse depth."""
    if depth.shape != (image.height, image.width):
        raise InputValidationError("depth and image differ in size")
    if not np.all(depth.valid):
        raise InputValidationError("smoothness needs a strictly positive depth at every pixel")

    disparity = 1.0 / depth.values
    disparity = disparity / disparity.mean()
    grad_d_x = np.abs(disparity[:, 1:] - disparity[:, :-1])
    grad_d_y = np.abs(disparity[1:, :] - disparity[:-1, :])

    img = image.values
    grad_i_x = np.abs(img[:, 1:] - img[:, :-1]).mean(axis=2)
    grad_i_y = np.abs(img[1:, :] - img[:-1, :]).mean(axis=2)

    loss = 0.0
    if grad_d_x.size:
        loss += float((grad_d_x * np.exp(-grad_i_x)).mean())
    if grad_d_y.size:
        loss += float((grad_d_y * np.exp(-grad_i_y)).mean())
    return loss


def overall_loss(reconstruction: Sequence[float], smoothness: Sequence[float], weights: LossWeights) -> float:
    """Sum over scales of mu * v_i * Lp_i + lambda * w_i * Ls_i."""
    if not (len(reconstruction) == len(smoothness) == weights.scales):
        raise InputValidationError(
            f"got {len(reconstruction)} reconstruction and {len(smoothness)} smoothness terms "
            f"for {weights.scales} scales"
        )
    total = 0.0
    for lp, ls, v, w in zip(reconstruction, smoothness, weights.v, weights.w):
        total += weights.mu * v * lp + weights.smoothness * w * ls
    return total
