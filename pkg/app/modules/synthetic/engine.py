"""Analytic scenes with known depth, ground, normals and camera height.

Rays are cast through every pixel against a (possibly pitched) ground
plane, an optional frontal wall and axis-aligned boxes. Because pixel rays
are scaled to z = 1, the hit distance along a ray is the pixel's depth.
"""
import math

import numpy as np

from app.core.errors import InputValidationError
from app.modules.geometry.engine import GROUND_NORMAL, orient_normals, pixel_rays, rotation_x
from app.modules.geometry.schemas import DepthKind, DepthMap, GroundMask, NormalMap
from app.modules.photometric.schemas import Image
from app.modules.synthetic.schemas import BoxSpec, NoiseSpec, SceneSpec, SurfaceLabel, SyntheticScene

# Rays closer than this to parallel with the ground never reach it
PARALLEL_EPS = 1e-12
MIN_VALID_DEPTH = 1e-6


def _intersect_box(rays_level: np.ndarray, box: BoxSpec):
    """Slab test from the origin. Returns (entry distance, entry face normal), inf on miss."""
    lo = np.asarray(box.center) - np.asarray(box.size) / 2
    hi = np.asarray(box.center) + np.asarray(box.size) / 2
    parallel = rays_level == 0
    safe = np.where(parallel, 1.0, rays_level)
    t1 = lo / safe
    t2 = hi / safe
    inside = (lo <= 0) & (hi >= 0)
    t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))

    enter = t_near.max(axis=-1)
    leave = t_far.min(axis=-1)
    hit = (enter <= leave) & (enter > 0)

    axis = t_near.argmax(axis=-1)
    normal = np.zeros(rays_level.shape)
    direction = np.take_along_axis(rays_level, axis[..., None], axis=-1)[..., 0]
    np.put_along_axis(normal, axis[..., None], -np.sign(direction)[..., None], axis=-1)
    return np.where(hit, enter, np.inf), normal


def gen_scene(spec: SceneSpec) -> SyntheticScene:
    k = spec.intrinsics
    rays = pixel_rays(spec.height, spec.width, k)
    shape = (spec.height, spec.width)
    pitch = rotation_x(spec.pitch_deg)

    depth = np.full(shape, np.inf)
    labels = np.full(shape, SurfaceLabel.SKY, dtype=np.int8)
    normals = np.zeros(shape + (3,))

    def keep_nearest(t, label, normal):
        closer = t < depth
        depth[closer] = t[closer]
        labels[closer] = label
        normals[closer] = normal if np.ndim(normal) == 1 else normal[closer]

    ground_normal = pitch @ GROUND_NORMAL
    denom = rays @ ground_normal
    with np.errstate(divide="ignore"):
        t_ground = np.where(denom > PARALLEL_EPS, spec.camera_height / np.where(denom > PARALLEL_EPS, denom, 1.0), np.inf)
    keep_nearest(t_ground, SurfaceLabel.GROUND, ground_normal)

    if spec.wall_distance is not None:
        keep_nearest(np.full(shape, float(spec.wall_distance)), SurfaceLabel.WALL, np.array([0.0, 0.0, -1.0]))

    if spec.boxes:
        # Level-frame coordinates are pitch^T applied to camera-frame ones
        rays_level = rays @ pitch
        # Painter's order: nearest box first so ties keep the front surface
        for box in sorted(spec.boxes, key=lambda b: b.center[2]):
            t_box, normal_level = _intersect_box(rays_level, box)
            keep_nearest(t_box, SurfaceLabel.BOX, normal_level @ pitch.T)

    valid = np.isfinite(depth)
    values = np.where(valid, depth, 0.0)
    normals = orient_normals(normals, rays * values[..., None])
    return SyntheticScene(
        depth=DepthMap(values, DepthKind.ABSOLUTE, valid),
        labels=labels,
        ground=GroundMask(labels == SurfaceLabel.GROUND, int(np.count_nonzero(valid))),
        normals=NormalMap(normals, valid),
        camera_height=float(spec.camera_height),
        intrinsics=k,
    )


def degrade(depth: DepthMap, noise: NoiseSpec, seed: int = 0) -> DepthMap:
    """Multiplicative gaussian noise on every valid pixel, then a fixed count of outliers."""
    rng = np.random.default_rng(seed)
    values = np.array(depth.values, copy=True)
    flat = values.reshape(-1)
    idx = np.flatnonzero(depth.valid)

    if noise.sigma > 0:
        flat[idx] *= 1.0 + noise.sigma * rng.standard_normal(idx.size)
    n_outliers = math.floor(noise.outlier_fraction * idx.size)
    if n_outliers:
        chosen = rng.choice(idx, size=n_outliers, replace=False)
        flat[chosen] *= noise.outlier_scale

    values[depth.valid & (values <= 0)] = MIN_VALID_DEPTH
    return DepthMap(values, depth.kind, depth.valid)


def relativize(depth: DepthMap, gamma: float) -> DepthMap:
    """Absolute map divided by gamma and tagged relative (the true scale is gamma)."""
    if not (math.isfinite(gamma) and gamma > 0):
        raise InputValidationError(f"gamma must be positive, got {gamma}")
    return DepthMap(depth.values / gamma, DepthKind.RELATIVE, depth.valid)


def gradient_image(height: int, width: int, channels: int = 1, x_slope: float = 0.8, y_slope: float = 0.2) -> Image:
    """Linear ramp I = x_slope * col/(W-1) + y_slope * row/(H-1); exact under bilinear sampling."""
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    ramp = x_slope * cols / max(width - 1, 1) + y_slope * rows / max(height - 1, 1)
    return Image(np.repeat(np.clip(ramp, 0.0, 1.0)[..., None], channels, axis=2))


def checkerboard_image(height: int, width: int, cell: int = 4, low: float = 0.2, high: float = 0.8) -> Image:
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    board = ((rows // cell + cols // cell) % 2).astype(np.float64)
    return Image(low + (high - low) * board)
