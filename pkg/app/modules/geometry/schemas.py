"""Types exchanged by the scale-recovery pipeline.

Grids are numpy float64 arrays, read-only once wrapped. Camera coordinates
are y-down: x to the right, y towards the ground, z along the optical axis.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError

from app.core.errors import InputValidationError


def _frozen(array, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


class DepthKind(str, Enum):
    RELATIVE = "relative"
    ABSOLUTE = "absolute"


class CameraIntrinsics(BaseModel):
    model_config = ConfigDict(frozen=True)

    fx: PositiveFloat
    fy: PositiveFloat
    cx: float
    cy: float
    # Image size the intrinsics were calibrated for, when known
    width: Optional[PositiveInt] = None
    height: Optional[PositiveInt] = None

    @classmethod
    def parse(cls, data: dict) -> "CameraIntrinsics":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            err = e.errors()[0]
            loc = ".".join(str(p) for p in err["loc"])
            raise InputValidationError(f"invalid intrinsics: {loc}: {err['msg']}") from e

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def check_shape(self, height: int, width: int) -> None:
        if self.width is not None and self.width != width:
            raise InputValidationError(f"intrinsics width {self.width} does not match depth width {width}")
        if self.height is not None and self.height != height:
            raise InputValidationError(f"intrinsics height {self.height} does not match depth height {height}")
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise InputValidationError(
                f"principal point ({self.cx}, {self.cy}) outside a {width}x{height} image"
            )


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray
    kind: DepthKind
    valid: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InputValidationError(f"depth map must be 2-D, got shape {values.shape}")
        with np.errstate(invalid="ignore"):
            if self.valid is None:
                valid = np.isfinite(values) & (values > 0)
            else:
                valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != values.shape:
                raise InputValidationError("validity mask shape differs from depth shape")
            if not np.all(np.isfinite(values[valid])) or np.any(values[valid] <= 0):
                raise InputValidationError("valid depth pixels must be finite and positive")
        values = np.where(valid, values, 0.0)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid, bool))
        object.__setattr__(self, "kind", DepthKind(self.kind))

    @classmethod
    def from_array(cls, values, kind=DepthKind.RELATIVE) -> "DepthMap":
        """Wrap raw file data: non-finite and non-positive pixels become holes."""
        raw = np.asarray(values, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            valid = np.isfinite(raw) & (raw > 0)
        return cls(np.where(valid, raw, 0.0), kind, valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    def scaled(self, factor: float, kind: Optional[DepthKind] = None) -> "DepthMap":
        return DepthMap(self.values * factor, kind or self.kind, self.valid)


@dataclass(frozen=True)
class PointGrid:
    """Per-pixel camera-frame points, shape (H, W, 3)."""

    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points))
        object.__setattr__(self, "valid", _frozen(self.valid, bool))

    @property
    def shape(self):
        return self.valid.shape

    @property
    def y(self) -> np.ndarray:
        return self.points[..., 1]


@dataclass(frozen=True)
class NormalMap:
    """Unit surface normals (H, W, 3); invalid pixels hold zeros."""

    vectors: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vectors", _frozen(self.vectors))
        object.__setattr__(self, "valid", _frozen(self.valid, bool))

    @property
    def shape(self):
        return self.valid.shape


@dataclass(frozen=True)
class GroundMask:
    mask: np.ndarray
    valid_pixel_count: int

    def __post_init__(self):
        object.__setattr__(self, "mask", _frozen(self.mask, bool))

    @property
    def ground_pixel_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def ground_ratio(self) -> float:
        if self.valid_pixel_count == 0:
            return 0.0
        return self.ground_pixel_count / self.valid_pixel_count


@dataclass(frozen=True)
class HeightSamples:
    """One camera-height estimate per ground pixel, with its source pixel."""

    values: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    ground_ratio: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "rows", _frozen(self.rows, np.int64))
        object.__setattr__(self, "cols", _frozen(self.cols, np.int64))

    def __len__(self) -> int:
        return int(self.values.size)


class ScaleEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimated_height: float = Field(..., gt=0, description="camera height measured in relative units")
    camera_height: float = Field(..., gt=0, description="true mounting height, meters")
    scale_factor: float = Field(..., gt=0, description="meters per relative unit")
    ground_ratio: float = Field(..., ge=0, le=1)
    n_samples: int = Field(..., ge=0)
    low_confidence: bool = False


@dataclass(frozen=True)
class RecoveryResult:
    """Absolute depth plus every intermediate, for diagnostics."""

    absolute: DepthMap
    estimate: ScaleEstimate
    ground: GroundMask
    normals: NormalMap
    points: PointGrid
    samples: HeightSamples = field(repr=False)
