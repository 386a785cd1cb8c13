from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.errors import InputValidationError

ORTHONORMAL_TOLERANCE = 1e-9

# Per-scale weights, coarsest scale first
SCALE_WEIGHTS = (1 / 8, 1 / 4, 1 / 2, 1.0)


@dataclass(frozen=True)
class Image:
    """Intensities in [0, 1], stored as (H, W, C) with C in {1, 3}."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim == 2:
            values = values[..., None]
        if values.ndim != 3 or values.shape[2] not in (1, 3):
            raise InputValidationError(f"image must be HxW, HxWx1 or HxWx3, got {values.shape}")
        if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0 or values.max(initial=0.0) > 1:
            raise InputValidationError("image intensities must be finite and within [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class Pose:
    """Rigid transform taking target-camera points into the source camera."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64, copy=True)
        t = np.array(self.translation, dtype=np.float64, copy=True).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InputValidationError("pose needs a 3x3 rotation and a 3-vector translation")
        if not np.allclose(r.T @ r, np.eye(3), rtol=0, atol=ORTHONORMAL_TOLERANCE):
            raise InputValidationError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise InputValidationError("rotation determinant is not +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_dict(cls, data: dict) -> "Pose":
        try:
            return cls(data["rotation"], data["translation"])
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, InputValidationError):
                raise
            raise InputValidationError(f"invalid pose: {e}") from e

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self after other."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    mu: float = 1.0
    smoothness: float = Field(0.001, alias="lambda")
    alpha: float = Field(0.85, ge=0, le=1)
    v: Tuple[float, ...] = SCALE_WEIGHTS
    w: Tuple[float, ...] = SCALE_WEIGHTS

    @model_validator(mode="after")
    def _check_scales(self):
        if len(self.v) != len(self.w):
            raise ValueError("v and w need one entry per scale")
        if any(not 0 < x <= 1 for x in self.v + self.w):
            raise ValueError("per-scale weights must lie in (0, 1]")
        return self

    @classmethod
    def baseline(cls, w: Tuple[float, ...] = SCALE_WEIGHTS, **kwargs) -> "LossWeights":
        """Reconstruction terms weighted equally at every scale (v = 1)."""
        return cls(v=(1.0,) * len(w), w=w, **kwargs)

    @property
    def scales(self) -> int:
        return len(self.v)


@dataclass(frozen=True)
class WarpResult:
    """Source resampled into the target view; `valid` is False where the ray left the source."""

    image: Image
    valid: np.ndarray
