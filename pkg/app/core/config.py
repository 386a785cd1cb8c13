from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, model_validator

from app.core.errors import InputValidationError

# x, y, width, height in pixels
Crop = Tuple[int, int, int, int]

DEFAULT_ANGLE_THRESHOLD_DEG = 5.0
DEFAULT_LOW_CONFIDENCE_RATIO = 0.0103
DEFAULT_MIN_DEPTH = 1e-3
DEFAULT_MAX_DEPTH = 80.0


def check_crop(crop: Optional[Crop]) -> Optional[Crop]:
    if crop is None:
        return None
    x, y, w, h = crop
    if x < 0 or y < 0 or w <= 0 or h <= 0:
        raise ValueError("crop must be x,y >= 0 and w,h > 0")
    return crop


class RunConfig(BaseModel):
    """Settings shared by every batch command and the HTTP service."""

    model_config = ConfigDict(frozen=True)

    camera_height_m: Optional[PositiveFloat] = None
    angle_threshold_deg: float = Field(DEFAULT_ANGLE_THRESHOLD_DEG, gt=0, lt=90)
    low_confidence_ratio: float = Field(DEFAULT_LOW_CONFIDENCE_RATIO, gt=0, lt=1)
    min_samples: int = Field(1, ge=1)
    min_depth: float = Field(DEFAULT_MIN_DEPTH, gt=0)
    max_depth: float = Field(DEFAULT_MAX_DEPTH, gt=0)
    crop: Optional[Crop] = None
    jobs: int = Field(1, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.min_depth >= self.max_depth:
            raise ValueError("min_depth must be smaller than max_depth")
        check_crop(self.crop)
        return self

    def require_camera_height(self) -> float:
        if self.camera_height_m is None:
            raise InputValidationError("--camera-height is required for this command")
        return float(self.camera_height_m)

    def eval_config(self):
        from app.modules.evaluation.schemas import EvalConfig

        return EvalConfig(min_depth=self.min_depth, max_depth=self.max_depth, crop=self.crop)


def build_config(**values) -> RunConfig:
    """RunConfig from loose keyword values; None means 'use the default'."""
    try:
        return RunConfig(**{k: v for k, v in values.items() if v is not None})
    except ValidationError as e:
        raise InputValidationError(f"invalid configuration: {e.errors()[0]['msg']}") from e
