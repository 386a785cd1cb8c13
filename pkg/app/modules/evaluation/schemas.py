from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import DEFAULT_MAX_DEPTH, DEFAULT_MIN_DEPTH, Crop, check_crop
from app.modules.geometry.schemas import CameraIntrinsics, DepthMap

# Error metrics first (lower is better), then threshold accuracies (higher is better)
ERROR_METRICS = ("abs_rel", "sq_rel", "rmse", "rmse_log")
ACCURACY_METRICS = ("delta1", "delta2", "delta3")
METRIC_NAMES = ERROR_METRICS + ACCURACY_METRICS

STATUS_OK = "ok"


class EvalConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    min_depth: float = Field(DEFAULT_MIN_DEPTH, gt=0)
    max_depth: float = Field(DEFAULT_MAX_DEPTH, gt=0)
    crop: Optional[Crop] = None

    @model_validator(mode="after")
    def _check_range(self):
        if self.min_depth >= self.max_depth:
            raise ValueError("min_depth must be smaller than max_depth")
        check_crop(self.crop)
        return self


class DepthMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    abs_rel: float = Field(ge=0)
    sq_rel: float = Field(ge=0)
    rmse: float = Field(ge=0)
    rmse_log: float = Field(ge=0)
    delta1: float = Field(ge=0, le=1)
    delta2: float = Field(ge=0, le=1)
    delta3: float = Field(ge=0, le=1)
    pixels: int = Field(0, ge=0, description="pixels the metrics were computed over")

    def values(self) -> List[float]:
        return [getattr(self, name) for name in METRIC_NAMES]


# --- Per-frame records ---


class SweepRecord(BaseModel):
    frame_id: str
    ground_ratio: Optional[float] = Field(None, ge=0, le=1)
    scale_error: Optional[float] = None
    dgc_scale: Optional[float] = None
    gt_scale: Optional[float] = None
    status: str = STATUS_OK

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


class FrameComparison(BaseModel):
    frame_id: str
    ground_ratio: Optional[float] = None
    dgc_scale: Optional[float] = None
    gt_scale: Optional[float] = None
    dgc: Optional[DepthMetrics] = None
    gt: Optional[DepthMetrics] = None
    status: str = STATUS_OK

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


class WinRate(BaseModel):
    """Fractions of successful frames where each estimator wins on one metric."""

    metric: str
    dgc_better: float
    gt_better: float
    ties: float


class EstimatorComparison(BaseModel):
    frames: List[FrameComparison]
    win_rates: List[WinRate]
    evaluated: int = Field(description="frames where both estimators succeeded")

    def summary(self) -> dict:
        return {
            "frames": len(self.frames),
            "evaluated": self.evaluated,
            "failed": len(self.frames) - self.evaluated,
            "win_rates": {w.metric: w.model_dump(exclude={"metric"}) for w in self.win_rates},
        }


@dataclass(frozen=True)
class EvalFrame:
    """One frame held in memory: relative prediction, intrinsics and ground truth."""

    frame_id: str
    depth: DepthMap
    intrinsics: CameraIntrinsics
    gt: DepthMap
    camera_height: Optional[float] = None
    mask: Optional[np.ndarray] = None

    def load(self) -> "EvalFrame":
        return self
