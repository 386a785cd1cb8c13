from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, model_validator

from app.core.errors import InputValidationError
from app.modules.geometry.schemas import CameraIntrinsics, DepthMap, GroundMask, NormalMap


class SurfaceLabel(IntEnum):
    SKY = 0
    GROUND = 1
    WALL = 2
    BOX = 3


class BoxSpec(BaseModel):
    """Axis-aligned box in the level frame (camera frame with the pitch removed), meters."""

    model_config = ConfigDict(frozen=True)

    center: Tuple[float, float, float]
    size: Tuple[PositiveFloat, PositiveFloat, PositiveFloat]


class NoiseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma: float = Field(0.0, ge=0, description="std of the multiplicative gaussian factor")
    outlier_fraction: float = Field(0.0, ge=0, le=1)
    outlier_scale: PositiveFloat = 1.0


class SceneSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    width: PositiveInt
    height: PositiveInt
    fx: PositiveFloat
    fy: PositiveFloat
    cx: float
    cy: float
    camera_height: PositiveFloat
    pitch_deg: float = Field(0.0, gt=-90, lt=90)
    wall_distance: Optional[PositiveFloat] = None
    boxes: List[BoxSpec] = []
    noise: NoiseSpec = NoiseSpec()
    seed: int = 0
    # Relative maps written by `synth` are the absolute map divided by gamma
    gamma: PositiveFloat = 1.0

    @model_validator(mode="after")
    def _check_principal_point(self):
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        return self

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width, height=self.height)


SCENE_KEYS = {
    "width", "height", "fx", "fy", "cx", "cy", "camera_height", "pitch_deg",
    "wall_distance", "seed", "gamma",
}
NOISE_KEYS = {"noise_sigma": "sigma", "outlier_fraction": "outlier_fraction", "outlier_scale": "outlier_scale"}


def parse_scene_text(text: str) -> SceneSpec:
    """Parse the `key = value` scene format.

    Blank lines and `#` comments are ignored. `box = cx, cy, cz, sx, sy, sz`
    may repeat; every other key appears at most once.
    """
    values, noise, boxes = {}, {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputValidationError(f"scene line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "box":
            try:
                nums = [float(x) for x in value.split(",")]
            except ValueError:
                raise InputValidationError(f"scene line {lineno}: box values must be numbers") from None
            if len(nums) != 6:
                raise InputValidationError(f"scene line {lineno}: box needs cx, cy, cz, sx, sy, sz")
            boxes.append({"center": nums[:3], "size": nums[3:]})
        elif key in NOISE_KEYS or key in SCENE_KEYS:
            target, name = (noise, NOISE_KEYS[key]) if key in NOISE_KEYS else (values, key)
            if name in target:
                raise InputValidationError(f"scene line {lineno}: duplicate key '{key}'")
            target[name] = value
        else:
            raise InputValidationError(f"scene line {lineno}: unknown key '{key}'")

    try:
        return SceneSpec(**values, boxes=boxes, noise=NoiseSpec(**noise))
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(p) for p in err["loc"]) or "scene"
        raise InputValidationError(f"invalid scene spec: {loc}: {err['msg']}") from e


@dataclass(frozen=True)
class SyntheticScene:
    """Rendered depth plus the closed-form answers for it."""

    depth: DepthMap
    labels: np.ndarray
    ground: GroundMask
    normals: NormalMap
    camera_height: float
    intrinsics: CameraIntrinsics
