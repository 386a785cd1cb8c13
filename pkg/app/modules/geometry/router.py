from pathlib import Path
from typing import Optional

from fastapi import APIRouter, File, Form, UploadFile

from app.core import storage
from app.core.config import DEFAULT_ANGLE_THRESHOLD_DEG, build_config
from app.modules.geometry.engine import recover_metric_depth
from app.modules.geometry.schemas import CameraIntrinsics, DepthKind

router = APIRouter()


# --- ROUTES ---

@router.post("/recover")
def recover(
    depth: UploadFile = File(...),
    fx: float = Form(...),
    fy: float = Form(...),
    cx: float = Form(...),
    cy: float = Form(...),
    camera_height: float = Form(...),
    angle_threshold_deg: float = Form(DEFAULT_ANGLE_THRESHOLD_DEG),
    min_samples: Optional[int] = Form(None),
):
    """Scale report for one uploaded relative depth map (.pfm, .pgm or .png)."""
    cfg = build_config(camera_height_m=camera_height, angle_threshold_deg=angle_threshold_deg, min_samples=min_samples)
    k = CameraIntrinsics.parse({"fx": fx, "fy": fy, "cx": cx, "cy": cy})
    name = depth.filename or "depth.pfm"
    relative = storage.decode_depth(depth.file.read(), Path(name).suffix, DepthKind.RELATIVE, name)

    result = recover_metric_depth(
        relative,
        k,
        cfg.require_camera_height(),
        angle_threshold_deg=cfg.angle_threshold_deg,
        low_confidence_ratio=cfg.low_confidence_ratio,
        min_samples=cfg.min_samples,
    )
    return {"frame": name, "height": relative.height, "width": relative.width, **result.estimate.model_dump()}
