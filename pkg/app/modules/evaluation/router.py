from enum import Enum
from pathlib import Path

from fastapi import APIRouter, File, Form, UploadFile

from app.core import storage
from app.core.config import DEFAULT_MAX_DEPTH, DEFAULT_MIN_DEPTH, build_config
from app.modules.evaluation.engine import compute_metrics, gt_median_scale
from app.modules.geometry.schemas import DepthKind

router = APIRouter()


class UploadScaleMode(str, Enum):
    NONE = "none"
    GT_MEDIAN = "gt-median"


def _read_upload(upload: UploadFile, kind: DepthKind):
    name = upload.filename or "depth.pfm"
    return storage.decode_depth(upload.file.read(), Path(name).suffix, kind, name)


# --- ROUTES ---

@router.post("/metrics")
def metrics(
    pred: UploadFile = File(...),
    gt: UploadFile = File(...),
    scale_mode: UploadScaleMode = Form(UploadScaleMode.NONE),
    min_depth: float = Form(DEFAULT_MIN_DEPTH),
    max_depth: float = Form(DEFAULT_MAX_DEPTH),
):
    cfg = build_config(min_depth=min_depth, max_depth=max_depth).eval_config()
    gt_depth = _read_upload(gt, DepthKind.ABSOLUTE)
    if scale_mode is UploadScaleMode.GT_MEDIAN:
        relative = _read_upload(pred, DepthKind.RELATIVE)
        scale = gt_median_scale(relative, gt_depth, cfg)
        prediction = relative.scaled(scale, DepthKind.ABSOLUTE)
    else:
        scale = 1.0
        prediction = _read_upload(pred, DepthKind.ABSOLUTE)

    result = compute_metrics(prediction, gt_depth, cfg)
    return {"scale_mode": scale_mode.value, "scale": scale, **result.model_dump()}
