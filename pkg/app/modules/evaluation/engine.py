"""Depth evaluation metrics and the ground-truth median scale baseline."""
from typing import Optional, Sequence

import numpy as np

from app.core.errors import InputValidationError
from app.modules.evaluation.schemas import METRIC_NAMES, DepthMetrics, EvalConfig
from app.modules.geometry.schemas import DepthKind, DepthMap

DELTA_BASE = 1.25


def evaluation_pixels(
    pred: DepthMap, gt: DepthMap, cfg: EvalConfig, mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """Pixels where gt lies strictly inside (min_depth, max_depth) and pred is valid."""
    if pred.shape != gt.shape:
        raise InputValidationError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    keep = gt.valid & pred.valid & (gt.values > cfg.min_depth) & (gt.values < cfg.max_depth)
    if cfg.crop is not None:
        x, y, w, h = cfg.crop
        window = np.zeros_like(keep)
        window[y : y + h, x : x + w] = True
        keep &= window
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != gt.shape:
            raise InputValidationError(f"mask {mask.shape} and ground truth {gt.shape} differ in size")
        keep &= mask
    return keep


def _errors(pred: np.ndarray, gt: np.ndarray) -> DepthMetrics:
    thresh = np.maximum(gt / pred, pred / gt)
    diff = pred - gt
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / gt)),
        sq_rel=float(np.mean(diff ** 2 / gt)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(pred) - np.log(gt)) ** 2))),
        delta1=float(np.mean(thresh < DELTA_BASE)),
        delta2=float(np.mean(thresh < DELTA_BASE ** 2)),
        delta3=float(np.mean(thresh < DELTA_BASE ** 3)),
        pixels=int(gt.size),
    )


def _require_absolute(depth: DepthMap, name: str) -> None:
    if depth.kind is not DepthKind.ABSOLUTE:
        raise InputValidationError(f"{name} must be an absolute depth map")


def masked_metrics(pred: DepthMap, gt: DepthMap, mask: Optional[np.ndarray], cfg: EvalConfig) -> DepthMetrics:
    _require_absolute(pred, "prediction")
    _require_absolute(gt, "ground truth")
    keep = evaluation_pixels(pred, gt, cfg, mask)
    if not keep.any():
        raise InputValidationError("no ground-truth pixels left to evaluate")
    p = np.clip(pred.values[keep], cfg.min_depth, cfg.max_depth)
    return _errors(p, gt.values[keep])


def compute_metrics(pred: DepthMap, gt: DepthMap, cfg: EvalConfig = EvalConfig()) -> DepthMetrics:
    return masked_metrics(pred, gt, None, cfg)


def gt_median_scale(pred: DepthMap, gt: DepthMap, cfg: EvalConfig = EvalConfig()) -> float:
    """median(gt) / median(pred) over the pixels both maps can be evaluated on."""
    keep = evaluation_pixels(pred, gt, cfg)
    if not keep.any():
        raise InputValidationError("prediction and ground truth share no valid pixels")
    return float(np.median(gt.values[keep]) / np.median(pred.values[keep]))


def mean_metrics(records: Sequence[DepthMetrics]) -> DepthMetrics:
    """Per-frame average of each metric."""
    if not records:
        raise InputValidationError("no frames to aggregate")
    means = {name: float(np.mean([getattr(r, name) for r in records])) for name in METRIC_NAMES}
    return DepthMetrics(**means, pixels=sum(r.pixels for r in records))
