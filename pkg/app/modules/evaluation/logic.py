"""Multi-frame runs: robustness sweep, estimator comparison and manifests.

Each frame is processed independently; a frame that fails is reported with
its error kind as status and never stops the run.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

from pydantic import BaseModel, PositiveFloat, ValidationError

from app.core import storage
from app.core.config import RunConfig
from app.core.errors import DepthScaleError, InputValidationError, NoGroundDetected
from app.modules.evaluation.engine import gt_median_scale, masked_metrics
from app.modules.evaluation.schemas import (
    ACCURACY_METRICS,
    METRIC_NAMES,
    EstimatorComparison,
    EvalFrame,
    FrameComparison,
    SweepRecord,
    WinRate,
)
from app.modules.geometry.engine import recover_metric_depth
from app.modules.geometry.schemas import DepthKind

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

TIE_REL_TOL = 1e-9
TIE_ABS_TOL = 1e-12

SWEEP_COLUMNS = ("frame", "ground_ratio", "scale_error", "status")
COMPARE_COLUMNS = (
    ("frame", "status", "ground_ratio", "dgc_scale", "gt_scale")
    + tuple(f"dgc_{m}" for m in METRIC_NAMES)
    + tuple(f"gt_{m}" for m in METRIC_NAMES)
)


def run_frames(task: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> List[R]:
    """Apply task to every item, up to `jobs` at a time; results keep input order."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [task(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(task, items))


# --- Manifest-backed frames ---


class ManifestEntry(BaseModel):
    id: str
    depth: str
    intrinsics: str
    gt: str
    camera_height: Optional[PositiveFloat] = None
    mask: Optional[str] = None


class Manifest(BaseModel):
    frames: List[ManifestEntry]


@dataclass(frozen=True)
class FrameFiles:
    """Frame whose files are only read when it is processed."""

    frame_id: str
    depth: Path
    intrinsics: Path
    gt: Path
    camera_height: Optional[float] = None
    mask: Optional[Path] = None

    def load(self) -> EvalFrame:
        return EvalFrame(
            frame_id=self.frame_id,
            depth=storage.read_depth(self.depth, DepthKind.RELATIVE),
            intrinsics=storage.read_intrinsics(self.intrinsics),
            gt=storage.read_depth(self.gt, DepthKind.ABSOLUTE),
            camera_height=self.camera_height,
            mask=storage.read_mask(self.mask) if self.mask is not None else None,
        )


def parse_manifest(path) -> List[FrameFiles]:
    """Frames of a JSON manifest; relative paths resolve against its directory."""
    path = Path(path)
    data = storage.read_json(path)
    try:
        manifest = Manifest.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(p) for p in err["loc"])
        raise InputValidationError(f"invalid manifest {path}: {loc}: {err['msg']}") from e

    base = path.parent
    ids = [entry.id for entry in manifest.frames]
    if len(set(ids)) != len(ids):
        raise InputValidationError(f"invalid manifest {path}: frame ids must be unique")
    return [
        FrameFiles(
            frame_id=entry.id,
            depth=base / entry.depth,
            intrinsics=base / entry.intrinsics,
            gt=base / entry.gt,
            camera_height=entry.camera_height,
            mask=base / entry.mask if entry.mask else None,
        )
        for entry in manifest.frames
    ]


# --- Sweep ---


def _recover(frame: EvalFrame, cfg: RunConfig):
    height = frame.camera_height if frame.camera_height is not None else cfg.require_camera_height()
    return recover_metric_depth(
        frame.depth,
        frame.intrinsics,
        height,
        angle_threshold_deg=cfg.angle_threshold_deg,
        low_confidence_ratio=cfg.low_confidence_ratio,
        min_samples=cfg.min_samples,
    )


def sweep_frame(item, cfg: RunConfig) -> SweepRecord:
    try:
        frame = item.load()
        result = _recover(frame, cfg)
        gt_scale = gt_median_scale(frame.depth, frame.gt, cfg.eval_config())
    except NoGroundDetected as e:
        logger.warning("frame %s: %s", item.frame_id, e)
        return SweepRecord(frame_id=item.frame_id, ground_ratio=e.ground_ratio, status=e.kind)
    except DepthScaleError as e:
        logger.warning("frame %s: %s", item.frame_id, e)
        return SweepRecord(frame_id=item.frame_id, status=e.kind)

    dgc_scale = result.estimate.scale_factor
    return SweepRecord(
        frame_id=item.frame_id,
        ground_ratio=result.estimate.ground_ratio,
        scale_error=(dgc_scale - gt_scale) / gt_scale,
        dgc_scale=dgc_scale,
        gt_scale=gt_scale,
    )


def robustness_sweep(items: Sequence, cfg: RunConfig) -> List[SweepRecord]:
    records = run_frames(lambda item: sweep_frame(item, cfg), items, cfg.jobs)
    logger.info("sweep: %d frames, %d failed", len(records), sum(not r.ok for r in records))
    return records


def sweep_rows(records: Iterable[SweepRecord]):
    for r in records:
        yield (r.frame_id, r.ground_ratio, r.scale_error, r.status)


# --- DGC against GT-median scaling ---


def compare_frame(item, cfg: RunConfig) -> FrameComparison:
    ground_ratio = None
    try:
        frame = item.load()
        eval_cfg = cfg.eval_config()
        result = _recover(frame, cfg)
        ground_ratio = result.estimate.ground_ratio
        gt_scale = gt_median_scale(frame.depth, frame.gt, eval_cfg)
        dgc = masked_metrics(result.absolute, frame.gt, frame.mask, eval_cfg)
        gt = masked_metrics(frame.depth.scaled(gt_scale, DepthKind.ABSOLUTE), frame.gt, frame.mask, eval_cfg)
    except NoGroundDetected as e:
        logger.warning("frame %s: %s", item.frame_id, e)
        return FrameComparison(frame_id=item.frame_id, ground_ratio=e.ground_ratio, status=e.kind)
    except DepthScaleError as e:
        logger.warning("frame %s: %s", item.frame_id, e)
        return FrameComparison(frame_id=item.frame_id, ground_ratio=ground_ratio, status=e.kind)

    return FrameComparison(
        frame_id=item.frame_id,
        ground_ratio=ground_ratio,
        dgc_scale=result.estimate.scale_factor,
        gt_scale=gt_scale,
        dgc=dgc,
        gt=gt,
    )


def _winner(metric: str, dgc_value: float, gt_value: float) -> str:
    if math.isclose(dgc_value, gt_value, rel_tol=TIE_REL_TOL, abs_tol=TIE_ABS_TOL):
        return "tie"
    dgc_lower = dgc_value < gt_value
    if metric in ACCURACY_METRICS:
        return "gt" if dgc_lower else "dgc"
    return "dgc" if dgc_lower else "gt"


def win_rates(frames: Sequence[FrameComparison]) -> List[WinRate]:
    done = [f for f in frames if f.ok]
    rates = []
    for metric in METRIC_NAMES:
        counts = {"dgc": 0, "gt": 0, "tie": 0}
        for f in done:
            counts[_winner(metric, getattr(f.dgc, metric), getattr(f.gt, metric))] += 1
        n = len(done) or 1
        rates.append(
            WinRate(metric=metric, dgc_better=counts["dgc"] / n, gt_better=counts["gt"] / n, ties=counts["tie"] / n)
        )
    return rates


def compare_estimators(items: Sequence, cfg: RunConfig) -> EstimatorComparison:
    frames = run_frames(lambda item: compare_frame(item, cfg), items, cfg.jobs)
    evaluated = sum(f.ok for f in frames)
    logger.info("compare: %d frames, %d evaluated", len(frames), evaluated)
    return EstimatorComparison(frames=frames, win_rates=win_rates(frames), evaluated=evaluated)


def comparison_rows(frames: Iterable[FrameComparison]):
    for f in frames:
        dgc = f.dgc.values() if f.dgc else [None] * len(METRIC_NAMES)
        gt = f.gt.values() if f.gt else [None] * len(METRIC_NAMES)
        yield (f.frame_id, f.status, f.ground_ratio, f.dgc_scale, f.gt_scale, *dgc, *gt)
