"""Batch command line: ``python -m app <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 no ground detected, 4 file I/O.
Failures print the error payload as JSON on stdout; logs go to stderr.
"""
import argparse
import logging
import sys
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from app.core import storage
from app.core.config import RunConfig, build_config
from app.core.errors import DepthScaleError, InputValidationError, StorageError
from app.core.log import configure_logging
from app.modules.evaluation.engine import gt_median_scale, masked_metrics, mean_metrics
from app.modules.evaluation.logic import (
    COMPARE_COLUMNS,
    SWEEP_COLUMNS,
    compare_estimators,
    comparison_rows,
    parse_manifest,
    robustness_sweep,
    run_frames,
    sweep_rows,
)
from app.modules.evaluation.schemas import METRIC_NAMES, STATUS_OK
from app.modules.geometry.engine import backproject, compute_normal_map, detect_ground, recover_metric_depth
from app.modules.geometry.schemas import DepthKind
from app.modules.photometric.engine import inverse_warp, minimum_reprojection, smoothness_loss
from app.modules.photometric.schemas import LossWeights
from app.modules.synthetic.engine import degrade, gen_scene, relativize
from app.modules.synthetic.schemas import SurfaceLabel, parse_scene_text

logger = logging.getLogger(__name__)

EVAL_COLUMNS = ("frame", "status", "scale") + METRIC_NAMES


class ScaleMode(str, Enum):
    DGC = "dgc"
    GT_MEDIAN = "gt-median"
    NONE = "none"


def _crop(text: str):
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("crop must be x,y,w,h integers") from None
    if len(values) != 4:
        raise argparse.ArgumentTypeError("crop must be x,y,w,h integers")
    return values


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return build_config(
        camera_height_m=getattr(args, "camera_height", None),
        angle_threshold_deg=getattr(args, "s_max_deg", None),
        low_confidence_ratio=getattr(args, "low_confidence_ratio", None),
        min_samples=getattr(args, "min_samples", None),
        min_depth=getattr(args, "min_depth", None),
        max_depth=getattr(args, "max_depth", None),
        crop=getattr(args, "crop", None),
        jobs=getattr(args, "jobs", None),
        seed=getattr(args, "seed", None),
    )


def _emit(payload) -> None:
    sys.stdout.write(storage.dumps_json(payload))


# --- Single-frame geometry commands ---


def _recover(depth, k, cfg: RunConfig, camera_height: Optional[float] = None):
    return recover_metric_depth(
        depth,
        k,
        camera_height if camera_height is not None else cfg.require_camera_height(),
        angle_threshold_deg=cfg.angle_threshold_deg,
        low_confidence_ratio=cfg.low_confidence_ratio,
        min_samples=cfg.min_samples,
    )


def cmd_recover(args, cfg: RunConfig) -> int:
    cfg.require_camera_height()
    storage.check_suffix(args.output, storage.DEPTH_SUFFIXES)
    depth = storage.read_depth(args.depth, DepthKind.RELATIVE)
    k = storage.read_intrinsics(args.intrinsics)
    result = _recover(depth, k, cfg)

    report = result.estimate.model_dump()
    storage.write_depth(args.output, result.absolute)
    if args.report:
        storage.write_json(args.report, report)
    _emit(report)
    return 0


def cmd_normals(args, cfg: RunConfig) -> int:
    storage.check_suffix(args.output, storage.NORMALS_SUFFIXES)
    depth = storage.read_depth(args.depth, DepthKind.RELATIVE)
    normals = compute_normal_map(backproject(depth, storage.read_intrinsics(args.intrinsics)))
    storage.write_normals(args.output, normals)
    return 0


def cmd_ground_mask(args, cfg: RunConfig) -> int:
    storage.check_suffix(args.output, storage.MASK_SUFFIXES)
    depth = storage.read_depth(args.depth, DepthKind.RELATIVE)
    points = backproject(depth, storage.read_intrinsics(args.intrinsics))
    ground = detect_ground(compute_normal_map(points), points, cfg.angle_threshold_deg)
    storage.write_mask(args.output, ground.mask)
    _emit({"ground_pixels": ground.ground_pixel_count, "ground_ratio": ground.ground_ratio})
    return 0


# --- Evaluation ---


def _files_by_stem(directory: Path, suffixes: Sequence[str]) -> dict:
    if not directory.is_dir():
        raise InputValidationError(f"{directory} is not a directory")
    found = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in suffixes:
            if path.stem in found:
                raise InputValidationError(f"{directory}: more than one file for frame '{path.stem}'")
            found[path.stem] = path
    return found


def _pair_eval_files(args):
    preds = _files_by_stem(Path(args.pred), storage.DEPTH_SUFFIXES)
    gts = _files_by_stem(Path(args.gt), storage.DEPTH_SUFFIXES)
    if set(preds) != set(gts):
        missing = sorted(set(preds) ^ set(gts))
        raise InputValidationError(f"prediction and ground-truth frames do not match: {', '.join(missing[:5])}")
    masks = {}
    if args.masks:
        masks = _files_by_stem(Path(args.masks), storage.MASK_SUFFIXES)
        if not set(preds) <= set(masks):
            raise InputValidationError("every frame needs a mask when --masks is given")
    return [(stem, preds[stem], gts[stem], masks.get(stem)) for stem in sorted(preds)]


def _eval_frame(frame, mode: ScaleMode, k, cfg: RunConfig):
    stem, pred_path, gt_path, mask_path = frame
    eval_cfg = cfg.eval_config()
    try:
        gt = storage.read_depth(gt_path, DepthKind.ABSOLUTE)
        mask = storage.read_mask(mask_path) if mask_path else None
        if mode is ScaleMode.NONE:
            scale = 1.0
            pred = storage.read_depth(pred_path, DepthKind.ABSOLUTE)
        else:
            relative = storage.read_depth(pred_path, DepthKind.RELATIVE)
            if mode is ScaleMode.DGC:
                scale = _recover(relative, k, cfg).estimate.scale_factor
            else:
                scale = gt_median_scale(relative, gt, eval_cfg)
            pred = relative.scaled(scale, DepthKind.ABSOLUTE)
        metrics = masked_metrics(pred, gt, mask, eval_cfg)
    except DepthScaleError as e:
        logger.warning("frame %s: %s", stem, e)
        return stem, e.kind, None, None
    return stem, STATUS_OK, scale, metrics


def cmd_eval(args, cfg: RunConfig) -> int:
    mode = ScaleMode(args.scale_mode)
    k = None
    if mode is ScaleMode.DGC:
        cfg.require_camera_height()
        if not args.intrinsics:
            raise InputValidationError("--intrinsics is required with --scale-mode dgc")
        k = storage.read_intrinsics(args.intrinsics)
    frames = _pair_eval_files(args)

    results = run_frames(lambda frame: _eval_frame(frame, mode, k, cfg), frames, cfg.jobs)
    rows = [
        (stem, status, scale, *(metrics.values() if metrics else [None] * len(METRIC_NAMES)))
        for stem, status, scale, metrics in results
    ]
    done = [metrics for _, status, _, metrics in results if status == STATUS_OK]
    summary = {
        "scale_mode": mode.value,
        "frames": len(results),
        "evaluated": len(done),
        "failed": len(results) - len(done),
        "mean": mean_metrics(done).model_dump() if done else None,
    }
    storage.write_csv(args.output, EVAL_COLUMNS, rows)
    if args.summary:
        storage.write_json(args.summary, summary)
    _emit(summary)
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    records = robustness_sweep(parse_manifest(args.manifest), cfg)
    storage.write_csv(args.output, SWEEP_COLUMNS, sweep_rows(records))
    return 0


def cmd_compare(args, cfg: RunConfig) -> int:
    comparison = compare_estimators(parse_manifest(args.manifest), cfg)
    storage.write_csv(args.output, COMPARE_COLUMNS, comparison_rows(comparison.frames))
    summary = comparison.summary()
    if args.summary:
        storage.write_json(args.summary, summary)
    _emit(summary)
    return 0


# --- Synthetic scenes and losses ---


def cmd_synth(args, cfg: RunConfig) -> int:
    try:
        text = Path(args.scene).read_text()
    except OSError as e:
        raise StorageError(f"cannot read {args.scene}: {e.strerror or e}") from e
    spec = parse_scene_text(text)
    seed = args.seed if args.seed is not None else spec.seed
    scene = gen_scene(spec)
    measured = degrade(scene.depth, spec.noise, seed)

    out = Path(args.output)
    storage.write_depth(out / "depth.pfm", scene.depth)
    storage.write_depth(out / "relative.pfm", relativize(measured, spec.gamma))
    storage.write_mask(out / "ground.png", scene.ground.mask)
    storage.write_normals(out / "normals.png", scene.normals)
    storage.write_intrinsics(out / "intrinsics.json", scene.intrinsics)
    truth = {
        "camera_height": scene.camera_height,
        "gamma": spec.gamma,
        "seed": seed,
        "valid_pixels": scene.depth.valid_count,
        "ground_ratio": scene.ground.ground_ratio,
        "labels": {label.name.lower(): int(np.count_nonzero(scene.labels == label)) for label in SurfaceLabel},
    }
    storage.write_json(out / "truth.json", truth)
    _emit(truth)
    return 0


def cmd_loss(args, cfg: RunConfig) -> int:
    target = storage.read_image(args.target)
    sources = [storage.read_image(path) for path in args.source]
    depth = storage.read_depth(args.depth, DepthKind.RELATIVE) if args.depth else None

    warped, valid = [], []
    if args.pose:
        if len(args.pose) != len(sources):
            raise InputValidationError("give one --pose per --source")
        if depth is None or not args.intrinsics:
            raise InputValidationError("warping needs --depth and --intrinsics")
        k = storage.read_intrinsics(args.intrinsics)
        for source, pose_path in zip(sources, args.pose):
            result = inverse_warp(source, depth, storage.read_pose(pose_path), k)
            warped.append(result.image)
            valid.append(result.valid)

    alpha = args.alpha if args.alpha is not None else LossWeights().alpha
    loss = minimum_reprojection(target, warped, sources, alpha, valid=valid)
    report = {"photometric": float(np.mean(loss))}
    if valid:
        report["valid_fraction"] = float(np.mean(np.logical_or.reduce(valid)))
    if depth is not None:
        report["smoothness"] = smoothness_loss(depth, target)
    _emit(report)
    return 0


def cmd_serve(args, cfg: RunConfig) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return 0


# --- Parser ---


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")

    tuning = argparse.ArgumentParser(add_help=False)
    tuning.add_argument("--camera-height", type=float, help="camera mounting height in meters")
    tuning.add_argument("--s-max-deg", type=float, help="ground angle threshold in degrees (default 5)")
    tuning.add_argument("--low-confidence-ratio", type=float, help="ground ratio below which a scale is flagged")
    tuning.add_argument("--min-samples", type=int, help="minimum ground pixels needed for a scale")
    tuning.add_argument("--min-depth", type=float, help="evaluation lower clamp in meters")
    tuning.add_argument("--max-depth", type=float, help="evaluation upper clamp in meters")
    tuning.add_argument("--crop", type=_crop, help="evaluation crop x,y,w,h")
    tuning.add_argument("--jobs", type=int, help="frames processed concurrently")
    tuning.add_argument("--seed", type=int, help="random seed")

    parser = argparse.ArgumentParser(prog="python -m app", description="Metric scale recovery for relative depth maps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("recover", parents=[common, tuning], help="scale a relative depth map to meters")
    p.add_argument("depth")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("-o", "--output", required=True, help="absolute depth file (.pfm, .pgm, .png)")
    p.add_argument("--report", help="also write the scale report here")
    p.set_defaults(handler=cmd_recover)

    p = sub.add_parser("normals", parents=[common, tuning], help="write the surface normal map")
    p.add_argument("depth")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("-o", "--output", required=True, help=".png image or three-channel .pfm")
    p.set_defaults(handler=cmd_normals)

    p = sub.add_parser("ground-mask", parents=[common, tuning], help="write the detected ground mask")
    p.add_argument("depth")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("-o", "--output", required=True, help=".png or .pgm mask")
    p.set_defaults(handler=cmd_ground_mask)

    p = sub.add_parser("eval", parents=[common, tuning], help="depth metrics over matched directories")
    p.add_argument("--pred", required=True, help="directory of predicted depth maps")
    p.add_argument("--gt", required=True, help="directory of ground-truth depth maps")
    p.add_argument("--masks", help="directory of evaluation masks")
    p.add_argument("--scale-mode", choices=[m.value for m in ScaleMode], default=ScaleMode.NONE.value)
    p.add_argument("--intrinsics", help="intrinsics shared by every frame (dgc mode)")
    p.add_argument("-o", "--output", required=True, help="per-frame CSV")
    p.add_argument("--summary", help="aggregate JSON")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", parents=[common, tuning], help="scale error against ground ratio")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True, help="CSV of frame, ground_ratio, scale_error, status")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("compare", parents=[common, tuning], help="ground-constraint scale against gt-median scale")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True, help="per-frame CSV")
    p.add_argument("--summary", help="win-rate JSON")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("synth", parents=[common, tuning], help="render a synthetic scene")
    p.add_argument("scene", help="key = value scene file")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("loss", parents=[common], help="photometric and smoothness losses")
    p.add_argument("target")
    p.add_argument("--source", action="append", required=True)
    p.add_argument("--pose", action="append", help="JSON pose per source, target to source")
    p.add_argument("--depth", help="target relative depth")
    p.add_argument("--intrinsics")
    p.add_argument("--alpha", type=float, help="SSIM weight in the photometric error (default 0.85)")
    p.set_defaults(handler=cmd_loss)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.verbose)
    try:
        cfg = config_from_args(args)
        return args.handler(args, cfg)
    except DepthScaleError as e:
        logger.error("%s failed: %s", args.command, e)
        _emit(e.to_payload())
        return e.exit_code
