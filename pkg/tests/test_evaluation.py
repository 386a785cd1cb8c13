import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.config import RunConfig
from app.core.errors import InputValidationError
from app.modules.evaluation.engine import compute_metrics, gt_median_scale, masked_metrics, mean_metrics
from app.modules.evaluation.logic import compare_estimators, robustness_sweep, run_frames, win_rates
from app.modules.evaluation.schemas import METRIC_NAMES, DepthMetrics, EvalConfig, EvalFrame, FrameComparison
from app.modules.geometry.schemas import DepthKind, DepthMap
from app.modules.synthetic.engine import degrade, gen_scene, relativize
from app.modules.synthetic.schemas import NoiseSpec
from conftest import CAMERA_HEIGHT, WIDE_CAMERA, make_spec, occluder

CFG = EvalConfig()


def absolute(values):
    return DepthMap(np.asarray(values, dtype=np.float64), DepthKind.ABSOLUTE)


def loop_metrics(pred, gt, mask=None, min_depth=1e-3, max_depth=80.0):
    """Pixel-by-pixel reference implementation."""
    n = 0
    abs_rel = sq_rel = sq = sq_log = 0.0
    hits = [0, 0, 0]
    for i in range(gt.shape[0]):
        for j in range(gt.shape[1]):
            g, p = gt[i, j], pred[i, j]
            if not (min_depth < g < max_depth) or p <= 0 or (mask is not None and not mask[i, j]):
                continue
            p = min(max(p, min_depth), max_depth)
            n += 1
            abs_rel += abs(p - g) / g
            sq_rel += (p - g) ** 2 / g
            sq += (p - g) ** 2
            sq_log += (math.log(p) - math.log(g)) ** 2
            ratio = max(p / g, g / p)
            for k in range(3):
                hits[k] += ratio < 1.25 ** (k + 1)
    return [abs_rel / n, sq_rel / n, math.sqrt(sq / n), math.sqrt(sq_log / n)] + [h / n for h in hits]


def random_pair(seed, shape=(16, 16)):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.5, 90.0, shape)
    gt[rng.random(shape) < 0.1] = 0.0
    pred = gt * rng.uniform(0.6, 1.6, shape)
    pred[rng.random(shape) < 0.05] = 0.0
    return DepthMap.from_array(pred, DepthKind.ABSOLUTE), DepthMap.from_array(gt, DepthKind.ABSOLUTE)


# --- Metrics ---


def test_perfect_prediction():
    gt = absolute(np.arange(1, 17, dtype=float).reshape(4, 4))
    m = compute_metrics(gt, gt, CFG)
    assert (m.abs_rel, m.sq_rel, m.rmse, m.rmse_log) == (0.0, 0.0, 0.0, 0.0)
    assert (m.delta1, m.delta2, m.delta3) == (1.0, 1.0, 1.0)
    assert m.pixels == 16


def test_delta_threshold_is_strict():
    gt = np.arange(1, 17, dtype=float).reshape(4, 4)
    m = compute_metrics(absolute(1.25 * gt), absolute(gt), CFG)
    assert m.abs_rel == pytest.approx(0.25, abs=1e-12)
    assert m.delta1 == 0.0
    assert m.delta2 == 1.0 and m.delta3 == 1.0


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_pixel_loop(seed):
    pred, gt = random_pair(seed)
    expected = loop_metrics(pred.values, gt.values)
    np.testing.assert_allclose(compute_metrics(pred, gt, CFG).values(), expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_masked_metrics_match_pixel_loop(seed):
    pred, gt = random_pair(seed)
    mask = np.zeros((16, 16), dtype=bool)
    mask[:, :8] = True
    expected = loop_metrics(pred.values, gt.values, mask)
    np.testing.assert_allclose(masked_metrics(pred, gt, mask, CFG).values(), expected, rtol=1e-12, atol=1e-12)


def test_full_mask_equals_unmasked():
    pred, gt = random_pair(42)
    full = np.ones((16, 16), dtype=bool)
    assert masked_metrics(pred, gt, full, CFG) == compute_metrics(pred, gt, CFG)


def test_mask_restricted_to_exact_pixels_has_no_error():
    gt = np.full((8, 8), 10.0)
    pred = gt.copy()
    pred[4:] = 30.0
    mask = np.zeros((8, 8), dtype=bool)
    mask[:4] = True
    m = masked_metrics(absolute(pred), absolute(gt), mask, CFG)
    assert m.abs_rel == 0.0 and m.rmse == 0.0 and m.delta1 == 1.0


def test_out_of_range_gt_and_holes_are_excluded():
    gt = absolute([[10.0, 100.0], [0.0, 20.0]])
    pred = absolute([[10.0, 5.0], [7.0, 20.0]])
    m = compute_metrics(pred, gt, CFG)
    assert m.pixels == 2 and m.abs_rel == 0.0


def test_prediction_is_clamped():
    m = compute_metrics(absolute([[200.0]]), absolute([[40.0]]), CFG)
    assert m.abs_rel == pytest.approx(1.0)


def test_crop_restricts_pixels():
    gt = np.full((6, 6), 10.0)
    pred = np.full((6, 6), 20.0)
    pred[1:3, 2:5] = 10.0
    m = compute_metrics(absolute(pred), absolute(gt), EvalConfig(crop=(2, 1, 3, 2)))
    assert m.pixels == 6 and m.abs_rel == 0.0


def test_metrics_reject_empty_and_mismatched_inputs():
    with pytest.raises(InputValidationError):
        compute_metrics(absolute(np.ones((2, 2))), absolute(np.full((2, 2), 100.0)), CFG)
    with pytest.raises(InputValidationError):
        compute_metrics(absolute(np.ones((2, 2))), absolute(np.ones((2, 3))), CFG)
    with pytest.raises(InputValidationError):
        masked_metrics(absolute(np.ones((2, 2))), absolute(np.ones((2, 2))), np.zeros((2, 2), dtype=bool), CFG)
    with pytest.raises(InputValidationError):
        compute_metrics(DepthMap(np.ones((2, 2)), DepthKind.RELATIVE), absolute(np.ones((2, 2))), CFG)


def test_eval_config_requires_ordered_range():
    with pytest.raises(ValueError):
        EvalConfig(min_depth=10.0, max_depth=5.0)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.sampled_from([0.01, 0.5, 2.0]))
def test_metrics_scale_predictably(seed, c):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(1.0, 20.0, (8, 8))
    pred = gt * rng.uniform(0.7, 1.4, (8, 8))
    base = compute_metrics(absolute(pred), absolute(gt), CFG)
    scaled = compute_metrics(absolute(c * pred), absolute(c * gt), CFG)
    assert scaled.abs_rel == pytest.approx(base.abs_rel, rel=1e-12)
    assert scaled.sq_rel == pytest.approx(c * base.sq_rel, rel=1e-12)
    assert scaled.rmse == pytest.approx(c * base.rmse, rel=1e-12)
    assert scaled.rmse_log == pytest.approx(base.rmse_log, rel=1e-9, abs=1e-12)
    assert (scaled.delta1, scaled.delta2, scaled.delta3) == (base.delta1, base.delta2, base.delta3)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_metrics_ignore_pixel_order(seed):
    pred, gt = random_pair(seed)
    order = np.random.default_rng(seed).permutation(256)
    shuffled_pred = DepthMap(pred.values.reshape(-1)[order].reshape(16, 16), DepthKind.ABSOLUTE, pred.valid.reshape(-1)[order].reshape(16, 16))
    shuffled_gt = DepthMap(gt.values.reshape(-1)[order].reshape(16, 16), DepthKind.ABSOLUTE, gt.valid.reshape(-1)[order].reshape(16, 16))
    a = compute_metrics(pred, gt, CFG).values()
    b = compute_metrics(shuffled_pred, shuffled_gt, CFG).values()
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_mean_metrics_averages_frames():
    a = DepthMetrics(abs_rel=0.1, sq_rel=0.2, rmse=1.0, rmse_log=0.1, delta1=0.5, delta2=0.75, delta3=1.0, pixels=10)
    b = DepthMetrics(abs_rel=0.3, sq_rel=0.4, rmse=3.0, rmse_log=0.3, delta1=1.0, delta2=1.0, delta3=1.0, pixels=30)
    m = mean_metrics([a, b])
    assert m.abs_rel == pytest.approx(0.2) and m.rmse == pytest.approx(2.0) and m.delta1 == pytest.approx(0.75)
    assert m.pixels == 40
    with pytest.raises(InputValidationError):
        mean_metrics([])


# --- GT median scale ---


def test_gt_median_scale_ratio():
    gt = absolute([[10.0, 10.0, 10.0]])
    pred = DepthMap(np.array([[5.0, 5.0, 5.0]]), DepthKind.RELATIVE)
    assert gt_median_scale(pred, gt) == 2.0
    assert gt_median_scale(gt, gt) == 1.0


def test_gt_median_scale_recovers_gamma(flat_scene):
    assert gt_median_scale(relativize(flat_scene.depth, 7.3), flat_scene.depth) == pytest.approx(7.3, rel=1e-9)


def test_gt_median_scale_needs_overlap():
    pred = DepthMap.from_array(np.array([[1.0, 0.0]]))
    gt = DepthMap.from_array(np.array([[0.0, 5.0]]), DepthKind.ABSOLUTE)
    with pytest.raises(InputValidationError):
        gt_median_scale(pred, gt)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_gt_median_scale_ignores_pixel_order(seed):
    pred, gt = random_pair(seed)
    flip = lambda d: DepthMap(d.values[::-1, ::-1], d.kind, d.valid[::-1, ::-1])
    assert gt_median_scale(flip(pred), flip(gt)) == gt_median_scale(pred, gt)


# --- Multi-frame runs ---


def frame(frame_id, scene, gamma=2.0, noise=None, seed=0):
    depth = scene.depth if noise is None else degrade(scene.depth, noise, seed)
    return EvalFrame(frame_id, relativize(depth, gamma), scene.intrinsics, scene.depth, CAMERA_HEIGHT)


def test_run_frames_keeps_input_order():
    assert run_frames(lambda x: x * x, range(20), jobs=4) == [x * x for x in range(20)]
    assert run_frames(lambda x: x, [], jobs=4) == []


def test_sweep_on_exact_frames_has_no_scale_error():
    scenes = [gen_scene(make_spec(boxes=[occluder(w)] if w else [])) for w in (0, 1, 2, 4, 8)]
    frames = [frame(f"f{i}", scene, gamma=0.5 + i) for i, scene in enumerate(scenes)]
    records = robustness_sweep(frames, RunConfig(jobs=3))
    assert [r.frame_id for r in records] == ["f0", "f1", "f2", "f3", "f4"]
    assert all(r.ok for r in records)
    assert all(abs(r.scale_error) < 1e-6 for r in records)
    ratios = [r.ground_ratio for r in records]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))


def test_sweep_marks_frames_without_ground(flat_scene, wall_scene):
    records = robustness_sweep([frame("wall", wall_scene), frame("flat", flat_scene)], RunConfig())
    assert records[0].status == "no_ground"
    assert records[0].ground_ratio == 0.0 and records[0].scale_error is None
    assert records[1].ok


def test_sweep_frame_without_height_uses_config(flat_scene):
    item = EvalFrame("f", relativize(flat_scene.depth, 3.0), flat_scene.intrinsics, flat_scene.depth)
    assert robustness_sweep([item], RunConfig())[0].status == "invalid_input"
    record = robustness_sweep([item], RunConfig(camera_height_m=CAMERA_HEIGHT))[0]
    assert record.dgc_scale == pytest.approx(3.0, rel=1e-9)


@pytest.mark.parametrize("seed", range(100))
def test_sweep_under_mild_noise_stays_close(wide_flat_scene, seed):
    item = frame("noisy", wide_flat_scene, noise=NoiseSpec(sigma=0.01), seed=seed)
    record = robustness_sweep([item], RunConfig())[0]
    assert record.ok and abs(record.scale_error) < 0.02


def occluded_frames(count=200, front=4.5):
    """Wide noisy frames; a box nearer than any visible ground leaves log-spaced side bands of ground."""
    cx, fx, width = WIDE_CAMERA["cx"], WIDE_CAMERA["fx"], WIDE_CAMERA["width"]
    frames = []
    for i, uncovered in enumerate(np.geomspace(1.0, width - 10, count)):
        box_width = 2.0 * front * (cx + 0.5 - uncovered / 2.0) / fx
        scene = gen_scene(make_spec(WIDE_CAMERA, boxes=[occluder(box_width, z=front + 0.5)]))
        frames.append(frame(f"box{i:03d}", scene, gamma=1.0 + i % 7, noise=NoiseSpec(sigma=0.01), seed=i))
    return frames


def test_sweep_error_is_small_above_the_ground_ratio_threshold():
    records = [r for r in robustness_sweep(occluded_frames(), RunConfig(jobs=4)) if r.ok]
    threshold = RunConfig().low_confidence_ratio
    above = [abs(r.scale_error) for r in records if r.ground_ratio >= threshold]
    below = [abs(r.scale_error) for r in records if r.ground_ratio < threshold]
    ratios = [r.ground_ratio for r in records]
    assert min(ratios) < 0.005 and max(ratios) > 0.2
    assert len(above) >= 20 and len(below) >= 20
    assert max(above) < 0.05
    assert max(below) > max(above)



def test_compare_exact_frames_are_ties(flat_scene):
    result = compare_estimators([frame("a", flat_scene), frame("b", flat_scene, gamma=5.0)], RunConfig())
    assert result.evaluated == 2
    for rate in result.win_rates:
        assert rate.ties == 1.0 and rate.dgc_better == 0.0 and rate.gt_better == 0.0


def test_compare_prefers_ground_scale_when_median_is_biased():
    scene = gen_scene(make_spec(wall_distance=30.0))
    values = np.array(scene.depth.values) / 2.0
    top = scene.depth.height // 5
    values[:top] *= 0.1
    item = EvalFrame("biased", DepthMap(values, DepthKind.RELATIVE), scene.intrinsics, scene.depth, CAMERA_HEIGHT)

    result = compare_estimators([item], RunConfig())
    comparison = result.frames[0]
    assert comparison.ok
    assert comparison.dgc_scale == pytest.approx(2.0, rel=1e-9)
    assert comparison.dgc.abs_rel < comparison.gt.abs_rel
    rates = {r.metric: r for r in result.win_rates}
    assert rates["abs_rel"].dgc_better == 1.0


def test_compare_reports_failed_frames(wall_scene, flat_scene):
    result = compare_estimators([frame("wall", wall_scene), frame("flat", flat_scene)], RunConfig())
    assert result.evaluated == 1
    assert result.frames[0].status == "no_ground" and result.frames[0].dgc is None
    assert result.summary()["failed"] == 1


def random_comparison(rng, i):
    def metrics():
        d = np.sort(rng.choice([0.5, 0.75, 1.0], 3))
        return DepthMetrics(
            abs_rel=rng.choice([0.1, 0.2]), sq_rel=rng.choice([0.1, 0.2]), rmse=rng.choice([1.0, 2.0]),
            rmse_log=rng.choice([0.1, 0.2]), delta1=d[0], delta2=d[1], delta3=d[2],
        )

    return FrameComparison(frame_id=str(i), dgc=metrics(), gt=metrics())


@pytest.mark.parametrize("seed", range(5))
def test_win_rates_match_frame_recount(seed):
    rng = np.random.default_rng(seed)
    frames = [random_comparison(rng, i) for i in range(40)]
    frames.append(FrameComparison(frame_id="failed", status="no_ground"))
    rates = {r.metric: r for r in win_rates(frames)}
    for name in METRIC_NAMES:
        dgc_wins = gt_wins = ties = 0
        for f in frames[:-1]:
            a, b = getattr(f.dgc, name), getattr(f.gt, name)
            if a == b:
                ties += 1
            elif (a < b) == name.startswith("delta"):
                gt_wins += 1
            else:
                dgc_wins += 1
        assert rates[name].dgc_better == dgc_wins / 40
        assert rates[name].gt_better == gt_wins / 40
        assert rates[name].ties == ties / 40
