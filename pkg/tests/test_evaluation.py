import numpy as np
import pytest

from trajdiffuse.errors import ConfigurationError, ShapeError
from trajdiffuse.evaluation import (
    default_threshold,
    detect_blob,
    evaluate,
    iou,
    summarize_sweep,
    sweep_configs,
)
from trajdiffuse.masks import BoxTrajectory
from trajdiffuse.sampler import GuidanceConfig


def oracle_components(mask):
    """Brute-force 4-connected labeling by BFS, independent of scipy."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=int)
    current = 0
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or labels[r, c]:
                continue
            current += 1
            stack = [(r, c)]
            labels[r, c] = current
            while stack:
                y, x = stack.pop()
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = current
                        stack.append((ny, nx))
    return labels, current


def oracle_detect(frame, threshold):
    mask = frame > threshold
    if not mask.any():
        return None
    labels, count = oracle_components(mask)
    sizes = [(labels == k).sum() for k in range(1, count + 1)]
    best = int(np.argmax(sizes)) + 1
    rows, cols = np.nonzero(labels == best)
    return (cols.min(), rows.min(), cols.max() + 1, rows.max() + 1)


class TestDetectBlob:
    def test_all_zero_frame_absent(self):
        assert detect_blob(np.zeros((8, 8)), 0.5) is None

    def test_single_bright_pixel(self):
        frame = np.zeros((8, 8))
        frame[3, 5] = 2.0
        assert detect_blob(frame, 1.0) == (5, 3, 6, 4)

    def test_largest_of_two_components(self):
        frame = np.zeros((8, 8))
        frame[0:1, 0:3] = 1.0        # size 3
        frame[4:5, 1:8] = 1.0        # size 7
        box = detect_blob(frame, 0.5)
        assert box == (1, 4, 8, 5)
        assert box == tuple(int(v) for v in oracle_detect(frame, 0.5))

    def test_matches_bfs_oracle_on_random_frames(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            frame = rng.standard_normal((10, 12))
            thr = 0.8
            got = detect_blob(frame, thr)
            expected = oracle_detect(frame, thr)
            if expected is None:
                assert got is None
            else:
                # equal component sizes can tie; compare box areas via labels
                assert got == tuple(int(v) for v in expected)

    def test_diagonal_pixels_are_separate_components(self):
        frame = np.zeros((4, 4))
        frame[0, 0] = 1.0
        frame[1, 1] = 1.0
        frame[1, 2] = 1.0
        # 4-connectivity: the (1,1)-(1,2) pair wins over the lone (0,0)
        assert detect_blob(frame, 0.5) == (1, 1, 3, 2)

    def test_requires_2d(self):
        with pytest.raises(ShapeError):
            detect_blob(np.zeros((2, 2, 2)), 0.5)


class TestIou:
    def test_identical_boxes(self):
        assert iou((0, 0, 4, 4), (0, 0, 4, 4)) == 1.0

    def test_disjoint_boxes(self):
        assert iou((0, 0, 2, 2), (5, 5, 7, 7)) == 0.0

    def test_quarter_overlap_arithmetic(self):
        assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)

    def test_symmetry_and_shrinking_monotonicity(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            a = np.sort(rng.integers(0, 10, 2)) + np.array([0, 1])
            b = np.sort(rng.integers(0, 10, 2)) + np.array([0, 1])
            box_a = (a[0], a[0], a[1], a[1])
            box_b = (b[0], b[0], b[1], b[1])
            assert iou(box_a, box_b) == pytest.approx(iou(box_b, box_a))
        base = (2, 2, 8, 8)
        shrinking = [(2, 2, 8, 8), (3, 3, 8, 8), (4, 4, 8, 8), (5, 5, 8, 8)]
        vals = [iou(base, s) for s in shrinking]
        assert all(x >= y for x, y in zip(vals, vals[1:]))

    def test_degenerate_box_rejected(self):
        with pytest.raises(ConfigurationError):
            iou((0, 0, 0, 4), (0, 0, 4, 4))


def boxes_to_fields(traj, amp=3.0, size=16):
    """Render ground-truth boxes as bright rectangles on a flat background."""
    fields = np.zeros((traj.num_frames, size, size))
    for i, (x0, y0, x1, y1) in enumerate(traj.boxes.astype(int)):
        fields[i, y0:y1, x0:x1] = amp
    return fields


class TestEvaluate:
    def make_traj(self, n=8, size=16):
        boxes = np.array([[2 + i % 3, 3, 7 + i % 3, 8] for i in range(n)], dtype=float)
        return BoxTrajectory(canvas_h=size, canvas_w=size, boxes=boxes)

    def test_rendered_ground_truth_scores_high(self):
        traj = self.make_traj()
        report = evaluate(boxes_to_fields(traj), traj, threshold=1.0)
        assert report.coverage_hit
        assert report.miou is not None and report.miou >= 0.9

    def test_blank_video_misses_coverage_and_miou_absent(self):
        traj = self.make_traj()
        report = evaluate(np.zeros((8, 16, 16)), traj, threshold=0.5)
        assert not report.coverage_hit
        assert report.miou is None
        assert report.detected_frames == 0

    def test_shifted_blob_covers_but_zero_iou(self):
        traj = self.make_traj()
        shifted = np.zeros((8, 16, 16))
        shifted[:, 12:15, 12:15] = 5.0  # off-box every frame
        report = evaluate(shifted, traj, threshold=1.0)
        assert report.coverage_hit
        assert report.miou == 0.0

    def test_coverage_needs_half_the_frames(self):
        traj = self.make_traj()
        fields = boxes_to_fields(traj)
        fields[4:] = 0.0  # detections in 4 of 8 frames: exactly half
        report = evaluate(fields, traj, threshold=1.0)
        assert report.detected_frames == 4
        assert report.coverage_hit
        fields[3:] = 0.0  # 3 of 8: below half
        assert not evaluate(fields, traj, threshold=1.0).coverage_hit

    def test_default_threshold_is_mean_plus_two_std(self):
        rng = np.random.default_rng(2)
        frame = rng.standard_normal((16, 16))
        assert default_threshold(frame) == pytest.approx(frame.mean() + 2 * frame.std())

    def test_frame_count_mismatch(self):
        traj = self.make_traj(n=4)
        with pytest.raises(ShapeError):
            evaluate(np.zeros((8, 16, 16)), traj)


class TestSweepScaffolding:
    def test_sweep_configs_encode_the_ablation(self):
        base = GuidanceConfig()
        configs = sweep_configs(base, tid_cg=20.0)
        assert set(configs) == {"masked", "masknorm", "masknorm_id", "masknorm_tid"}
        cfg, norm = configs["masked"]
        assert cfg.inner_steps == 0 and norm is False
        cfg, norm = configs["masknorm"]
        assert cfg.inner_steps == 0 and norm is True
        cfg, norm = configs["masknorm_id"]
        assert cfg.inner_steps == 2 and cfg.cg == 0.0 and norm is True
        cfg, norm = configs["masknorm_tid"]
        assert cfg.inner_steps == 2 and cfg.cg == 20.0 and norm is True

    def test_grad_norm_variant_settings(self):
        configs = sweep_configs(GuidanceConfig(), include_grad_norm=True)
        cfg, norm = configs["masknorm_tid_gradnorm"]
        assert cfg.grad_norm is True
        assert cfg.cg == 0.2
        assert cfg.frozen_steps == 8
        assert norm is True

    def test_summary_orderings_and_deviations(self):
        rows = []
        scores = {"masked": 0.3, "masknorm": 0.35, "masknorm_id": 0.4, "masknorm_tid": 0.5}
        for name, miou in scores.items():
            for seed in range(3):
                rows.append({"config": name, "seed": seed,
                             "coverage_hit": True, "miou": miou})
        summary = summarize_sweep(rows)
        assert summary["orderings_hold"]
        assert summary["per_config"]["masknorm_tid"]["miou"] == pytest.approx(0.5)
        # break one ordering
        for row in rows:
            if row["config"] == "masknorm_tid":
                row["miou"] = 0.2
        summary = summarize_sweep(rows)
        assert not summary["orderings_hold"]
        expected = {d["expected"] for d in summary["deviations"]}
        assert "masknorm_tid > masknorm_id" in expected
        assert "masknorm_tid > masked" in expected

    def test_summary_handles_no_coverage(self):
        rows = [{"config": "masked", "seed": 0, "coverage_hit": False, "miou": None}]
        summary = summarize_sweep(rows)
        assert summary["per_config"]["masked"]["miou"] is None
        assert summary["per_config"]["masked"]["coverage"] == 0.0
