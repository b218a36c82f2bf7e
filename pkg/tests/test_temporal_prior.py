import numpy as np
import pytest

from trajdiffuse.errors import DegenerateInputError, ShapeError
from trajdiffuse.masks import BoxTrajectory
from trajdiffuse.temporal_prior import (
    pearson,
    sample_crop,
    stratified_grid,
    tau,
    tau_gradient,
    tau_with_gradient,
)


def traj_from_boxes(boxes, h, w):
    return BoxTrajectory(canvas_h=h, canvas_w=w, boxes=np.asarray(boxes, dtype=float))


def finite_difference_gradient(traj, z, step=1e-5):
    grad = np.zeros_like(z)
    flat = grad.ravel()
    zf = z.ravel()
    for i in range(zf.size):
        orig = zf[i]
        zf[i] = orig + step
        up = tau(traj, z)
        zf[i] = orig - step
        down = tau(traj, z)
        zf[i] = orig
        flat[i] = (up - down) / (2 * step)
    return grad


def random_instance(rng, n_frames=None, size=6, channels=None, min_extent=2):
    n = n_frames or int(rng.integers(2, 5))
    c = channels or int(rng.integers(1, 3))
    z = rng.standard_normal((n, c, size, size))
    boxes = []
    for _ in range(n):
        x0 = int(rng.integers(0, size - min_extent))
        y0 = int(rng.integers(0, size - min_extent))
        x1 = int(rng.integers(x0 + min_extent, min(x0 + 4, size) + 1))
        y1 = int(rng.integers(y0 + min_extent, min(y0 + 4, size) + 1))
        boxes.append((x0, y0, x1, y1))
    return traj_from_boxes(boxes, size, size), z


class TestSamplingGrid:
    def test_identity_when_sizes_match(self):
        g = stratified_grid(3, 4, 3, 4)
        assert g.rows.tolist() == [0, 1, 2]
        assert g.cols.tolist() == [0, 1, 2, 3]

    def test_stratified_rows_for_4_to_2(self):
        g = stratified_grid(4, 2, 2, 2)
        assert g.rows.tolist() == [0, 2]

    def test_invalid_targets(self):
        with pytest.raises(IndexError):
            stratified_grid(2, 2, 3, 1)
        with pytest.raises(IndexError):
            stratified_grid(2, 2, 0, 1)


class TestSampleCrop:
    def test_identity_flattening(self):
        crop = np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3)
        g = stratified_grid(2, 2, 2, 2)
        assert (sample_crop(crop, g) == crop.ravel()).all()

    def test_gathers_strided_rows(self):
        crop = np.arange(4 * 2 * 1, dtype=float).reshape(4, 2, 1)
        g = stratified_grid(4, 2, 2, 2)
        expected = crop[[0, 2]].ravel()
        assert (sample_crop(crop, g) == expected).all()

    def test_out_of_range_grid(self):
        crop = np.zeros((2, 2, 1))
        g = stratified_grid(4, 2, 2, 2)  # rows [0, 2]; row 2 invalid for a 2-row crop
        with pytest.raises(IndexError):
            sample_crop(crop, g)


class TestPearson:
    def test_identical_vectors(self):
        assert pearson([1.0, 2.0, 5.0], [1.0, 2.0, 5.0]) == pytest.approx(1.0)

    def test_negated_vector(self):
        x = np.array([0.3, -1.0, 2.2])
        assert pearson(x, -x) == pytest.approx(-1.0)

    def test_textbook_values(self):
        # verified against the centered/normalized dot product by hand and
        # scipy.stats.pearsonr
        assert pearson([1, 2, 3], [2, 4, 8]) == pytest.approx(0.9819805, abs=1e-6)
        assert pearson([1, 2, 3], [2, 4, 7]) == pytest.approx(0.9933993, abs=1e-6)

    def test_constant_vector_raises(self):
        with pytest.raises(DegenerateInputError):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_checks(self):
        with pytest.raises(ShapeError):
            pearson([1.0], [1.0])
        with pytest.raises(ShapeError):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])


class TestTau:
    def test_identical_crops_give_one(self):
        frame = np.random.default_rng(0).standard_normal((2, 5, 5))
        z = np.stack([frame, frame, frame])
        traj = traj_from_boxes([(1, 1, 4, 4)] * 3, 5, 5)
        assert tau(traj, z) == pytest.approx(1.0)

    def test_negated_crops_give_minus_one(self):
        frame = np.random.default_rng(1).standard_normal((1, 4, 4))
        z = np.stack([frame, -frame])
        traj = traj_from_boxes([(0, 0, 4, 4)] * 2, 4, 4)
        assert tau(traj, z) == pytest.approx(-1.0)

    def test_three_frames_average_of_pairs(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((3, 2, 4, 4))
        traj = traj_from_boxes([(0, 0, 3, 3), (1, 1, 4, 4), (0, 1, 3, 4)], 4, 4)
        crops = [z[i, :, y0:y1, x0:x1] for i, (x0, y0, x1, y1) in
                 enumerate(traj.boxes.astype(int))]
        rho12 = pearson(np.moveaxis(crops[0], 0, -1).ravel(),
                        np.moveaxis(crops[1], 0, -1).ravel())
        rho23 = pearson(np.moveaxis(crops[1], 0, -1).ravel(),
                        np.moveaxis(crops[2], 0, -1).ravel())
        assert tau(traj, z) == pytest.approx((rho12 + rho23) / 2)

    def test_bounded_and_invariant(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            traj, z = random_instance(rng)
            value = tau(traj, z)
            assert -1.0 <= value <= 1.0
            assert tau(traj, 3.0 * z + 0.7) == pytest.approx(value, abs=1e-10)

    def test_degenerate_pair_contributes_zero(self, caplog):
        rng = np.random.default_rng(4)
        z = rng.standard_normal((3, 1, 4, 4))
        z[1] = 5.0  # constant middle frame -> both adjacent pairs degenerate
        traj = traj_from_boxes([(0, 0, 3, 3)] * 3, 4, 4)
        with caplog.at_level("WARNING"):
            value, grad, rhos = tau_with_gradient(traj, z)
        assert rhos.tolist() == [0.0, 0.0]
        assert value == 0.0
        assert not grad.any()
        assert "constant crop" in caplog.text

    def test_resolution_mismatch_raises(self):
        traj = traj_from_boxes([(0, 0, 4, 4)] * 2, 8, 8)
        with pytest.raises(ShapeError):
            tau(traj, np.zeros((2, 1, 4, 4)))


class TestTauGradient:
    def test_matches_finite_differences(self):
        # 1e-6 floor on the denominator: locally-constant correlations
        # (|rho| = 1) have exactly zero gradient, where only FD rounding
        # noise remains
        rng = np.random.default_rng(5)
        for _ in range(20):
            traj, z = random_instance(rng)
            grad = tau_gradient(traj, z)
            fd = finite_difference_gradient(traj, z)
            denom = max(np.linalg.norm(fd), 1e-6)
            assert np.linalg.norm(grad - fd) / denom < 1e-4

    def test_gradient_sparsity(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((2, 1, 6, 6))
        traj = traj_from_boxes([(1, 1, 3, 3), (2, 2, 4, 4)], 6, 6)
        grad = tau_gradient(traj, z)
        support = np.zeros_like(z, dtype=bool)
        support[0, :, 1:3, 1:3] = True
        support[1, :, 2:4, 2:4] = True
        assert not grad[~support].any()

    def test_shift_invariance_zero_row_sums(self):
        rng = np.random.default_rng(7)
        traj, z = random_instance(rng, n_frames=3)
        grad = tau_gradient(traj, z)
        # Pearson is shift-invariant: within each sampled crop the gradient
        # sums to zero, hence globally too.
        assert abs(grad.sum()) < 1e-10

    def test_euler_identity_degree_zero(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            traj, z = random_instance(rng)
            z -= z.mean()
            grad = tau_gradient(traj, z)
            assert abs(float((z * grad).sum())) < 1e-8

    def test_scale_halves_gradient(self):
        rng = np.random.default_rng(9)
        traj, z = random_instance(rng, n_frames=3)
        g1 = tau_gradient(traj, z)
        g2 = tau_gradient(traj, 2.0 * z)
        assert np.allclose(g2, g1 / 2.0, atol=1e-12)

    def test_stationary_at_maximum(self):
        frame = np.random.default_rng(10).standard_normal((2, 4, 4))
        z = np.stack([frame, frame])
        traj = traj_from_boxes([(0, 0, 4, 4)] * 2, 4, 4)
        grad = tau_gradient(traj, z)
        # tau == 1 is a maximum along directions that keep crops aligned;
        # shift invariance makes the within-crop gradient sum vanish
        assert tau(traj, z) == pytest.approx(1.0)
        assert abs(grad[0].sum()) < 1e-10 and abs(grad[1].sum()) < 1e-10
