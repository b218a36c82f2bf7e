import numpy as np
import pytest

from trajdiffuse.denoisers import GaussianVideoModel
from trajdiffuse.errors import ConfigurationError, ShapeError
from trajdiffuse.sampler import score_from_noise
from trajdiffuse.schedule import make_linear_schedule


@pytest.fixture(scope="module")
def schedule():
    return make_linear_schedule(100, 1e-4, 0.05)


def small_model(schedule, n=3, c=1, size=2, r=0.6, var=1.3, seed=0):
    rng = np.random.default_rng(seed)
    mean = rng.standard_normal((n, c, size, size))
    return GaussianVideoModel(mean, frame_corr=r, marginal_var=var, schedule=schedule)


def full_covariance(model):
    """Dense covariance over all flattened entries (frames major axis)."""
    n = model.mean.shape[0]
    d_pos = model.mean[0].size
    full = np.zeros((n * d_pos, n * d_pos))
    for i in range(n):
        for j in range(n):
            block = model.frame_cov[i, j] * np.eye(d_pos)
            full[i * d_pos:(i + 1) * d_pos, j * d_pos:(j + 1) * d_pos] = block
    return full


def test_validation():
    sched = make_linear_schedule(10, 1e-4, 0.02)
    mean = np.zeros((2, 1, 2, 2))
    with pytest.raises(ConfigurationError):
        GaussianVideoModel(mean, frame_corr=1.0, marginal_var=1.0, schedule=sched)
    with pytest.raises(ConfigurationError):
        GaussianVideoModel(mean, frame_corr=0.5, marginal_var=0.0, schedule=sched)
    with pytest.raises(ShapeError):
        GaussianVideoModel(np.zeros((2, 2)), frame_corr=0.5, marginal_var=1.0, schedule=sched)


def test_posterior_mean_scalar_formula_zero_correlation(schedule):
    # zero correlation, zero mean: E[x0|z] = s^2 sqrt(abar) z / (abar s^2 + 1 - abar)
    var = 1.7
    model = GaussianVideoModel(
        np.zeros((2, 1, 2, 2)), frame_corr=0.0, marginal_var=var, schedule=schedule
    )
    rng = np.random.default_rng(1)
    z = rng.standard_normal((2, 1, 2, 2))
    for t in (0, 50, 99):
        abar = schedule.alpha_bars[t]
        expected = var * np.sqrt(abar) * z / (abar * var + 1.0 - abar)
        assert np.allclose(model.posterior_mean(z, t), expected, atol=1e-12)


def test_noise_prediction_vanishes_at_mean_near_clean_end(schedule):
    model = small_model(schedule)
    z = np.sqrt(schedule.alpha_bars[0]) * model.mean
    eps = model.predict_noise(z, 0)
    assert np.abs(eps).max() < 1e-10


def test_score_matches_dense_gaussian_oracle(schedule):
    model = small_model(schedule)
    rng = np.random.default_rng(2)
    z = rng.standard_normal(model.mean.shape)
    for t in (0, 30, 99):
        abar = schedule.alpha_bars[t]
        sigma_t = abar * full_covariance(model) + (1.0 - abar) * np.eye(model.mean.size)
        resid = (z - np.sqrt(abar) * model.mean).reshape(model.mean.shape[0], -1).ravel()
        expected = -np.linalg.solve(sigma_t, resid)
        got = model.score(z, t).reshape(model.mean.shape[0], -1).ravel()
        assert np.allclose(got, expected, atol=1e-10)


def test_score_from_noise_equals_model_score(schedule):
    model = small_model(schedule, r=0.8, var=0.9)
    rng = np.random.default_rng(3)
    z = rng.standard_normal(model.mean.shape)
    for t in (0, 10, 70):
        eps = model.predict_noise(z, t)
        assert np.allclose(score_from_noise(eps, t, schedule), model.score(z, t), atol=1e-6)


def test_score_matches_log_density_finite_differences(schedule):
    model = small_model(schedule, n=2, size=2)
    rng = np.random.default_rng(4)
    z = rng.standard_normal(model.mean.shape)
    t = 40
    abar = schedule.alpha_bars[t]
    sigma_t = abar * full_covariance(model) + (1.0 - abar) * np.eye(model.mean.size)
    inv = np.linalg.inv(sigma_t)
    mu_t = np.sqrt(abar) * model.mean.reshape(model.mean.shape[0], -1).ravel()

    def log_density(flat):
        d = flat - mu_t
        return -0.5 * d @ inv @ d

    flat = z.reshape(z.shape[0], -1).ravel().copy()
    fd = np.zeros_like(flat)
    h = 1e-6
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = log_density(flat)
        flat[i] = orig - h
        down = log_density(flat)
        flat[i] = orig
        fd[i] = (up - down) / (2 * h)
    got = model.score(z, t).reshape(z.shape[0], -1).ravel()
    assert np.allclose(got, fd, atol=1e-5)


def test_samples_match_declared_statistics(schedule):
    model = small_model(schedule, n=4, c=1, size=3, r=0.7, var=2.0, seed=5)
    rng = np.random.default_rng(6)
    samples = np.stack([model.sample(rng) for _ in range(4000)])
    assert np.allclose(samples.mean(axis=0), model.mean, atol=0.12)
    centered = (samples - model.mean).reshape(4000, 4, -1)
    lag1 = np.mean(centered[:, :-1, :] * centered[:, 1:, :]) / np.mean(centered**2)
    assert lag1 == pytest.approx(0.7, abs=0.03)
    assert np.mean(centered**2) == pytest.approx(2.0, rel=0.05)
