"""Analytic Gaussian video model with the exact noise predictor.

The data law is Gaussian with a known mean field and a separable
covariance: every spatial position carries an independent N-vector over
frames with AR(1)-style correlation ``r^|i-j|`` and marginal variance
``s^2``. Videos drawn from it have the high inter-frame correlation that
makes temporal effects observable, and every quantity the sampler needs
(posterior mean, optimal noise prediction, marginal score) has a closed
form, so sampler math can be verified exactly.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigurationError, ShapeError
from ..schedule import NoiseSchedule

__all__ = ["GaussianVideoModel"]


class GaussianVideoModel:
    """Gaussian data law over latent videos plus its optimal denoiser.

    Parameters
    ----------
    mean : ndarray, shape (N, C, h, w)
        Mean field of the data distribution.
    frame_corr : float in [0, 1)
        Lag-1 correlation between consecutive frames at each position.
    marginal_var : float > 0
        Variance of each entry.
    schedule : NoiseSchedule
        Diffusion schedule the noise predictions refer to.
    """

    def __init__(
        self,
        mean: np.ndarray,
        frame_corr: float,
        marginal_var: float,
        schedule: NoiseSchedule,
    ):
        mean = np.asarray(mean, dtype=np.float64)
        if mean.ndim != 4:
            raise ShapeError(f"mean must be (N, C, h, w), got shape {mean.shape}")
        if not 0.0 <= frame_corr < 1.0:
            raise ConfigurationError(f"frame_corr must be in [0, 1), got {frame_corr}")
        if marginal_var <= 0.0:
            raise ConfigurationError(f"marginal_var must be > 0, got {marginal_var}")
        self.mean = mean
        self.frame_corr = float(frame_corr)
        self.marginal_var = float(marginal_var)
        self.schedule = schedule
        n = mean.shape[0]
        lags = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
        self.frame_cov = marginal_var * frame_corr**lags  # (N, N), positive definite
        self._chol = np.linalg.cholesky(self.frame_cov)

    # -- data distribution -------------------------------------------------

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one video from the data law."""
        n = self.mean.shape[0]
        flat = rng.standard_normal((n, self.mean[0].size))
        correlated = self._chol @ flat
        return self.mean + correlated.reshape(self.mean.shape)

    # -- closed-form conditionals at noise level t ---------------------------

    def _noised_frame_cov(self, t: int) -> np.ndarray:
        abar = self.schedule.alpha_bar(t)
        n = self.mean.shape[0]
        return abar * self.frame_cov + (1.0 - abar) * np.eye(n)

    def _whitened_residual(self, z: np.ndarray, t: int) -> np.ndarray:
        """Solve (abar*Sigma + (1-abar)I) x = z - sqrt(abar)*mean, framewise."""
        abar = self.schedule.alpha_bar(t)
        z = np.asarray(z, dtype=np.float64)
        if z.shape != self.mean.shape:
            raise ShapeError(f"latent shape {z.shape} does not match model {self.mean.shape}")
        n = z.shape[0]
        resid = (z - math.sqrt(abar) * self.mean).reshape(n, -1)
        return np.linalg.solve(self._noised_frame_cov(t), resid)

    def posterior_mean(self, z: np.ndarray, t: int) -> np.ndarray:
        """E[x0 | z_t], the exact conditional mean of the clean video."""
        abar = self.schedule.alpha_bar(t)
        solved = self._whitened_residual(z, t)
        update = math.sqrt(abar) * (self.frame_cov @ solved)
        return self.mean + update.reshape(self.mean.shape)

    def score(self, z: np.ndarray, t: int) -> np.ndarray:
        """Gradient of the log marginal density of z_t."""
        return -self._whitened_residual(z, t).reshape(self.mean.shape)

    # -- Denoiser protocol ---------------------------------------------------

    def predict_noise(self, z, t, cond=None, masks=None) -> np.ndarray:
        """Optimal noise prediction (z - sqrt(abar)*E[x0|z]) / sqrt(1-abar).

        Conditioning and masks are accepted for interface compatibility and
        ignored: the model's conditional and unconditional predictions
        coincide.
        """
        del cond, masks
        abar = self.schedule.alpha_bar(t)
        solved = self._whitened_residual(z, t)
        return math.sqrt(1.0 - abar) * solved.reshape(self.mean.shape)
