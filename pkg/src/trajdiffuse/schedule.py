"""Diffusion noise schedule and per-timestep coefficients.

Timestep convention: ``t`` indexes from 0 (least noisy) to ``T - 1``
(most noisy); samplers iterate ``t = T-1, ..., 0``. ``alpha_bars[t]``
is the running product of ``1 - betas`` up to and including ``t``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "NoiseSchedule",
    "TidCoefficients",
    "make_linear_schedule",
    "tid_coefficients",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise rates and their cumulative products.

    Attributes
    ----------
    betas : ndarray, shape (T,)
        Per-step noise rates, each strictly in (0, 1).
    alphas : ndarray, shape (T,)
        ``1 - betas``.
    alpha_bars : ndarray, shape (T,)
        Cumulative products of ``alphas``; strictly decreasing, in (0, 1].
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigurationError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ConfigurationError("betas must lie strictly in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=np.float64))
        object.__setattr__(
            self, "alpha_bars", np.asarray(self.alpha_bars, dtype=np.float64)
        )

    @property
    def num_steps(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        """Cumulative product at step ``t`` (raises IndexError when out of range)."""
        self._check_step(t)
        return float(self.alpha_bars[t])

    def alpha_bar_prev(self, t: int) -> float:
        """Cumulative product of the step below ``t``; 1.0 at the clean end."""
        self._check_step(t)
        return float(self.alpha_bars[t - 1]) if t >= 1 else 1.0

    def _check_step(self, t: int) -> None:
        if not 0 <= t < self.num_steps:
            raise IndexError(f"step {t} out of range [0, {self.num_steps})")

    def content_hash(self) -> str:
        """Hex digest identifying the schedule (used in checkpoint manifests)."""
        h = hashlib.sha256()
        h.update(np.asarray(self.betas, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class TidCoefficients:
    """Drift/noise coefficients of one intrinsic-denoising inner step.

    ``eta_l = gamma * (1 - alpha_bar)`` scales the log-density gradient and
    ``eta_k = sqrt(gamma * (2 - gamma) * (1 - alpha_bar))`` scales the fresh
    noise; together they leave the latent variance unchanged under the true
    score.
    """

    eta_l: float
    eta_k: float
    gamma: float


def make_linear_schedule(
    num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Build a schedule with betas linearly spaced over ``[beta_start, beta_end]``.

    Parameters
    ----------
    num_steps : int
        Number of diffusion steps T, at least 1.
    beta_start, beta_end : float
        First and last per-step noise rate; must satisfy
        ``0 < beta_start <= beta_end < 1``.
    """
    if num_steps < 1:
        raise ConfigurationError(f"num_steps must be >= 1, got {num_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def tid_coefficients(schedule: NoiseSchedule, t: int, gamma: float) -> TidCoefficients:
    """Coefficients (eta_l, eta_k) for the inner update at step ``t``.

    ``gamma`` must lie strictly in (0, 1); ``t`` must be a valid step index.
    """
    if not (0.0 < gamma < 1.0):
        raise ConfigurationError(f"gamma must be in (0, 1), got {gamma}")
    one_minus_abar = 1.0 - schedule.alpha_bar(t)
    eta_l = gamma * one_minus_abar
    eta_k = math.sqrt(gamma * (2.0 - gamma) * one_minus_abar)
    return TidCoefficients(eta_l=eta_l, eta_k=eta_k, gamma=gamma)
