"""Noise-prediction training loop for the toy denoiser.

Standard regression: sample a step, noise a clean video with the forward
process, and regress the injected noise. No attention masks are used at
training time (masking is inference-only). Conditioning is dropped with a
small probability so the model also learns an unconditional branch for
classifier-free guidance. Fully deterministic given the seed.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ..errors import ConfigurationError, TrainingError
from ..schedule import NoiseSchedule
from .data import BlobDataset
from .toy import ToyDenoiser, init_params

__all__ = ["train_toy_denoiser", "AdamState"]

logger = logging.getLogger(__name__)


class AdamState:
    """Adam optimizer over a dict of parameter arrays."""

    def __init__(self, params: dict, lr: float = 2e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def update(self, params: dict, grads: dict) -> None:
        self.step += 1
        bc1 = 1.0 - self.beta1**self.step
        bc2 = 1.0 - self.beta2**self.step
        for key, grad in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            params[key] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def train_toy_denoiser(
    dataset: BlobDataset,
    schedule: NoiseSchedule,
    epochs: int,
    seed: int,
    hidden: int = 16,
    lr: float = 2e-3,
    p_uncond: float = 0.15,
) -> ToyDenoiser:
    """Train a toy denoiser on a blob dataset; returns the trained model.

    Per-epoch mean losses are kept on ``model.train_loss_history`` and the
    final loss is logged. Raises TrainingError if the loss goes non-finite.
    """
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    if epochs < 1:
        raise ConfigurationError("epochs must be >= 1")
    rng = np.random.default_rng(seed)
    params = init_params(rng, channels=dataset.channels, hidden=hidden,
                         cond_len=dataset.videos[0].cond.size)
    model = ToyDenoiser(params, schedule)
    opt = AdamState(params, lr=lr)
    num_steps = schedule.num_steps

    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for idx in order:
            video = dataset.videos[idx]
            t = int(rng.integers(0, num_steps))
            noise = rng.standard_normal(video.latent.shape)
            abar = schedule.alpha_bar(t)
            z_t = math.sqrt(abar) * video.latent + math.sqrt(1.0 - abar) * noise
            cond_vec = None if rng.random() < p_uncond else video.cond
            loss, grads = model.loss_and_gradients(z_t, t, noise, cond_vec)
            if not math.isfinite(loss):
                raise TrainingError(f"loss became non-finite at epoch {epoch}")
            opt.update(params, grads)
            epoch_loss += loss
        model.train_loss_history.append(epoch_loss / len(dataset))
    logger.info("training finished: final epoch loss %.6f", model.train_loss_history[-1])
    return model
