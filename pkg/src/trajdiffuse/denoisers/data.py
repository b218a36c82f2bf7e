"""Procedural moving-blob videos used to train and evaluate the toy model.

Each video shows one bright Gaussian blob moving with constant velocity
(bouncing at the canvas edges) over a low-frequency textured background
that is largely static across frames. The blob is written into channel 0
(the "visible" channel); channel 1 carries a faint copy plus its own
texture so foreground and background statistics differ in every channel.

Blob identity (size class x intensity class) is encoded as a one-hot
block in the conditioning vector; those positions form the subject-token
mask used by cross-attention masking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ConfigurationError
from ..masks import BoxTrajectory
from ..sampler import Conditioning

__all__ = ["BlobVideo", "BlobDataset", "make_blob_dataset", "BLOB_IDENTITIES"]

# (radius, peak amplitude) per identity class
BLOB_IDENTITIES = ((2, 2.2), (2, 3.2), (3, 2.2), (3, 3.2))

COND_LEN = 8
SUBJECT_MASK = np.array([1, 1, 1, 1, 0, 0, 0, 0])
_STYLE_BLOCK = np.array([0.25, 0.5, 0.75, 1.0])

BACKGROUND_SCALE = 0.35
FRAME_JITTER = 0.08
SECONDARY_CHANNEL_FACTOR = 0.25


@dataclass(frozen=True)
class BlobVideo:
    """One synthetic video with its ground truth and conditioning."""

    latent: np.ndarray  # (N, C, H, W)
    trajectory: BoxTrajectory
    cond: np.ndarray
    subject_mask: np.ndarray
    identity: int

    def conditioning(self) -> Conditioning:
        return Conditioning(
            prompt_vector=self.cond,
            trajectory=self.trajectory,
            subject_mask=self.subject_mask,
        )


@dataclass(frozen=True)
class BlobDataset:
    videos: tuple[BlobVideo, ...]
    frames: int
    channels: int
    size: int

    def __len__(self) -> int:
        return len(self.videos)


def cond_vector(identity: int) -> np.ndarray:
    """Conditioning vector: one-hot identity block plus fixed style block."""
    if not 0 <= identity < len(BLOB_IDENTITIES):
        raise ConfigurationError(f"identity must be in [0, {len(BLOB_IDENTITIES)}), got {identity}")
    one_hot = np.zeros(len(BLOB_IDENTITIES))
    one_hot[identity] = 1.0
    return np.concatenate([one_hot, _STYLE_BLOCK])


def _background(rng: np.random.Generator, frames: int, channels: int, size: int) -> np.ndarray:
    """Low-frequency static texture plus small per-frame jitter."""
    coarse = rng.standard_normal((channels, 4, 4))
    zoom = size / 4
    base = np.stack([ndimage.zoom(c, zoom, order=1, mode="nearest") for c in coarse])
    field = BACKGROUND_SCALE * np.broadcast_to(base, (frames, channels, size, size)).copy()
    field += FRAME_JITTER * rng.standard_normal(field.shape)
    return field

def _blob_frame(cy: float, cx: float, radius: int, amp: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    sigma = radius / 1.4
    return amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


def _bouncing_track(
    rng: np.random.Generator, frames: int, size: int, radius: int
) -> np.ndarray:
    """Integer blob centers, reflected at the walls; ~1 in 4 tracks is static."""
    lo, hi = radius, size - 1 - radius
    pos = np.array([rng.integers(lo, hi + 1), rng.integers(lo, hi + 1)], dtype=np.int64)
    if rng.random() < 0.25:
        vel = np.zeros(2, dtype=np.int64)
    else:
        vel = rng.integers(-2, 3, size=2)
    centers = np.empty((frames, 2), dtype=np.int64)
    for i in range(frames):
        centers[i] = pos
        for axis in range(2):
            nxt = pos[axis] + vel[axis]
            if nxt < lo or nxt > hi:
                vel[axis] = -vel[axis]
        # clamp too: a reflected move can still overshoot a narrow range
        pos = np.clip(pos + vel, lo, hi)
    return centers


def make_blob_video(
    rng: np.random.Generator,
    frames: int = 8,
    channels: int = 2,
    size: int = 16,
    identity: int | None = None,
) -> BlobVideo:
    if channels < 1:
        raise ConfigurationError("need at least one channel")
    fitting = [i for i, (r, _) in enumerate(BLOB_IDENTITIES) if 2 * r + 1 < size]
    if identity is None:
        identity = fitting[int(rng.integers(0, len(fitting)))]
    elif identity not in fitting:
        raise ConfigurationError(
            f"identity {identity} needs a canvas larger than {size}x{size}"
        )
    radius, amp = BLOB_IDENTITIES[identity]
    centers = _bouncing_track(rng, frames, size, radius)
    latent = _background(rng, frames, channels, size)
    boxes = np.empty((frames, 4))
    for i, (cy, cx) in enumerate(centers):
        bump = _blob_frame(cy, cx, radius, amp, size)
        latent[i, 0] += bump
        if channels > 1:
            latent[i, 1] += SECONDARY_CHANNEL_FACTOR * bump
        boxes[i] = (cx - radius, cy - radius, cx + radius + 1, cy + radius + 1)
    traj = BoxTrajectory(canvas_h=size, canvas_w=size, boxes=boxes)
    return BlobVideo(
        latent=latent,
        trajectory=traj,
        cond=cond_vector(identity),
        subject_mask=SUBJECT_MASK.copy(),
        identity=identity,
    )


def make_blob_dataset(
    num_videos: int,
    seed: int,
    frames: int = 8,
    channels: int = 2,
    size: int = 16,
) -> BlobDataset:
    """Generate a dataset deterministically from a seed."""
    if num_videos < 1:
        raise ConfigurationError("num_videos must be >= 1")
    rng = np.random.default_rng(seed)
    videos = tuple(
        make_blob_video(rng, frames=frames, channels=channels, size=size)
        for _ in range(num_videos)
    )
    return BlobDataset(videos=videos, frames=frames, channels=channels, size=size)
