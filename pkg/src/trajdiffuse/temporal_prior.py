"""Temporal consistency score over box crops and its analytic gradient.

The score is the mean Pearson correlation between pixels sampled from the
foreground boxes of consecutive frames: for each frame pair the two crops
are reduced to a common ``h_min x w_min`` grid (h_min/w_min are the
smaller of the two crop extents), flattened with all channels, and
correlated. It operates on the latent tensor directly.

Sampling positions form a deterministic stratified grid (evenly spaced
indices, rounded down), so the gradient is well defined and runs are
reproducible. Constant crops would make the correlation undefined; such
pairs contribute zero score and zero gradient, with a logged warning, so
sampling stays alive on blank regions early in denoising.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError
from .masks import BoxTrajectory

__all__ = [
    "SamplingGrid",
    "stratified_grid",
    "sample_crop",
    "pearson",
    "tau",
    "tau_gradient",
    "tau_with_gradient",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplingGrid:
    """Deterministic row/column indices to gather from a crop."""

    rows: np.ndarray
    cols: np.ndarray


def stratified_grid(crop_h: int, crop_w: int, h_min: int, w_min: int) -> SamplingGrid:
    """Evenly spaced indices over a ``crop_h x crop_w`` crop, rounded down.

    Picks ``h_min`` rows and ``w_min`` cols; the identity grid when the
    crop already has the target extent.
    """
    if h_min < 1 or w_min < 1 or h_min > crop_h or w_min > crop_w:
        raise IndexError(
            f"grid {h_min}x{w_min} invalid for crop {crop_h}x{crop_w}"
        )
    rows = (np.arange(h_min) * crop_h) // h_min
    cols = (np.arange(w_min) * crop_w) // w_min
    return SamplingGrid(rows=rows, cols=cols)


def sample_crop(region: np.ndarray, grid: SamplingGrid) -> np.ndarray:
    """Gather grid positions from an ``(h, w, C)`` crop, flattened row-major."""
    region = np.asarray(region)
    if region.ndim != 3:
        raise ShapeError(f"crop must be (h, w, C), got shape {region.shape}")
    h, w, _ = region.shape
    if np.any(grid.rows < 0) or np.any(grid.rows >= h) or np.any(grid.cols < 0) or np.any(grid.cols >= w):
        raise IndexError("sampling grid indices out of range for crop")
    return region[np.ix_(grid.rows, grid.cols)].ravel()


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation of two equal-length, non-constant vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ShapeError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ShapeError("vectors must have length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    nx = float(np.linalg.norm(xc))
    ny = float(np.linalg.norm(yc))
    if nx == 0.0 or ny == 0.0:
        raise DegenerateInputError("constant vector has undefined correlation")
    return float(np.clip(xc @ yc / (nx * ny), -1.0, 1.0))


def _int_boxes(traj: BoxTrajectory, z: np.ndarray) -> np.ndarray:
    n, _, h, w = z.shape
    if traj.num_frames != n:
        raise ShapeError(
            f"trajectory has {traj.num_frames} frames but latent has {n}"
        )
    if (traj.canvas_h, traj.canvas_w) != (h, w):
        raise ShapeError(
            f"trajectory canvas {traj.canvas_h}x{traj.canvas_w} does not match "
            f"latent grid {h}x{w}; convert with trajectory_at_resolution first"
        )
    boxes = traj.boxes
    if not np.allclose(boxes, np.round(boxes)):
        raise ShapeError("latent-resolution trajectory must have integer boxes")
    return boxes.astype(np.int64)


def _pair_geometry(boxes: np.ndarray, i: int):
    """Crop slices and shared-size sampling grids for frame pair (i, i+1)."""
    xa0, ya0, xa1, ya1 = boxes[i]
    xb0, yb0, xb1, yb1 = boxes[i + 1]
    ha, wa = ya1 - ya0, xa1 - xa0
    hb, wb = yb1 - yb0, xb1 - xb0
    h_min, w_min = min(ha, hb), min(wa, wb)
    grid_a = stratified_grid(ha, wa, h_min, w_min)
    grid_b = stratified_grid(hb, wb, h_min, w_min)
    return (ya0, xa0, grid_a), (yb0, xb0, grid_b)


def _gather(z: np.ndarray, frame: int, y0: int, x0: int, grid: SamplingGrid) -> np.ndarray:
    """Sampled crop of one frame as an (h_min, w_min, C) block."""
    region = np.moveaxis(z[frame], 0, -1)  # (h, w, C)
    return region[np.ix_(y0 + grid.rows, x0 + grid.cols)]


def _pair_terms(traj: BoxTrajectory, z: np.ndarray):
    """Yield per-pair sampled vectors and scatter metadata."""
    boxes = _int_boxes(traj, z)
    if boxes.shape[0] < 2:
        raise ShapeError("temporal score needs at least 2 frames")
    for i in range(boxes.shape[0] - 1):
        (ya, xa, grid_a), (yb, xb, grid_b) = _pair_geometry(boxes, i)
        block_a = _gather(z, i, ya, xa, grid_a)
        block_b = _gather(z, i + 1, yb, xb, grid_b)
        yield i, (ya, xa, grid_a, block_a), (yb, xb, grid_b, block_b)


def tau_with_gradient(traj: BoxTrajectory, z: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Temporal score, its analytic gradient, and the per-pair correlations.

    ``traj`` must already be at the latent resolution (integer boxes on the
    ``z`` grid); ``z`` has shape (N, C, h, w). The gradient is nonzero only
    at sampled foreground positions; positions sampled by both pairs of a
    frame accumulate both contributions. Degenerate (constant) crops
    contribute correlation 0 with zero gradient.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 4:
        raise ShapeError(f"latent must be (N, C, h, w), got shape {z.shape}")
    grad = np.zeros_like(z)
    rhos = []
    for i, (ya, xa, grid_a, block_a), (yb, xb, grid_b, block_b) in _pair_terms(traj, z):
        x = block_a.ravel()
        y = block_b.ravel()
        xc = x - x.mean()
        yc = y - y.mean()
        nx = float(np.linalg.norm(xc))
        ny = float(np.linalg.norm(yc))
        if nx == 0.0 or ny == 0.0:
            logger.warning("constant crop in frame pair (%d, %d); correlation set to 0", i, i + 1)
            rhos.append(0.0)
            continue
        rho = float(np.clip(xc @ yc / (nx * ny), -1.0, 1.0))
        rhos.append(rho)
        gx = (yc / (nx * ny) - rho * xc / nx**2).reshape(block_a.shape)
        gy = (xc / (nx * ny) - rho * yc / ny**2).reshape(block_b.shape)
        # scatter back into (C, h, w) layout; grid indices are distinct
        rr_a, cc_a = np.ix_(ya + grid_a.rows, xa + grid_a.cols)
        rr_b, cc_b = np.ix_(yb + grid_b.rows, xb + grid_b.cols)
        grad[i][:, rr_a, cc_a] += np.moveaxis(gx, -1, 0)
        grad[i + 1][:, rr_b, cc_b] += np.moveaxis(gy, -1, 0)
    n_pairs = len(rhos)
    grad /= n_pairs
    return float(np.mean(rhos)), grad, np.asarray(rhos)


def tau(traj: BoxTrajectory, z: np.ndarray) -> float:
    """Mean Pearson correlation of sampled crops over consecutive frames."""
    value, _, _ = tau_with_gradient(traj, z)
    return value


def tau_gradient(traj: BoxTrajectory, z: np.ndarray) -> np.ndarray:
    """Gradient of :func:`tau` with respect to every latent entry."""
    _, grad, _ = tau_with_gradient(traj, z)
    return grad
