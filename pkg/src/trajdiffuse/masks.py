"""Bounding-box trajectories and the attention masks built from them.

A trajectory is one axis-aligned foreground box per frame over an H x W
canvas. Masks restrict attention so foreground tokens attend only to
foreground tokens and background only to background; they are applied
during the first few ("frozen") denoising steps only.

Downsampling rule: a token is foreground iff its grid cell overlaps the
box with positive area, so small boxes survive coarse grids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ShapeError

__all__ = [
    "BoxTrajectory",
    "AttentionMaskSet",
    "rasterize_boxes",
    "build_self_mask",
    "build_cross_mask",
    "build_temporal_mask",
    "build_mask_set",
    "masks_active",
    "trajectory_at_resolution",
    "load_trajectory",
    "save_trajectory",
]


@dataclass(frozen=True)
class BoxTrajectory:
    """Per-frame foreground boxes ``(x0, y0, x1, y1)`` on an H x W canvas.

    Exactly one box per frame (single-subject assumption). Boxes use
    half-open pixel coordinates: ``0 <= x0 < x1 <= W`` and
    ``0 <= y0 < y1 <= H``.
    """

    canvas_h: int
    canvas_w: int
    boxes: np.ndarray = field(repr=False)  # (N, 4) float64, columns x0,y0,x1,y1

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=np.float64)
        if boxes.ndim != 2 or boxes.shape[1] != 4 or boxes.shape[0] < 1:
            raise ConfigurationError("boxes must be a non-empty (N, 4) array")
        x0, y0, x1, y1 = boxes.T
        if np.any(x0 < 0) or np.any(y0 < 0) or np.any(x1 > self.canvas_w) or np.any(y1 > self.canvas_h):
            raise ConfigurationError("boxes must lie inside the canvas")
        if np.any(x0 >= x1) or np.any(y0 >= y1):
            raise ConfigurationError("boxes must have positive width and height")
        object.__setattr__(self, "boxes", boxes)

    @property
    def num_frames(self) -> int:
        return int(self.boxes.shape[0])


@dataclass(frozen=True)
class AttentionMaskSet:
    """All masks needed by one attention resolution.

    ``self_masks``: (N, l, l) spatial self-attention masks, one per frame.
    ``cross_masks``: (N, l, l_y) masks against the conditioning positions.
    ``temporal_masks``: (l, N, N) temporal self-attention masks, one per
    spatial token.
    """

    self_masks: np.ndarray
    cross_masks: np.ndarray
    temporal_masks: np.ndarray
    resolution: tuple[int, int]


def _axis_token_range(lo: float, hi: float, canvas: float, cells: int) -> tuple[int, int]:
    """Half-open cell-index range overlapping [lo, hi) with positive area."""
    first = int(np.floor(lo * cells / canvas))
    last = int(np.ceil(hi * cells / canvas))
    return max(first, 0), min(last, cells)


def rasterize_boxes(traj: BoxTrajectory, grid_h: int, grid_w: int) -> np.ndarray:
    """Downsample the trajectory to binary token masks on a grid.

    Token (r, c) of frame i is 1 iff its cell, under uniform partitioning
    of the canvas into ``grid_h x grid_w`` cells, overlaps box i with
    positive area. Masks are flattened row-major.

    Returns an int array of shape (N, grid_h * grid_w).
    """
    if grid_h < 1 or grid_w < 1:
        raise ConfigurationError("grid dimensions must be >= 1")
    out = np.zeros((traj.num_frames, grid_h * grid_w), dtype=np.int64)
    for i, (x0, y0, x1, y1) in enumerate(traj.boxes):
        r0, r1 = _axis_token_range(y0, y1, traj.canvas_h, grid_h)
        c0, c1 = _axis_token_range(x0, x1, traj.canvas_w, grid_w)
        frame = out[i].reshape(grid_h, grid_w)
        frame[r0:r1, c0:c1] = 1
    return out


def trajectory_at_resolution(traj: BoxTrajectory, grid_h: int, grid_w: int) -> BoxTrajectory:
    """Trajectory with integer boxes in grid units, via the any-overlap rule.

    The returned boxes cover exactly the tokens that ``rasterize_boxes``
    marks foreground at this resolution.
    """
    boxes = np.empty((traj.num_frames, 4), dtype=np.float64)
    for i, (x0, y0, x1, y1) in enumerate(traj.boxes):
        r0, r1 = _axis_token_range(y0, y1, traj.canvas_h, grid_h)
        c0, c1 = _axis_token_range(x0, x1, traj.canvas_w, grid_w)
        boxes[i] = (c0, r0, c1, r1)
    return BoxTrajectory(canvas_h=grid_h, canvas_w=grid_w, boxes=boxes)


def _as_binary(vec: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(vec)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D")
    if not np.isin(arr, (0, 1)).all():
        raise ConfigurationError(f"{name} must contain only 0/1 entries")
    return arr.astype(np.int64)


def build_self_mask(mv: np.ndarray) -> np.ndarray:
    """Self-attention mask: entry (j, k) is 1 iff ``mv[j] == mv[k]``.

    Equals ``mv mv^T + (1-mv)(1-mv)^T`` for a binary column vector ``mv``,
    so only same-label token pairs may attend to each other.
    """
    mv = _as_binary(mv, "mv")
    return (mv[:, None] == mv[None, :]).astype(np.int64)


def build_cross_mask(mv: np.ndarray, my: np.ndarray) -> np.ndarray:
    """Cross-attention mask: entry (j, k) is 1 iff ``mv[j] == my[k]``."""
    mv = _as_binary(mv, "mv")
    my = _as_binary(my, "my")
    return (mv[:, None] == my[None, :]).astype(np.int64)


def build_temporal_mask(trajectory_masks: np.ndarray, token_index: int) -> np.ndarray:
    """Temporal self-attention mask for one spatial token.

    ``trajectory_masks`` holds the per-frame token masks, shape (N, l).
    Entry (i, j) of the result is 1 iff frames i and j agree on the
    foreground/background label of ``token_index``.
    """
    masks = np.asarray(trajectory_masks)
    if masks.ndim != 2:
        raise ShapeError("trajectory_masks must have shape (N, l)")
    if not 0 <= token_index < masks.shape[1]:
        raise IndexError(f"token_index {token_index} out of range")
    labels = masks[:, token_index]
    return (labels[:, None] == labels[None, :]).astype(np.int64)


def build_mask_set(traj: BoxTrajectory, grid_h: int, grid_w: int, prompt_mask: np.ndarray) -> AttentionMaskSet:
    """Build self, cross and temporal masks for one attention resolution.

    ``prompt_mask`` is the binary subject-token mask over the conditioning
    positions (M_y). Temporal masks are built per spatial token.
    """
    token_masks = rasterize_boxes(traj, grid_h, grid_w)  # (N, l)
    my = _as_binary(prompt_mask, "prompt_mask")
    n_frames, l = token_masks.shape
    self_masks = np.empty((n_frames, l, l), dtype=np.int64)
    cross_masks = np.empty((n_frames, l, my.size), dtype=np.int64)
    for i in range(n_frames):
        self_masks[i] = build_self_mask(token_masks[i])
        cross_masks[i] = build_cross_mask(token_masks[i], my)
    # (l, N, N): one temporal mask per spatial token, vectorized equality
    labels = token_masks.T  # (l, N)
    temporal_masks = (labels[:, :, None] == labels[:, None, :]).astype(np.int64)
    return AttentionMaskSet(
        self_masks=self_masks,
        cross_masks=cross_masks,
        temporal_masks=temporal_masks,
        resolution=(grid_h, grid_w),
    )


def masks_active(t: int, total_steps: int, frozen_steps: int) -> bool:
    """Whether masks apply at step ``t`` of a ``total_steps`` reverse loop.

    True iff ``t`` is among the first ``frozen_steps`` denoising steps,
    counting from the noisiest step ``t = total_steps - 1`` downward.
    """
    if not 0 <= frozen_steps <= total_steps:
        raise ConfigurationError(
            f"frozen_steps must be in [0, {total_steps}], got {frozen_steps}"
        )
    ordinal = (total_steps - 1) - t
    return ordinal < frozen_steps


def load_trajectory(path: str | Path) -> BoxTrajectory:
    """Read a trajectory JSON file.

    Expected fields: ``canvas: {h, w}``, ``frames: N`` and
    ``boxes: [[x0, y0, x1, y1], ...]``.
    """
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read trajectory file {path}: {exc}") from exc
    try:
        canvas = payload["canvas"]
        boxes = np.asarray(payload["boxes"], dtype=np.float64)
        traj = BoxTrajectory(canvas_h=int(canvas["h"]), canvas_w=int(canvas["w"]), boxes=boxes)
        if "frames" in payload and int(payload["frames"]) != traj.num_frames:
            raise ConfigurationError(
                f"trajectory file declares {payload['frames']} frames "
                f"but lists {traj.num_frames} boxes"
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed trajectory file {path}: {exc}") from exc
    return traj


def save_trajectory(traj: BoxTrajectory, path: str | Path) -> None:
    payload = {
        "canvas": {"h": traj.canvas_h, "w": traj.canvas_w},
        "frames": traj.num_frames,
        "boxes": traj.boxes.tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=2))
