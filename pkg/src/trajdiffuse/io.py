"""Video and dataset files: raw float dumps, PGM frames, JSON manifests.

A video is stored as ``<stem>.f32`` (little-endian float32, row-major
N x C x H x W) with a ``<stem>.json`` manifest carrying the shape and any
extras (ground-truth boxes, conditioning), plus one 8-bit grayscale PGM
per frame rendered from channel 0.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .masks import BoxTrajectory

__all__ = [
    "write_pgm",
    "save_video",
    "load_video",
    "save_blob_video",
    "load_dataset_dir",
]


def write_pgm(path: str | Path, field: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    """Write a 2-D field as a binary (P5) 8-bit PGM, scaled to [lo, hi]."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ConfigurationError(f"PGM export needs a 2-D field, got shape {field.shape}")
    lo = float(field.min()) if lo is None else lo
    hi = float(field.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    pixels = np.clip((field - lo) / span * 255.0, 0, 255).astype(np.uint8)
    header = f"P5\n{field.shape[1]} {field.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def save_video(out_dir: str | Path, stem: str, video: np.ndarray, extra: dict | None = None) -> Path:
    """Write raw floats, manifest and per-frame PGMs; returns the manifest path."""
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4:
        raise ConfigurationError(f"video must be (N, C, H, W), got shape {video.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.f32").write_bytes(video.astype("<f4").tobytes())
    manifest = {
        "shape": list(video.shape),
        "dtype": "<f4",
        "order": "C",
        "layout": "NCHW",
    }
    if extra:
        manifest.update(extra)
    manifest_path = out_dir / f"{stem}.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    visible = video[:, 0]
    lo, hi = float(visible.min()), float(visible.max())
    for i, frame in enumerate(visible):
        write_pgm(out_dir / f"{stem}_frame{i:03d}.pgm", frame, lo, hi)
    return manifest_path


def load_video(manifest_path: str | Path) -> tuple[np.ndarray, dict]:
    """Read a video saved by :func:`save_video`; returns (video, manifest)."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        raw = manifest_path.with_suffix(".f32").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read video {manifest_path}: {exc}") from exc
    shape = tuple(manifest["shape"])
    video = np.frombuffer(raw, dtype=manifest.get("dtype", "<f4")).reshape(shape)
    return video.astype(np.float64), manifest


def save_blob_video(out_dir: str | Path, stem: str, video) -> Path:
    """Persist a dataset video together with its ground truth."""
    extra = {
        "canvas": {"h": video.trajectory.canvas_h, "w": video.trajectory.canvas_w},
        "boxes": video.trajectory.boxes.tolist(),
        "cond": video.cond.tolist(),
        "subject_mask": video.subject_mask.tolist(),
        "identity": video.identity,
    }
    return save_video(out_dir, stem, video.latent, extra=extra)


def load_dataset_dir(data_dir: str | Path):
    """Load every dataset video saved in a directory.

    Returns a BlobDataset with the videos in sorted stem order.
    """
    from .denoisers.data import BlobDataset, BlobVideo  # avoid an import cycle

    data_dir = Path(data_dir)
    manifests = sorted(p for p in data_dir.glob("*.json"))
    videos = []
    for manifest_path in manifests:
        video, manifest = load_video(manifest_path)
        if "boxes" not in manifest:
            continue
        traj = BoxTrajectory(
            canvas_h=int(manifest["canvas"]["h"]),
            canvas_w=int(manifest["canvas"]["w"]),
            boxes=np.asarray(manifest["boxes"], dtype=np.float64),
        )
        videos.append(
            BlobVideo(
                latent=video,
                trajectory=traj,
                cond=np.asarray(manifest["cond"], dtype=np.float64),
                subject_mask=np.asarray(manifest["subject_mask"], dtype=np.int64),
                identity=int(manifest.get("identity", -1)),
            )
        )
    if not videos:
        raise ConfigurationError(f"no dataset videos found in {data_dir}")
    n, c, h, _ = videos[0].latent.shape
    return BlobDataset(videos=tuple(videos), frames=n, channels=c, size=h)
