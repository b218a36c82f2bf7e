"""Checkpoint format: flat little-endian float32 binary + JSON manifest.

The binary holds every parameter array concatenated in a canonical layer
order; the sidecar manifest records names, shapes, the order, and a hash
of the training schedule so mismatched schedules are detectable.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from ..schedule import NoiseSchedule, make_linear_schedule
from .toy import PARAM_ORDER, ToyDenoiser

__all__ = ["save_checkpoint", "load_checkpoint"]


def _manifest_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_checkpoint(
    model: ToyDenoiser,
    path: str | Path,
    schedule_params: dict | None = None,
) -> None:
    """Write ``path`` (raw ``<f4`` data) and a JSON manifest next to it.

    ``schedule_params`` may carry the linear-schedule settings
    (num_steps/beta_start/beta_end) so tools can rebuild the schedule.
    """
    path = Path(path)
    blobs = []
    layers = []
    for name in PARAM_ORDER:
        arr = np.asarray(model.params[name], dtype="<f4")
        layers.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    manifest = {
        "format": "trajdiffuse-checkpoint-v1",
        "dtype": "<f4",
        "layers": layers,
        "mask_mode": model.mask_mode,
        "mask_norm": model.mask_norm,
        "schedule_hash": model.schedule.content_hash(),
    }
    if schedule_params is not None:
        manifest["schedule"] = dict(schedule_params)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(blobs))
    _manifest_path(path).write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path: str | Path, schedule: NoiseSchedule | None = None) -> ToyDenoiser:
    """Load a checkpoint; rebuilds the schedule from the manifest if not given."""
    path = Path(path)
    try:
        manifest = json.loads(_manifest_path(path).read_text())
        raw = path.read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    if manifest.get("format") != "trajdiffuse-checkpoint-v1":
        raise ConfigurationError(f"unrecognized checkpoint format in {path}")
    params = {}
    offset = 0
    for layer in manifest["layers"]:
        shape = tuple(layer["shape"])
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        params[layer["name"]] = block.reshape(shape).astype(np.float64)
        offset += count * 4
    if offset != len(raw):
        raise ConfigurationError(f"checkpoint {path} has trailing bytes; manifest mismatch")
    if schedule is None:
        sched_info = manifest.get("schedule")
        if sched_info is None:
            raise ConfigurationError(
                f"checkpoint {path} stores no schedule parameters; pass one explicitly"
            )
        schedule = make_linear_schedule(
            int(sched_info["num_steps"]),
            float(sched_info["beta_start"]),
            float(sched_info["beta_end"]),
        )
    return ToyDenoiser(
        params,
        schedule,
        mask_norm=bool(manifest.get("mask_norm", True)),
        mask_mode=manifest.get("mask_mode", "additive"),
    )
