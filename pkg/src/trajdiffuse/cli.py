"""Command-line interface.

Subcommands: ``gen-data`` (synthesize the blob dataset), ``train`` (fit
the toy denoiser), ``generate`` (sample one video), ``variance-study``
(activation-variance traces), ``evaluate`` (score a video against a
trajectory) and ``sweep`` (the ablation benchmark). Report paths write a
matplotlib figure next to every CSV/JSON output.

Sampling flags may also live in a JSON config file (same names with
underscores); explicit flags override the file. Exit codes: 0 ok,
2 configuration error, 3 numeric error, 4 degenerate input.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, io, plots
from .denoisers import (
    load_checkpoint,
    make_blob_dataset,
    save_checkpoint,
    train_toy_denoiser,
)
from .denoisers.data import SUBJECT_MASK, cond_vector
from .errors import ConfigurationError, DegenerateInputError, NumericError
from .evaluation import (
    TOY_TID_CG,
    default_threshold,
    detect_blob,
    evaluate,
    run_sweep,
    summarize_sweep,
)
from .masks import load_trajectory
from .sampler import Conditioning, GuidanceConfig, SampleTrace, generate
from .schedule import make_linear_schedule

SAMPLING_KEYS = (
    "steps", "beta_start", "beta_end", "gamma", "inner_steps", "cg", "omega",
    "frozen_steps", "grad_norm", "seed", "mode", "mask_mode", "mask_norm",
)

SAMPLING_DEFAULTS = {
    "steps": 50,
    "beta_start": 1e-4,
    "beta_end": 0.02,
    "gamma": GuidanceConfig.gamma,
    "inner_steps": GuidanceConfig.inner_steps,
    "cg": GuidanceConfig.cg,
    "omega": GuidanceConfig.omega,
    "frozen_steps": GuidanceConfig.frozen_steps,
    "grad_norm": False,
    "seed": 0,
    "mode": "tid",
    "mask_mode": "additive",
    "mask_norm": "on",
}


def _add_sampling_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON file with sampling options")
    parser.add_argument("--steps", type=int)
    parser.add_argument("--beta-start", type=float, dest="beta_start")
    parser.add_argument("--beta-end", type=float, dest="beta_end")
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--inner-steps", type=int, dest="inner_steps")
    parser.add_argument("--cg", type=float)
    parser.add_argument("--omega", type=float)
    parser.add_argument("--frozen-steps", type=int, dest="frozen_steps")
    parser.add_argument("--grad-norm", action="store_const", const=True, dest="grad_norm")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--mode", choices=("plain", "id", "tid"))
    parser.add_argument("--mask-mode", choices=("additive", "multiplicative"), dest="mask_mode")
    parser.add_argument("--mask-norm", choices=("on", "off"), dest="mask_norm")


def _resolve_options(args: argparse.Namespace) -> dict:
    """Defaults, overridden by the config file, overridden by flags."""
    options = dict(SAMPLING_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config file {config_path}: {exc}") from exc
        unknown = set(loaded) - set(SAMPLING_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        options.update(loaded)
    for key in SAMPLING_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    return options


def _guidance_config(options: dict, cg_override: float | None = None) -> GuidanceConfig:
    overrides = {
        "gamma": options["gamma"],
        "inner_steps": options["inner_steps"],
        "omega": options["omega"],
        "frozen_steps": options["frozen_steps"],
        "grad_norm": bool(options["grad_norm"]),
        "seed": options["seed"],
    }
    if options["mode"] != "id":
        overrides["cg"] = options["cg"] if cg_override is None else cg_override
    return GuidanceConfig.for_mode(options["mode"], **overrides)


def _schedule(options: dict):
    return make_linear_schedule(options["steps"], options["beta_start"], options["beta_end"])


def _load_denoiser(args: argparse.Namespace, options: dict):
    denoiser = load_checkpoint(args.checkpoint, schedule=_schedule(options))
    return denoiser.with_options(
        mask_norm=options["mask_norm"] == "on",
        mask_mode=options["mask_mode"],
    )


def _conditioning(args: argparse.Namespace, shape: tuple) -> Conditioning:
    if getattr(args, "trajectory", None) is not None:
        traj = load_trajectory(args.trajectory)
        return Conditioning(
            prompt_vector=cond_vector(args.identity),
            trajectory=traj,
            subject_mask=SUBJECT_MASK.copy(),
        )
    from .evaluation import _benchmark_conditioning

    return _benchmark_conditioning(int(getattr(args, "seed", 0) or 0), shape)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_gen_data(args: argparse.Namespace) -> int:
    dataset = make_blob_dataset(
        args.videos, args.seed, frames=args.frames, channels=args.channels, size=args.size
    )
    out = Path(args.out)
    for i, video in enumerate(dataset.videos):
        io.save_blob_video(out, f"video_{i:04d}", video)
    print(f"wrote {len(dataset)} videos to {out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    options = _resolve_options(args)
    schedule = _schedule(options)
    if args.data is not None:
        dataset = io.load_dataset_dir(args.data)
    else:
        dataset = make_blob_dataset(args.videos, args.data_seed)
    model = train_toy_denoiser(
        dataset, schedule, epochs=args.epochs, seed=options["seed"],
        hidden=args.hidden, lr=args.lr,
    )
    save_checkpoint(model, args.out, schedule_params={
        "num_steps": options["steps"],
        "beta_start": options["beta_start"],
        "beta_end": options["beta_end"],
    })
    print(f"final epoch loss {model.train_loss_history[-1]:.6f}; checkpoint at {args.out}")
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    options = _resolve_options(args)
    schedule = _schedule(options)
    denoiser = _load_denoiser(args, options)
    n, c = args.frames, denoiser.channels
    shape = (n, c, args.size, args.size)
    cond = _conditioning(args, shape)
    if cond.trajectory.num_frames != n:
        raise ConfigurationError(
            f"trajectory has {cond.trajectory.num_frames} frames; --frames asked {n}"
        )
    config = _guidance_config(options)
    trace = SampleTrace() if args.dump_tau else None
    z0 = generate(denoiser, cond, config, schedule, shape, trace=trace)
    out = Path(args.out)
    io.save_video(out, args.stem, z0, extra={
        "canvas": {"h": cond.trajectory.canvas_h, "w": cond.trajectory.canvas_w},
        "boxes": cond.trajectory.boxes.tolist(),
        "options": options,
    })
    fields = z0[:, 0]
    detections = [detect_blob(f, default_threshold(f)) for f in fields]
    plots.save_montage_figure(out / f"{args.stem}.png", fields,
                              gt_boxes=cond.trajectory.boxes, detected_boxes=detections)
    if args.dump_tau:
        with Path(args.dump_tau).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "inner_step", "pair", "rho"])
            writer.writerows(trace.tau_records)
    print(f"wrote video {args.stem} to {out}")
    return 0


def _cmd_variance_study(args: argparse.Namespace) -> int:
    options = _resolve_options(args)
    schedule = _schedule(options)
    denoiser = _load_denoiser(args, options)
    shape = (args.frames, denoiser.channels, args.size, args.size)
    cond = _conditioning(args, shape)
    config = _guidance_config(options)
    baseline, masked, ours = diagnostics.run_variance_study(
        denoiser, cond, config, schedule, args.layer, shape, tid_cg=args.tid_cg
    )
    out = Path(args.out)
    diagnostics.write_variance_csv(out, baseline, masked, ours)
    plots.save_variance_figure(out.with_suffix(".png"), baseline, masked, ours,
                               options["frozen_steps"])
    masked_err = float(np.mean(diagnostics.variance_mse(masked, baseline)))
    ours_err = float(np.mean(diagnostics.variance_mse(ours, baseline)))
    print(f"mean variance MSE vs baseline: masked={masked_err:.6g} ours={ours_err:.6g}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    video, manifest = io.load_video(args.video)
    if args.trajectory is not None:
        traj = load_trajectory(args.trajectory)
    elif "boxes" in manifest:
        from .masks import BoxTrajectory

        traj = BoxTrajectory(
            canvas_h=int(manifest["canvas"]["h"]),
            canvas_w=int(manifest["canvas"]["w"]),
            boxes=np.asarray(manifest["boxes"], dtype=np.float64),
        )
    else:
        raise ConfigurationError("no trajectory given and none stored in the video manifest")
    report = evaluate(video[:, 0], traj, threshold=args.threshold)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2))
    plots.save_eval_figure(out.with_suffix(".png"), report)
    miou = "n/a" if report.miou is None else f"{report.miou:.4f}"
    print(f"coverage_hit={report.coverage_hit} miou={miou} -> {out}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    options = _resolve_options(args)
    schedule = _schedule(options)
    denoiser = _load_denoiser(args, options)
    shape = (args.frames, denoiser.channels, args.size, args.size)
    base = GuidanceConfig(
        gamma=options["gamma"], inner_steps=options["inner_steps"],
        omega=options["omega"], frozen_steps=options["frozen_steps"],
    )
    seeds = range(args.seed_start, args.seed_start + args.seeds)
    rows = run_sweep(
        denoiser, schedule, shape, seeds, base=base, tid_cg=args.tid_cg,
        include_grad_norm=args.include_grad_norm, threshold=args.threshold,
    )
    summary = summarize_sweep(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    plots.save_sweep_figure(out / "sweep.png", summary)
    for name, stats in summary["per_config"].items():
        miou = "n/a" if stats["miou"] is None else f"{stats['miou']:.4f}"
        print(f"{name}: coverage={stats['coverage']:.2f} miou={miou}")
    if not summary["orderings_hold"]:
        print(f"deviation report: {json.dumps(summary['deviations'])}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traj-diffuse",
        description="Trajectory-controlled toy diffusion sampling with mask "
                    "normalization and temporal intrinsic denoising.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic blob dataset")
    p.add_argument("--videos", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--size", type=int, default=16)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train the toy denoiser")
    p.add_argument("--data", type=Path, help="dataset directory from gen-data")
    p.add_argument("--videos", type=int, default=200, help="self-generate this many videos")
    p.add_argument("--data-seed", type=int, default=0, dest="data_seed")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--out", type=Path, required=True)
    _add_sampling_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="sample one trajectory-conditioned video")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--trajectory", type=Path, help="trajectory JSON; omit for a benchmark one")
    p.add_argument("--identity", type=int, default=0, help="blob identity class")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--stem", default="sample")
    p.add_argument("--dump-tau", type=Path, dest="dump_tau",
                   help="CSV of per-pair crop correlations seen by the guidance")
    _add_sampling_flags(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("variance-study", help="activation variance across steps")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--layer", choices=("spatial", "temporal", "cross"), default="spatial")
    p.add_argument("--trajectory", type=Path)
    p.add_argument("--identity", type=int, default=0)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--tid-cg", type=float, default=TOY_TID_CG, dest="tid_cg")
    p.add_argument("--out", type=Path, required=True, help="CSV path; figure lands beside it")
    _add_sampling_flags(p)
    p.set_defaults(func=_cmd_variance_study)

    p = sub.add_parser("evaluate", help="score a saved video against a trajectory")
    p.add_argument("--video", type=Path, required=True, help="video manifest JSON")
    p.add_argument("--trajectory", type=Path)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", type=Path, required=True, help="report JSON path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="ablation benchmark over seeds and configs")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed-start", type=int, default=0, dest="seed_start")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--tid-cg", type=float, default=TOY_TID_CG, dest="tid_cg")
    p.add_argument("--include-grad-norm", action="store_true", dest="include_grad_norm")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_sampling_flags(p)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except DegenerateInputError as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
