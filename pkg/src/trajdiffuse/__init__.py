"""Training-free trajectory control for toy diffusion samplers.

Bounding-box attention masking, exact-rank mask normalization, a temporal
correlation prior with analytic gradient, and temporal intrinsic
denoising, verified against analytic and toy denoisers.
"""

from .attention import AttentionInputs, AttentionPair, attention, attention_pair
from .masknorm import RankMatchPolicy, efdm_match, mask_normalize
from .masks import (
    AttentionMaskSet,
    BoxTrajectory,
    build_cross_mask,
    build_mask_set,
    build_self_mask,
    build_temporal_mask,
    load_trajectory,
    masks_active,
    rasterize_boxes,
    save_trajectory,
    trajectory_at_resolution,
)
from .sampler import (
    Conditioning,
    GuidanceConfig,
    SampleTrace,
    cfg_noise,
    ddim_step,
    generate,
    score_from_noise,
    tid_inner_step,
    tweedie_estimate,
)
from .schedule import NoiseSchedule, TidCoefficients, make_linear_schedule, tid_coefficients
from .temporal_prior import pearson, sample_crop, stratified_grid, tau, tau_gradient
from .evaluation import EvalReport, detect_blob, evaluate, iou, run_sweep, summarize_sweep

__version__ = "0.1.0"

__all__ = [
    "AttentionInputs",
    "AttentionPair",
    "AttentionMaskSet",
    "BoxTrajectory",
    "Conditioning",
    "EvalReport",
    "GuidanceConfig",
    "NoiseSchedule",
    "RankMatchPolicy",
    "SampleTrace",
    "TidCoefficients",
    "attention",
    "attention_pair",
    "build_cross_mask",
    "build_mask_set",
    "build_self_mask",
    "build_temporal_mask",
    "cfg_noise",
    "ddim_step",
    "detect_blob",
    "efdm_match",
    "evaluate",
    "generate",
    "iou",
    "load_trajectory",
    "make_linear_schedule",
    "mask_normalize",
    "masks_active",
    "pearson",
    "rasterize_boxes",
    "run_sweep",
    "sample_crop",
    "save_trajectory",
    "score_from_noise",
    "stratified_grid",
    "summarize_sweep",
    "tau",
    "tau_gradient",
    "tid_coefficients",
    "tid_inner_step",
    "trajectory_at_resolution",
    "tweedie_estimate",
]
