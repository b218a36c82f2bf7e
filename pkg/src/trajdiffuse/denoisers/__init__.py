from .gaussian import GaussianVideoModel
from .toy import ToyDenoiser, collect_activations
from .data import BlobDataset, BlobVideo, make_blob_dataset
from .train import train_toy_denoiser
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "GaussianVideoModel",
    "ToyDenoiser",
    "collect_activations",
    "BlobDataset",
    "BlobVideo",
    "make_blob_dataset",
    "train_toy_denoiser",
    "load_checkpoint",
    "save_checkpoint",
]
