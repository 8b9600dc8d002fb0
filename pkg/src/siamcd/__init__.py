"""Siamese fully convolutional change detection with Gaussian-attention
preprocessing and attention-gated decoders, on a small numpy autograd core."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetSplit, SamplePair, extract_patches, load_dataset, resize, synth_generate
from .engine import TrainConfig, infer, train
from .glimpse import GlimpseParams, apply_glimpse, gaussian_mask, preprocess_pair
from .metrics import ConfusionCounts, binarize, confusion, scores
from .model import ModelConfig, build, count_params, encode, forward
from .objective import LossConfig, balance_beta, total_loss, weighted_cross_entropy, weighted_dice
from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "ConfusionCounts", "DatasetSplit", "GlimpseParams", "LossConfig", "ModelConfig", "SamplePair", "Tensor",
    "TrainConfig", "apply_glimpse", "backward", "balance_beta", "binarize", "build", "confusion", "count_params",
    "encode", "extract_patches", "forward", "gaussian_mask", "infer", "load_checkpoint", "load_dataset",
    "preprocess_pair", "resize", "save_checkpoint", "scores", "synth_generate", "total_loss", "train",
    "weighted_cross_entropy", "weighted_dice",
]
