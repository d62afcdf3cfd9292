"""Latent upsampling network, its training/inference loops and checkpoints."""

from .checkpoint import CheckpointError, checkpoint_meta, load_checkpoint, read_checkpoint, save_checkpoint
from .config import GvrConfig
from .data import TrainSample, downsample_frames, make_dataset, make_pair, psnr, synthetic_clip, upsample_frames
from .network import Condition, GvrModel, sinusoidal
from .optim import AdamW, SGDMomentum
from .training import (
    TrainConfig,
    TrainResult,
    collect_trace,
    condition_digest,
    draw_text_slot,
    extend_temporal,
    infer,
    sample_loss,
    train,
)

__all__ = [
    "AdamW",
    "CheckpointError",
    "checkpoint_meta",
    "Condition",
    "GvrConfig",
    "GvrModel",
    "SGDMomentum",
    "TrainConfig",
    "TrainResult",
    "TrainSample",
    "collect_trace",
    "condition_digest",
    "downsample_frames",
    "draw_text_slot",
    "extend_temporal",
    "infer",
    "load_checkpoint",
    "make_dataset",
    "make_pair",
    "psnr",
    "read_checkpoint",
    "sample_loss",
    "save_checkpoint",
    "sinusoidal",
    "synthetic_clip",
    "train",
    "upsample_frames",
]
