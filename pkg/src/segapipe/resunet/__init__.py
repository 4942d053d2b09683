"""Trainable 3-D residual U-Net with hand-written forward/backward passes.

Tensors are plain C-contiguous numpy arrays of dims (B, C, H, W, D),
last axis fastest. Training runs in float32; float64 is supported for
finite-difference verification.
"""

from .losses import LOSS_VARIANTS, bce_loss, combined_loss, focal_loss, loss_and_grad, soft_dice_loss
from .model import NetConfig, ResUNet3D, load_checkpoint, save_checkpoint
from .optim import AdamW, clip_gradients, lr_at_epoch
from .training import TrainConfig, evaluate, kfold, train

__all__ = [
    "LOSS_VARIANTS",
    "NetConfig",
    "ResUNet3D",
    "TrainConfig",
    "AdamW",
    "bce_loss",
    "clip_gradients",
    "combined_loss",
    "evaluate",
    "focal_loss",
    "kfold",
    "load_checkpoint",
    "loss_and_grad",
    "lr_at_epoch",
    "save_checkpoint",
    "soft_dice_loss",
    "train",
]
