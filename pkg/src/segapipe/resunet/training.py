"""Training loop: gradient accumulation, clipped AdamW, early stopping, k-fold.

Every random choice flows from the caller's seed through SeedSequence
derivations, so identical (dataset, configs, seed) reproduce identical
parameter trajectories and logs bit for bit.
"""

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ArgumentError, MetricUndefinedError
from ..metrics import dice, hd95
from ..postproc import threshold
from ..volgrid import PROBABILITY, ImageVolume
from .losses import LOSS_VARIANTS, loss_and_grad
from .model import NetConfig, ResUNet3D
from .optim import AdamW, clip_gradients, lr_at_epoch


@dataclass
class TrainConfig:
    lr0: float = 0.001
    decay: float = 0.999
    batch: int = 16  # accumulated micro-batches per optimiser step
    iterations_per_epoch: int = 64
    weight_decay: float = 0.005
    clip_value: float = 2.0
    clip_norm: float = 10.0
    loss_variant: str = "dice_focal"
    w_dice: float = 1.0
    w_focal: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 1.0
    dice_eps: float = 1e-5
    epochs: int = 100
    patience: int = 10
    target_val_dsc: float | None = None  # stop early once validation Dice reaches this

    def __post_init__(self):
        if self.lr0 <= 0 or not 0 < self.decay <= 1:
            raise ArgumentError("lr0 must be positive and decay in (0, 1]")
        if self.batch < 1 or self.iterations_per_epoch < 1 or self.epochs < 1:
            raise ArgumentError("batch, iterations_per_epoch and epochs must be >= 1")
        if self.patience < 0:
            raise ArgumentError("patience must be >= 0")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ArgumentError(f"unknown loss variant {self.loss_variant!r}")


def _to_tensor(vol):
    return vol.voxels.astype(np.float32)[None, None]


def _predict_volume(model, img):
    prob = model.forward(_to_tensor(img))[0, 0]
    return ImageVolume(geom=img.geom, voxels=np.clip(prob, 0.0, 1.0),
                       intensity_domain=PROBABILITY)


def evaluate(model, dataset, hd95_mode="pooled"):
    """Mean Dice and HD95 of thresholded predictions over (img, mask) pairs."""
    dscs, hds = [], []
    for img, mask in dataset:
        pred = threshold(_predict_volume(model, img), 0.5)
        dscs.append(dice(pred, mask))
        try:
            hds.append(hd95(pred, mask, mode=hd95_mode))
        except MetricUndefinedError:
            hds.append(np.inf)
    return float(np.mean(dscs)), float(np.mean(hds))


def train(dataset, cfg, net_cfg=None, seed=0, val_dataset=None, augment_spec=None):
    """Train a ResUNet on (ImageVolume, LabelVolume) pairs.

    Each epoch runs cfg.iterations_per_epoch optimiser steps, each over
    cfg.batch accumulated micro-batches of one sample. Early-stops when
    validation Dice has not improved for cfg.patience epochs. Returns
    (model, history, log_lines); history rows are dicts, log lines a
    deterministic tab-separated rendering.
    """
    if not dataset:
        raise ArgumentError("training dataset is empty")
    net_cfg = net_cfg or NetConfig()
    val = val_dataset if val_dataset is not None else dataset
    model = ResUNet3D(net_cfg, seed=seed)
    opt = AdamW(weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xD5]))
    order = []
    history = []
    log_lines = []
    best = -np.inf
    best_epoch = 0
    cursor = 0

    if augment_spec is not None:
        from ..augment import augment_pair  # local import avoids a cycle at module load

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg.lr0, cfg.decay, epoch)
        losses = []
        for it in range(cfg.iterations_per_epoch):
            model.zero_grads()
            acc_loss = 0.0
            for micro in range(cfg.batch):
                if cursor % len(dataset) == 0:
                    order = list(order_rng.permutation(len(dataset)))
                img, mask = dataset[order[cursor % len(dataset)]]
                cursor += 1
                if augment_spec is not None:
                    aug_seed = int(
                        np.random.SeedSequence([seed & 0xFFFFFFFF, epoch, it, micro]).generate_state(1)[0]
                    )
                    img, mask = augment_pair(img, mask, augment_spec, aug_seed)
                x = _to_tensor(img)
                t = mask.voxels.astype(np.float32)[None, None]
                prob = model.forward(x)
                loss, gprob = loss_and_grad(
                    prob, t, cfg.loss_variant, cfg.w_dice, cfg.w_focal,
                    cfg.focal_gamma, cfg.focal_alpha, cfg.dice_eps,
                )
                model.backward(gprob.astype(np.float32) / cfg.batch)
                acc_loss += loss / cfg.batch
            grads = clip_gradients(model.grads(), cfg.clip_value, cfg.clip_norm)
            opt.step([a for _, a in model.params()], grads, lr)
            losses.append(acc_loss)
        val_dsc, val_hd = evaluate(model, val)
        mean_loss = float(np.mean(losses))
        history.append({"epoch": epoch, "lr": lr, "loss": mean_loss,
                        "val_dsc": val_dsc, "val_hd95": val_hd})
        log_lines.append(f"epoch={epoch}\tlr={lr:.8f}\tloss={mean_loss:.6f}"
                         f"\tval_dsc={val_dsc:.6f}\tval_hd95={val_hd:.4f}")
        if val_dsc > best:
            best = val_dsc
            best_epoch = epoch
        if cfg.target_val_dsc is not None and val_dsc >= cfg.target_val_dsc:
            break
        if epoch - best_epoch >= cfg.patience:
            break
    return model, history, log_lines


def kfold(dataset, k, cfg, net_cfg=None, seed=0, augment_spec=None):
    """Deterministic k-fold cross-validation.

    Returns (per-fold list of {"fold", "dsc", "hd95"}, mean dict). Folds
    partition a seeded permutation round-robin, so they are disjoint and
    cover every case.
    """
    if k < 2:
        raise ArgumentError("k must be >= 2")
    if k > len(dataset):
        raise ArgumentError(f"k={k} exceeds dataset size {len(dataset)}")
    perm = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xF0])).permutation(len(dataset))
    folds = [sorted(int(i) for i in perm[f::k]) for f in range(k)]
    rows = []
    for f, hold in enumerate(folds):
        train_set = [dataset[i] for i in range(len(dataset)) if i not in hold]
        val_set = [dataset[i] for i in hold]
        model, history, _ = train(train_set, cfg, net_cfg, seed=seed + f,
                                  val_dataset=val_set, augment_spec=augment_spec)
        dsc, hd = evaluate(model, val_set)
        rows.append({"fold": f, "dsc": dsc, "hd95": hd})
    mean = {
        "dsc": float(np.mean([r["dsc"] for r in rows])),
        "hd95": float(np.mean([r["hd95"] for r in rows])),
    }
    return rows, mean
