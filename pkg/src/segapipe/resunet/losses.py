"""Objective functions over probability predictions and binary targets.

All losses take (B, C, H, W, D) arrays with pred in [0, 1]. The training
objective is the equally weighted Soft Dice + Focal combination; the
ablation selector also exposes dice-only, dice + cross-entropy and
focal-only variants.
"""

import numpy as np

from ..errors import ArgumentError, ShapeError

_CLAMP = 1e-7

LOSS_VARIANTS = ("dice_focal", "dice", "dice_ce", "focal")


def _check(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")


def soft_dice_loss(pred, target, eps=1e-5):
    """1 - (2 sum(p t) + eps) / (sum p + sum t + eps), per item, then averaged."""
    return _soft_dice(pred, target, eps)[0]


def _soft_dice(pred, target, eps):
    _check(pred, target)
    b = pred.shape[0]
    p = pred.reshape(b, -1).astype(np.float64)
    t = target.reshape(b, -1).astype(np.float64)
    inter = (p * t).sum(axis=1)
    denom = p.sum(axis=1) + t.sum(axis=1) + eps
    loss = float(np.mean(1.0 - (2.0 * inter + eps) / denom))

    def grad():
        g = -(2.0 * t * denom[:, None] - (2.0 * inter + eps)[:, None]) / denom[:, None] ** 2 / b
        return g.reshape(pred.shape)

    return loss, grad


def focal_loss(pred, target, gamma=2.0, alpha=1.0):
    """Mean of -alpha (1 - p_t)^gamma log(p_t); p_t is the probability of the true class."""
    return _focal(pred, target, gamma, alpha)[0]


def _focal(pred, target, gamma, alpha):
    _check(pred, target)
    p = pred.astype(np.float64)
    t = target.astype(np.float64)
    inside = (p > _CLAMP) & (p < 1.0 - _CLAMP)
    pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    pt = t * pc + (1.0 - t) * (1.0 - pc)
    n = p.size
    loss = float(np.mean(alpha * (1.0 - pt) ** gamma * (-np.log(pt))))

    def grad():
        dpt = alpha * (gamma * (1.0 - pt) ** (gamma - 1.0) * np.log(pt) - (1.0 - pt) ** gamma / pt) / n
        g = np.where(t > 0.5, dpt, -dpt)
        return (g * inside).reshape(pred.shape)

    return loss, grad


def bce_loss(pred, target):
    """Mean binary cross-entropy with the same clamping as the focal loss."""
    return _bce(pred, target)[0]


def _bce(pred, target):
    _check(pred, target)
    p = pred.astype(np.float64)
    t = target.astype(np.float64)
    inside = (p > _CLAMP) & (p < 1.0 - _CLAMP)
    pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    n = p.size
    loss = float(np.mean(-(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))))

    def grad():
        g = (-t / pc + (1.0 - t) / (1.0 - pc)) / n
        return (g * inside).reshape(pred.shape)

    return loss, grad


def combined_loss(pred, target, variant="dice_focal", w_dice=1.0, w_focal=1.0,
                  gamma=2.0, alpha=1.0, eps=1e-5):
    """Loss value for the selected ablation variant."""
    return loss_and_grad(pred, target, variant, w_dice, w_focal, gamma, alpha, eps)[0]


def loss_and_grad(pred, target, variant="dice_focal", w_dice=1.0, w_focal=1.0,
                  gamma=2.0, alpha=1.0, eps=1e-5):
    """(loss, d loss / d pred) for the selected variant."""
    if variant not in LOSS_VARIANTS:
        raise ArgumentError(f"unknown loss variant {variant!r}; pick one of {LOSS_VARIANTS}")
    if variant == "dice":
        l, g = _soft_dice(pred, target, eps)
        return l, g()
    if variant == "focal":
        l, g = _focal(pred, target, gamma, alpha)
        return l, g()
    ld, gd = _soft_dice(pred, target, eps)
    if variant == "dice_ce":
        lx, gx = _bce(pred, target)
        return ld + lx, gd() + gx()
    lf, gf = _focal(pred, target, gamma, alpha)
    return w_dice * ld + w_focal * lf, w_dice * gd() + w_focal * gf()
