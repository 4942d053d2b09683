"""AdamW with decoupled weight decay, dual gradient clipping, lr decay."""

import numpy as np

from ..errors import NumericalError


def clip_gradients(grads, clip_value=2.0, clip_norm=10.0):
    """Elementwise clamp to [-clip_value, clip_value], then rescale the
    global L2 norm down to clip_norm. Idempotent."""
    clipped = [np.clip(g, -clip_value, clip_value) for g in grads]
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in clipped))
    if total > clip_norm:
        scale = clip_norm / total
        clipped = [g * g.dtype.type(scale) for g in clipped]
    return clipped


class AdamW:
    """Decoupled-weight-decay Adam; update order is Adam step plus lr*wd*p."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.005):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads, lr):
        """Update parameter arrays in place; params is a list of ndarrays."""
        for g in grads:
            if not np.isfinite(g).all():
                raise NumericalError("non-finite gradient passed to AdamW")
        if self.m is None:
            self.m = [np.zeros_like(p, dtype=np.float64) for p in params]
            self.v = [np.zeros_like(p, dtype=np.float64) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g64 = g.astype(np.float64)
            m *= b1
            m += (1.0 - b1) * g64
            v *= b2
            v += (1.0 - b2) * g64 * g64
            update = lr * ((m / bc1) / (np.sqrt(v / bc2) + self.eps) + self.weight_decay * p)
            p -= update.astype(p.dtype)
            if not np.isfinite(p).all():
                raise NumericalError("non-finite parameter after AdamW update")


def lr_at_epoch(lr0, decay, epoch):
    """Exponential schedule: lr0 * decay^epoch (applied per epoch)."""
    return lr0 * decay**epoch
