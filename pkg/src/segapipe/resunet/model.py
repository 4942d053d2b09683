"""Reference 3-D residual U-Net.

Encoder levels halve the spatial dims with stride-2 convolutions, the
decoder doubles them with trilinear upsampling followed by convolution,
skip connections concatenate, and every level carries residual blocks
with instance normalisation and leaky-ReLU (slope 0.01). A 1x1x1 head
plus sigmoid maps back to a single probability channel, so output dims
always equal input dims.
"""

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError, FormatError, ShapeError
from .layers import (
    Conv1x1,
    Conv3d,
    InstanceNorm3d,
    LeakyReLU,
    ResBlock,
    Sequential,
    Sigmoid,
    TrilinearUp2x,
    as_tensor5,
)

CHECKPOINT_MAGIC = b"SGPM"
CHECKPOINT_VERSION = 1


@dataclass
class NetConfig:
    levels: int = 3
    base_channels: int = 8
    blocks_per_level: int = 1
    act_slope: float = 0.01

    def __post_init__(self):
        if self.levels < 1:
            raise ArgumentError("levels must be >= 1")
        if self.base_channels < 1:
            raise ArgumentError("base_channels must be >= 1")
        if self.blocks_per_level < 1:
            raise ArgumentError("blocks_per_level must be >= 1")

    def channels(self, level):
        return self.base_channels * (2**level)


class ResUNet3D:
    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence([0x5E67, seed & 0xFFFFFFFF]))
        L = cfg.levels
        s = cfg.act_slope

        def blocks(cin, cout, name):
            seq = [ResBlock(cin, cout, s, rng, dtype, name=f"{name}.b0")]
            for k in range(1, cfg.blocks_per_level):
                seq.append(ResBlock(cout, cout, s, rng, dtype, name=f"{name}.b{k}"))
            return Sequential(*seq, name=name)

        self.stem = Conv3d(1, cfg.channels(0), 1, rng, dtype, name="stem")
        self.enc = [blocks(cfg.channels(i), cfg.channels(i), f"enc{i}") for i in range(L)]
        self.down = [
            Sequential(
                Conv3d(cfg.channels(i), cfg.channels(i + 1), 2, rng, dtype, bias=False, name=f"down{i}.conv"),
                InstanceNorm3d(cfg.channels(i + 1), dtype, name=f"down{i}.norm"),
                LeakyReLU(s),
                name=f"down{i}",
            )
            for i in range(L - 1)
        ]
        self.up = [
            Sequential(
                TrilinearUp2x(),
                Conv3d(cfg.channels(i + 1), cfg.channels(i), 1, rng, dtype, bias=False, name=f"up{i}.conv"),
                InstanceNorm3d(cfg.channels(i), dtype, name=f"up{i}.norm"),
                LeakyReLU(s),
                name=f"up{i}",
            )
            for i in range(L - 1)
        ]
        self.dec = [blocks(2 * cfg.channels(i), cfg.channels(i), f"dec{i}") for i in range(L - 1)]
        self.head = Conv1x1(cfg.channels(0), 1, rng, dtype, name="head")
        self.sigmoid = Sigmoid()
        self._modules = (
            [self.stem] + self.enc + self.down + self.up + self.dec + [self.head]
        )

    # -- parameter plumbing ------------------------------------------------
    def params(self):
        """(name, array) pairs in declaration order."""
        return [p for m in self._modules for p in m.params()]

    def grads(self):
        return [g for m in self._modules for g in m.grads()]

    def zero_grads(self):
        for m in self._modules:
            m.zero_grads()

    def set_params(self, arrays):
        it = iter(arrays)
        for m in self._modules:
            m.set_params(it)

    def n_params(self):
        return sum(int(np.prod(a.shape)) for _, a in self.params())

    # -- passes --------------------------------------------------------------
    def _check_dims(self, x):
        div = 2 ** (self.cfg.levels - 1)
        for axis, n in zip("HWD", x.shape[2:]):
            if n % div:
                raise ShapeError(
                    f"axis {axis} has size {n}, not divisible by {div} (levels={self.cfg.levels})"
                )
        if x.shape[1] != 1:
            raise ShapeError(f"expected a single input channel, got {x.shape[1]}")

    def forward(self, x):
        """Probability volume with the same (B, 1, H, W, D) dims as the input."""
        x = as_tensor5(x, "input").astype(self.dtype, copy=False)
        self._check_dims(x)
        L = self.cfg.levels
        a = self.stem.forward(x)
        skips = []
        for i in range(L):
            a = self.enc[i].forward(a)
            if i < L - 1:
                skips.append(a)
                a = self.down[i].forward(a)
        self._cat_channels = []
        for i in reversed(range(L - 1)):
            a = self.up[i].forward(a)
            a = np.concatenate([a, skips[i]], axis=1)
            a = self.dec[i].forward(a)
        z = self.head.forward(a)
        return self.sigmoid.forward(z)

    def backward(self, gprob):
        """Accumulate parameter gradients for d(loss)/d(probabilities)."""
        L = self.cfg.levels
        g = self.sigmoid.backward(gprob.astype(self.dtype, copy=False))
        g = self.head.backward(g)
        skip_grads = [None] * (L - 1)
        for i in range(L - 1):
            g = self.dec[i].backward(g)
            c = self.cfg.channels(i)
            g_up, skip_grads[i] = g[:, :c], g[:, c:]
            g = self.up[i].backward(np.ascontiguousarray(g_up))
        for i in range(L - 1, 0, -1):
            g = self.enc[i].backward(g)
            g = self.down[i - 1].backward(g)
            g = g + skip_grads[i - 1]
        g = self.enc[0].backward(g)
        return self.stem.backward(g)


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, net config, tensors in declaration order

def save_checkpoint(model, path):
    """Versioned little-endian binary: SGPM | version | cfg | float32 tensors."""
    cfg = model.cfg
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IIII", CHECKPOINT_VERSION, cfg.levels, cfg.base_channels, cfg.blocks_per_level))
        tensors = [a for _, a in model.params()]
        f.write(struct.pack("<I", len(tensors)))
        for a in tensors:
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float32):
    """Rebuild the model a checkpoint was saved from; rejects foreign files."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a segapipe checkpoint (magic {magic!r})")
        version, levels, base, blocks = struct.unpack("<IIII", f.read(16))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: checkpoint version {version} not supported")
        cfg = NetConfig(levels=levels, base_channels=base, blocks_per_level=blocks)
        model = ResUNet3D(cfg, seed=0, dtype=dtype)
        (n_tensors,) = struct.unpack("<I", f.read(4))
        expected = len(model.params())
        if n_tensors != expected:
            raise FormatError(f"{path}: {n_tensors} tensors, architecture needs {expected}")
        arrays = []
        for _ in range(n_tensors):
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            buf = f.read(4 * count)
            if len(buf) != 4 * count:
                raise FormatError(f"{path}: truncated tensor payload")
            arrays.append(np.frombuffer(buf, dtype="<f4").reshape(shape).copy())
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after last tensor")
    model.set_params(arrays)
    return model
