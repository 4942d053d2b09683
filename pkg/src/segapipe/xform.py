"""Geometric resampling, intensity preprocessing and backward warping.

All warps are pull-style in physical space: output(x) = input(T(x)),
with trilinear sampling for images and nearest for masks so labels stay
binary. Samples falling outside the source grid read a constant border
value (the clip-window floor for HU images, 0 otherwise).
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ArgumentError
from .volgrid import HU, NORMALIZED01, Geometry3, ImageVolume, LabelVolume

CLIP_LO_DEFAULT = -700.0
CLIP_HI_DEFAULT = 2300.0

_SAMPLE_CHUNK = 2_000_000  # points per kernel call, caps coordinate-buffer memory


@dataclass
class AffineTransform3:
    """Physical-space affine map x -> matrix @ x + translation (mm)."""

    matrix: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.det(self.matrix)) <= 1e-12:
            raise ArgumentError("affine matrix is singular")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def inverse(self):
        inv = np.linalg.inv(self.matrix)
        return AffineTransform3(inv, -inv @ self.translation)

    def apply(self, pts):
        return (self.matrix @ np.asarray(pts, dtype=np.float64).T).T + self.translation


@dataclass
class DisplacementField:
    """Per-voxel displacement vectors (mm) on a volume grid, xyz components last."""

    geom: Geometry3
    vectors: np.ndarray  # (nz, ny, nx, 3)

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != self.geom.shape_zyx + (3,):
            raise ArgumentError(
                f"vector field shape {self.vectors.shape} does not match grid {self.geom.shape_zyx}"
            )

    def max_norm(self):
        return float(np.sqrt((self.vectors**2).sum(axis=-1)).max())


def rotation_matrix(rx, ry, rz):
    """Rotation about x, then y, then z, angles in radians."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def _border_value(vol, cval):
    if cval is not None:
        return float(cval)
    if isinstance(vol, LabelVolume):
        return 0.0
    if vol.intensity_domain == HU:
        return CLIP_LO_DEFAULT
    return 0.0


def _sample(arr, coords_zyx, mode, cval):
    """Chunked sampling of arr (Z, Y, X) at (N, 3) zyx coordinates."""
    fn = _kernels.sample_trilinear if mode == "trilinear" else _kernels.sample_nearest
    n = len(coords_zyx)
    out = np.empty(n, dtype=np.float64)
    arr64 = np.ascontiguousarray(arr, dtype=np.float64)
    for start in range(0, n, _SAMPLE_CHUNK):
        stop = min(start + _SAMPLE_CHUNK, n)
        out[start:stop] = fn(arr64, np.ascontiguousarray(coords_zyx[start:stop]), cval)
    return out


def _check_mode(vol, mode):
    if mode not in ("trilinear", "nearest"):
        raise ArgumentError(f"unknown interpolation mode {mode!r}")
    if isinstance(vol, LabelVolume) and mode != "nearest":
        raise ArgumentError("label volumes must be resampled with nearest mode")


def _rebuild(vol, geom, values, shape_zyx):
    if isinstance(vol, LabelVolume):
        return LabelVolume(geom=geom, voxels=values.reshape(shape_zyx).astype(np.uint8))
    vox = values.reshape(shape_zyx).astype(np.float32)
    if vol.intensity_domain != HU:
        vox = np.clip(vox, 0.0, 1.0)
    return ImageVolume(geom=geom, voxels=vox, intensity_domain=vol.intensity_domain)


def _clamp_coords(coords, shape_zyx):
    hi = np.array(shape_zyx, dtype=np.float64) - 1.0
    return np.clip(coords, 0.0, hi)


def resample(vol, target_dims, mode, cval=None, border="clamp"):
    """Resample to new voxel counts covering the same physical extent.

    Spacing rescales by the dims ratio and the origin shifts by half the
    voxel-size change so voxel boxes tile the identical physical region.
    With that alignment every output center lands inside the input's
    voxel boxes, so sampling replicates the edge across the half-voxel
    skirt (border="clamp"); border="constant" is available for callers
    that want cval fill instead.
    """
    target_dims = tuple(int(d) for d in target_dims)
    if len(target_dims) != 3 or any(d < 1 for d in target_dims):
        raise ArgumentError(f"target dims must be three positive counts, got {target_dims}")
    _check_mode(vol, mode)
    g = vol.geom
    sp_new = tuple(g.spacing[i] * g.dims[i] / target_dims[i] for i in range(3))
    shift = g.direction @ ((np.array(sp_new) - np.array(g.spacing)) / 2.0)
    geom_out = Geometry3(
        dims=target_dims,
        spacing=sp_new,
        origin=tuple(np.array(g.origin) + shift),
        direction=g.direction.copy(),
    )
    # per-axis map: input_index = (output_index + 0.5) * sp_new / sp - 0.5
    ratios = [sp_new[i] / g.spacing[i] for i in range(3)]
    axes = [
        (np.arange(target_dims[i], dtype=np.float64) + 0.5) * ratios[i] - 0.5 for i in range(3)
    ]
    nzyx = (target_dims[2], target_dims[1], target_dims[0])
    coords = np.empty(nzyx + (3,), dtype=np.float64)
    coords[..., 0] = axes[2][:, None, None]
    coords[..., 1] = axes[1][None, :, None]
    coords[..., 2] = axes[0][None, None, :]
    coords = coords.reshape(-1, 3)
    if border == "clamp":
        coords = _clamp_coords(coords, vol.voxels.shape)
    values = _sample(vol.voxels, coords, mode, _border_value(vol, cval))
    return _rebuild(vol, geom_out, values, nzyx)


def clip_normalize(vol, lo=CLIP_LO_DEFAULT, hi=CLIP_HI_DEFAULT):
    """Clamp intensities to [lo, hi] and rescale to [0, 1]."""
    if hi <= lo:
        raise ArgumentError(f"clip window is empty: [{lo}, {hi}]")
    v = (np.clip(vol.voxels.astype(np.float64), lo, hi) - lo) / (hi - lo)
    return ImageVolume(geom=vol.geom, voxels=v.astype(np.float32), intensity_domain=NORMALIZED01)


def warp(vol, transform, mode, cval=None, border="constant"):
    """Backward warp: output voxel at physical x takes the input value at T(x)."""
    _check_mode(vol, mode)
    g = vol.geom
    nzyx = g.shape_zyx
    zz, yy, xx = np.meshgrid(
        np.arange(nzyx[0], dtype=np.float64),
        np.arange(nzyx[1], dtype=np.float64),
        np.arange(nzyx[2], dtype=np.float64),
        indexing="ij",
    )
    idx_xyz = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    mm = g.voxel_to_mm(idx_xyz)
    if isinstance(transform, AffineTransform3):
        mm_src = transform.apply(mm)
    elif isinstance(transform, DisplacementField):
        if not transform.geom.same_grid(g):
            raise ArgumentError("displacement field grid does not match the volume grid")
        mm_src = mm + transform.vectors.reshape(-1, 3)
    else:
        raise ArgumentError(f"unsupported transform type {type(transform).__name__}")
    idx_src = g.mm_to_voxel(mm_src)
    coords = np.ascontiguousarray(idx_src[:, ::-1])  # xyz -> zyx
    if border == "clamp":
        coords = _clamp_coords(coords, vol.voxels.shape)
    values = _sample(vol.voxels, coords, mode, _border_value(vol, cval))
    return _rebuild(vol, g, values, nzyx)
