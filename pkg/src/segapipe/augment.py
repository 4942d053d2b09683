"""Online stochastic augmentation and offline elastic dataset expansion.

augment_pair draws a seeded permutation of seven transforms (affine,
contrast, noise, flip, motion, anisotropy, blur); each fires
independently with the configured probability. Geometric transforms hit
image and mask identically (trilinear vs nearest); intensity-style
transforms touch the image only. Identical inputs, spec and seed give
bit-identical outputs.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ArgumentError
from .volgrid import Geometry3, ImageVolume, LabelVolume, write_mhd
from .xform import AffineTransform3, DisplacementField, rotation_matrix, warp

TRANSFORM_ORDER = ("affine", "contrast", "noise", "flip", "motion", "anisotropy", "blur")


@dataclass
class AugmentationSpec:
    rotation_deg: float = 15.0
    scale_range: tuple = (0.9, 1.1)
    translation_mm: float = 10.0
    gamma_range: tuple = (0.7, 1.5)
    noise_std_range: tuple = (0.0, 0.03)
    flip_axes: tuple = ("x", "y", "z")
    motion_ghosts: tuple = (2, 4)
    motion_magnitude_mm: float = 2.0
    anisotropy_factor_range: tuple = (1.5, 4.0)
    anisotropy_axes: tuple = ("x", "y", "z")
    blur_sigma_mm: tuple = (0.0, 2.0)
    apply_probability: float = 0.5
    enabled_transforms: tuple = TRANSFORM_ORDER  # ablation rows disable subsets

    def __post_init__(self):
        for name in ("scale_range", "gamma_range", "noise_std_range",
                     "anisotropy_factor_range", "blur_sigma_mm"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ArgumentError(f"{name} has low > high: ({lo}, {hi})")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ArgumentError("apply_probability must lie in [0, 1]")
        if self.motion_ghosts[0] < 1 or self.motion_ghosts[0] > self.motion_ghosts[1]:
            raise ArgumentError(f"bad motion_ghosts range {self.motion_ghosts}")
        bad = set(self.flip_axes) - {"x", "y", "z"}
        if bad or not self.flip_axes:
            raise ArgumentError(f"flip_axes must be a nonempty subset of x, y, z, got {self.flip_axes}")


@dataclass
class ElasticSpec:
    control_grid: tuple = (8, 8, 8)
    max_displacement_mm: float = 8.0
    smoothing_sigma_mm: float = 4.0
    n_output_cases: int = 0

    def __post_init__(self):
        if self.max_displacement_mm < 0:
            raise ArgumentError("max displacement must be >= 0")
        if self.n_output_cases < 0:
            raise ArgumentError("n_output_cases must be >= 0")


_AXIS_TO_ZYX = {"x": 2, "y": 1, "z": 0}
_AXIS_TO_VEC = {"x": np.array([1.0, 0, 0]), "y": np.array([0, 1.0, 0]), "z": np.array([0, 0, 1.0])}


def _centered_affine(geom, matrix, translation):
    """Sampling map m(x) = matrix (x - c) + c + translation about the volume center."""
    c = geom.voxel_to_mm((np.array(geom.dims, dtype=np.float64) - 1) / 2.0)
    return AffineTransform3(matrix, c - matrix @ c + translation)


def _apply_affine(img, mask, spec, rng):
    angles = np.radians(rng.uniform(-spec.rotation_deg, spec.rotation_deg, 3))
    scale = rng.uniform(*spec.scale_range)
    trans = rng.uniform(-spec.translation_mm, spec.translation_mm, 3)
    m = rotation_matrix(*angles) * scale
    t = _centered_affine(img.geom, m, trans)
    out_img = warp(img, t, "trilinear", cval=0.0)
    out_mask = warp(mask, t, "nearest") if mask is not None else None
    return out_img, out_mask


def _apply_flip(img, mask, spec, rng):
    axis = spec.flip_axes[int(rng.integers(0, len(spec.flip_axes)))]
    ax = _AXIS_TO_ZYX[axis]
    sl = [slice(None)] * 3
    sl[ax] = slice(None, None, -1)
    sl = tuple(sl)
    out_img = ImageVolume(geom=img.geom, voxels=np.ascontiguousarray(img.voxels[sl]),
                          intensity_domain=img.intensity_domain)
    out_mask = None
    if mask is not None:
        out_mask = LabelVolume(geom=mask.geom, voxels=np.ascontiguousarray(mask.voxels[sl]))
    return out_img, out_mask


def random_motion(img, n_ghosts, magnitude_mm, seed):
    """Ghosting artifact: convex combination of rigidly shifted copies.

    One motion axis is drawn per call; ghosts translate along it (up to
    the magnitude) and rotate about it (up to 3 degrees, scaled away for
    tiny magnitudes so magnitude 0 is the identity).
    """
    if n_ghosts < 1:
        raise ArgumentError("n_ghosts must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([0x307, seed & 0xFFFFFFFF]))
    axis = ("x", "y", "z")[int(rng.integers(0, 3))]
    vol_sum = img.voxels.astype(np.float64)
    weights = rng.uniform(0.4, 1.0, n_ghosts + 1)
    weights /= weights.sum()
    acc = weights[0] * vol_sum
    rot_cap = np.radians(3.0) * min(1.0, magnitude_mm / 2.0)
    for k in range(n_ghosts):
        shift = rng.uniform(-magnitude_mm, magnitude_mm)
        angle = rng.uniform(-rot_cap, rot_cap)
        rot = {"x": (angle, 0, 0), "y": (0, angle, 0), "z": (0, 0, angle)}[axis]
        t = _centered_affine(img.geom, rotation_matrix(*rot), shift * _AXIS_TO_VEC[axis])
        ghost = warp(img, t, "trilinear", border="clamp")
        acc = acc + weights[k + 1] * ghost.voxels.astype(np.float64)
    out = np.clip(acc, 0.0, 1.0).astype(np.float32)
    return ImageVolume(geom=img.geom, voxels=out, intensity_domain=img.intensity_domain)


def random_anisotropy(img, axis, factor, seed=0):
    """Thick-slice simulation: downsample along one axis, upsample back."""
    if factor <= 1.0:
        raise ArgumentError("anisotropy factor must be > 1")
    from .xform import resample

    dims = list(img.geom.dims)
    ax = {"x": 0, "y": 1, "z": 2}[axis]
    low = max(1, int(round(dims[ax] / factor)))
    down_dims = list(dims)
    down_dims[ax] = low
    down = resample(img, down_dims, "trilinear")
    up = resample(down, dims, "trilinear")
    return ImageVolume(geom=img.geom, voxels=up.voxels, intensity_domain=img.intensity_domain)


def _apply_blur(img, sigma_mm):
    sigmas = [sigma_mm / img.geom.spacing[2 - ax] for ax in range(3)]  # zyx order
    out = ndimage.gaussian_filter(img.voxels.astype(np.float32), sigma=sigmas, mode="nearest")
    return ImageVolume(geom=img.geom, voxels=np.clip(out, 0.0, 1.0),
                       intensity_domain=img.intensity_domain)


def augment_pair(img, mask, spec, seed):
    """Apply the seven transforms in seeded random order, each with p = apply_probability."""
    if not img.geom.same_grid(mask.geom):
        raise ArgumentError("image and mask grids differ")
    rng = np.random.default_rng(np.random.SeedSequence([0xA06, seed & 0xFFFFFFFF]))
    order = rng.permutation(len(TRANSFORM_ORDER))
    for idx in order:
        name = TRANSFORM_ORDER[idx]
        if rng.random() >= spec.apply_probability:
            continue
        if name not in spec.enabled_transforms:
            continue
        if name == "affine":
            img, mask = _apply_affine(img, mask, spec, rng)
        elif name == "contrast":
            gamma = rng.uniform(*spec.gamma_range)
            v = np.power(np.clip(img.voxels, 0.0, 1.0), gamma).astype(np.float32)
            img = ImageVolume(geom=img.geom, voxels=v, intensity_domain=img.intensity_domain)
        elif name == "noise":
            std = rng.uniform(*spec.noise_std_range)
            v = img.voxels + rng.normal(0.0, std, img.voxels.shape)
            img = ImageVolume(geom=img.geom, voxels=np.clip(v, 0.0, 1.0).astype(np.float32),
                              intensity_domain=img.intensity_domain)
        elif name == "flip":
            img, mask = _apply_flip(img, mask, spec, rng)
        elif name == "motion":
            n = int(rng.integers(spec.motion_ghosts[0], spec.motion_ghosts[1] + 1))
            sub = int(rng.integers(0, 2**31 - 1))
            img = random_motion(img, n, spec.motion_magnitude_mm, sub)
        elif name == "anisotropy":
            axis = spec.anisotropy_axes[int(rng.integers(0, len(spec.anisotropy_axes)))]
            factor = rng.uniform(*spec.anisotropy_factor_range)
            sub = int(rng.integers(0, 2**31 - 1))
            img = random_anisotropy(img, axis, factor, sub)
        elif name == "blur":
            sigma = rng.uniform(*spec.blur_sigma_mm)
            if sigma > 0:
                img = _apply_blur(img, sigma)
    return img, mask


# ---------------------------------------------------------------------------
# offline elastic expansion

def random_displacement_field(geom, spec, seed):
    """Smooth random field: coarse control-point noise, upsampled, Gaussian
    smoothed and rescaled so the maximum norm equals max_displacement_mm."""
    rng = np.random.default_rng(np.random.SeedSequence([0xE1A5, seed & 0xFFFFFFFF]))
    if spec.max_displacement_mm == 0.0:
        return DisplacementField(geom=geom, vectors=np.zeros(geom.shape_zyx + (3,)))
    cg = spec.control_grid
    coarse = rng.standard_normal((cg[2], cg[1], cg[0], 3))
    nz, ny, nx = geom.shape_zyx
    zoom = (nz / cg[2], ny / cg[1], nx / cg[0], 1.0)
    dense = ndimage.zoom(coarse, zoom, order=1, mode="nearest", grid_mode=True)
    sig = [spec.smoothing_sigma_mm / geom.spacing[2],
           spec.smoothing_sigma_mm / geom.spacing[1],
           spec.smoothing_sigma_mm / geom.spacing[0], 0.0]
    dense = ndimage.gaussian_filter(dense, sigma=sig, mode="nearest")
    norms = np.sqrt((dense**2).sum(axis=-1))
    peak = norms.max()
    if peak > 0:
        dense *= spec.max_displacement_mm / peak
    return DisplacementField(geom=geom, vectors=dense)


def elastic_deform_pair(img, mask, spec, seed):
    field = random_displacement_field(img.geom, spec, seed)
    out_img = warp(img, field, "trilinear", cval=0.0)
    out_mask = warp(mask, field, "nearest")
    return out_img, out_mask


def elastic_expand(dataset, spec, out_dir, master_seed=0):
    """Write n_output_cases elastic variants round-robin over the dataset.

    Returns manifest rows "source_id<TAB>seed<TAB>img_path<TAB>mask_path"
    (also written to manifest.tsv in out_dir). Per-case seeds derive from
    the master seed, so regeneration is order-independent.
    """
    if not dataset:
        raise ArgumentError("elastic_expand needs a nonempty dataset")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i in range(spec.n_output_cases):
        src = i % len(dataset)
        img, mask = dataset[src]
        seed = int(np.random.SeedSequence([master_seed & 0xFFFFFFFF, i]).generate_state(1)[0])
        out_img, out_mask = elastic_deform_pair(img, mask, spec, seed)
        img_path = os.path.join(out_dir, f"case_{i:05d}_img.mhd")
        mask_path = os.path.join(out_dir, f"case_{i:05d}_mask.mhd")
        write_mhd(out_img, img_path)
        write_mhd(out_mask, mask_path)
        rows.append(f"{src}\t{seed}\t{img_path}\t{mask_path}")
    with open(os.path.join(out_dir, "manifest.tsv"), "w", encoding="ascii") as f:
        for row in rows:
            f.write(row + "\n")
    return rows
