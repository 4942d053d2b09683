"""Prediction postprocessing: thresholding, component filtering, dilation.

Per the inference contract, component filtering feeds the meshing path
only; the saved segmentation mask is the thresholded, unfiltered
prediction.
"""

import numpy as np

from . import _kernels
from .errors import ArgumentError
from .volgrid import PROBABILITY, LabelVolume


def threshold(prob, t=0.5):
    """Binarise a probability volume; voxels >= t become foreground."""
    if not 0.0 <= t <= 1.0:
        raise ArgumentError(f"threshold must lie in [0, 1], got {t}")
    if prob.intensity_domain != PROBABILITY:
        raise ArgumentError(f"threshold expects a probability volume, got {prob.intensity_domain}")
    return LabelVolume(geom=prob.geom, voxels=(prob.voxels >= t).astype(np.uint8))


def largest_component(mask, connectivity=26):
    """Keep only the largest connected component of the foreground.

    Ties are broken toward the component containing the smallest
    scan-order voxel. An empty mask passes through unchanged.
    """
    if connectivity not in (6, 26):
        raise ArgumentError(f"connectivity must be 6 or 26, got {connectivity}")
    labels, n = _kernels.label_components(mask.voxels, connectivity)
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    sizes[0] = 0
    best = sizes.max()
    candidates = np.nonzero(sizes == best)[0]
    if len(candidates) == 1:
        keep = candidates[0]
    else:
        flat = labels.ravel()
        first = np.full(n + 1, flat.size, dtype=np.int64)
        idx = np.nonzero(np.isin(flat, candidates))[0]
        np.minimum.at(first, flat[idx], idx)
        keep = candidates[np.argmin(first[candidates])]
    return LabelVolume(geom=mask.geom, voxels=(labels == keep).astype(np.uint8))


def _shift_or(dst, src, axis):
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[axis] = slice(1, None)
    hi[axis] = slice(None, -1)
    dst[tuple(hi)] |= src[tuple(lo)]
    dst[tuple(lo)] |= src[tuple(hi)]


def dilate(mask, radius_voxels=1, structuring=6):
    """Iterated binary dilation; radius 0 is the identity.

    structuring 6 grows by the face cross, 26 by the full 3x3x3 box
    (applied as separable line dilations).
    """
    if radius_voxels < 0:
        raise ArgumentError("dilation radius must be >= 0")
    if structuring not in (6, 26):
        raise ArgumentError(f"structuring element must be 6 or 26, got {structuring}")
    v = mask.voxels.astype(bool)
    for _ in range(int(radius_voxels)):
        if structuring == 6:
            out = v.copy()
            for axis in range(3):
                _shift_or(out, v, axis)
        else:
            out = v
            for axis in range(3):
                nxt = out.copy()
                _shift_or(nxt, out, axis)
                out = nxt
        v = out
    return LabelVolume(geom=mask.geom, voxels=v.astype(np.uint8))
