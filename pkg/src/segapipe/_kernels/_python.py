"""Pure NumPy/SciPy implementations of the hot voxel kernels.

This is the fallback lane used when the compiled extension is not built
(or when SEGAPIPE_BACKEND=python). Signatures and results match
``segapipe._kernels._compiled``; the compiled lane is only faster.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage


def conv3d_forward(x, w, stride=1):
    """3x3x3 convolution with zero padding 1.

    x: (B, C, Z, Y, X), w: (O, C, 3, 3, 3), stride 1 or 2.
    Returns (B, O, Z/stride, Y/stride, X/stride).
    """
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3, 3), axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride]
    y = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    return np.ascontiguousarray(np.moveaxis(y, -1, 1))


def conv3d_grad_input(gy, w, in_spatial, stride=1):
    """Gradient of conv3d_forward w.r.t. its input.

    Implemented as correlation of the zero-stuffed output gradient with
    the spatially flipped, channel-transposed weights.
    """
    B = gy.shape[0]
    Z, Y, X = in_spatial
    gz = np.zeros((B, gy.shape[1], Z, Y, X), dtype=gy.dtype)
    gz[:, :, ::stride, ::stride, ::stride] = gy
    gp = np.pad(gz, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    win = sliding_window_view(gp, (3, 3, 3), axis=(2, 3, 4))
    wf = w[:, :, ::-1, ::-1, ::-1]
    gx = np.tensordot(win, wf, axes=([1, 5, 6, 7], [0, 2, 3, 4]))
    return np.ascontiguousarray(np.moveaxis(gx, -1, 1))


def conv3d_grad_weight(gy, x, stride=1):
    """Gradient of conv3d_forward w.r.t. the weights. Returns (O, C, 3, 3, 3)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3, 3), axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride]
    return np.tensordot(gy, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))


def sample_trilinear(vol, coords, cval=0.0):
    """Trilinear sampling of vol (Z, Y, X) at continuous voxel coords (N, 3) zyx.

    Corners outside the grid contribute the constant cval.
    """
    shape = vol.shape
    lo = np.floor(coords)
    frac = coords - lo
    lo = lo.astype(np.int64)
    out = np.zeros(len(coords), dtype=np.float64)
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                idx = lo + (dz, dy, dx)
                valid = np.all((idx >= 0) & (idx < shape), axis=1)
                v = np.full(len(coords), cval, dtype=np.float64)
                ic = np.clip(idx, 0, np.array(shape) - 1)
                v[valid] = vol[ic[valid, 0], ic[valid, 1], ic[valid, 2]]
                w = (
                    (frac[:, 0] if dz else 1.0 - frac[:, 0])
                    * (frac[:, 1] if dy else 1.0 - frac[:, 1])
                    * (frac[:, 2] if dx else 1.0 - frac[:, 2])
                )
                out += w * v
    return out


def sample_nearest(vol, coords, cval=0.0):
    """Nearest-neighbour sampling; ties round toward +infinity."""
    idx = np.floor(coords + 0.5).astype(np.int64)
    valid = np.all((idx >= 0) & (idx < vol.shape), axis=1)
    ic = np.clip(idx, 0, np.array(vol.shape) - 1)
    out = np.full(len(coords), cval, dtype=np.float64)
    out[valid] = vol[ic[valid, 0], ic[valid, 1], ic[valid, 2]]
    return out


def edt(features, spacing):
    """Exact Euclidean distance (mm) from every voxel to the nearest True voxel.

    features: bool (Z, Y, X); spacing: (sz, sy, sx). All-False input
    yields +inf everywhere.
    """
    if not features.any():
        return np.full(features.shape, np.inf, dtype=np.float64)
    return ndimage.distance_transform_edt(~features, sampling=spacing)


def label_components(mask, connectivity=26):
    """Label connected components of a binary volume.

    Returns (labels int32 with 0 = background, n_components). Components
    are numbered in scan order of their first voxel.
    """
    if connectivity == 26:
        structure = np.ones((3, 3, 3), dtype=bool)
    else:
        structure = ndimage.generate_binary_structure(3, 1)
    labels, n = ndimage.label(mask, structure=structure)
    return labels.astype(np.int32), int(n)


def mc_cell_triangles(padded, tri_counts, tri_offsets, tri_edges, edge_axis, edge_base):
    """Sweep marching-cubes cells of a padded binary volume.

    Emits one int64 key triple per triangle; a key identifies the lattice
    edge carrying the vertex as axis * nvox + linear index of the edge's
    lower voxel. Table arrays come from meshkit.mc_tables().
    """
    m = padded.astype(np.uint8)
    case = np.zeros((m.shape[0] - 1, m.shape[1] - 1, m.shape[2] - 1), dtype=np.uint16)
    for c in range(8):
        cx, cy, cz = c & 1, (c >> 1) & 1, (c >> 2) & 1
        sl = m[cz : cz + case.shape[0], cy : cy + case.shape[1], cx : cx + case.shape[2]]
        case |= sl.astype(np.uint16) << c
    counts = tri_counts[case]
    cz, cy, cx = np.nonzero(counts)
    if len(cz) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    ccase = case[cz, cy, cx]
    ccnt = counts[cz, cy, cx].astype(np.int64)
    total = int(ccnt.sum())
    rep = np.repeat(np.arange(len(cz)), 3 * ccnt)
    starts = np.concatenate(([0], np.cumsum(3 * ccnt)[:-1]))
    pos = np.arange(3 * total) - starts[rep]
    local = tri_edges[tri_offsets[ccase][rep] + pos]
    Zp, Yp, Xp = m.shape
    nvox = Zp * Yp * Xp
    ex = cx[rep] + edge_base[local, 0]
    ey = cy[rep] + edge_base[local, 1]
    ez = cz[rep] + edge_base[local, 2]
    keys = edge_axis[local].astype(np.int64) * nvox + (ez * Yp + ey) * Xp + ex
    return keys.reshape(-1, 3)
