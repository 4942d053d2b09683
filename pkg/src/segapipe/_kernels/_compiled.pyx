# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot voxel kernels.

Same contracts as segapipe._kernels._python; loops run in C, the
convolution kernels are parallelised over disjoint output slabs so
results stay deterministic for any thread count.
"""

import os

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport INFINITY, floor, sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


cdef int _threads() except -1:
    v = os.environ.get("SEGAPIPE_THREADS", "")
    cdef int n
    if v:
        n = int(v)
        if n > 0:
            return n
    return os.cpu_count() or 1


cdef inline double _dot_rows(real* a, real* b, Py_ssize_t n, Py_ssize_t bstride) noexcept nogil:
    """Dot of a contiguous row with a (possibly strided) row.

    Eight independent partial sums break the accumulation dependence so
    the loop vectorises; the fixed summation order keeps results
    deterministic across runs.
    """
    cdef double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0
    cdef Py_ssize_t i = 0, n8 = n - (n % 8)
    if bstride == 1:
        while i < n8:
            s0 += a[i] * b[i]; s1 += a[i + 1] * b[i + 1]
            s2 += a[i + 2] * b[i + 2]; s3 += a[i + 3] * b[i + 3]
            s4 += a[i + 4] * b[i + 4]; s5 += a[i + 5] * b[i + 5]
            s6 += a[i + 6] * b[i + 6]; s7 += a[i + 7] * b[i + 7]
            i += 8
        while i < n:
            s0 += a[i] * b[i]
            i += 1
    else:
        while i < n8:
            s0 += a[i] * b[i * bstride]; s1 += a[i + 1] * b[(i + 1) * bstride]
            s2 += a[i + 2] * b[(i + 2) * bstride]; s3 += a[i + 3] * b[(i + 3) * bstride]
            s4 += a[i + 4] * b[(i + 4) * bstride]; s5 += a[i + 5] * b[(i + 5) * bstride]
            s6 += a[i + 6] * b[(i + 6) * bstride]; s7 += a[i + 7] * b[(i + 7) * bstride]
            i += 8
        while i < n:
            s0 += a[i] * b[i * bstride]
            i += 1
    return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))


def conv3d_forward(x, w, int stride=1):
    """3x3x3 convolution, zero padding 1, stride 1 or 2."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    if x.dtype == np.float32:
        return _conv3d_forward(xp.astype(np.float32, copy=False), np.ascontiguousarray(w, np.float32), stride, np.float32)
    return _conv3d_forward(xp.astype(np.float64, copy=False), np.ascontiguousarray(w, np.float64), stride, np.float64)


def _conv3d_forward(real[:, :, :, :, ::1] xp, real[:, :, :, :, ::1] w, int stride, dtype):
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t Z = xp.shape[2] - 2, Y = xp.shape[3] - 2, X = xp.shape[4] - 2
    cdef Py_ssize_t Zo = (Z - 1) // stride + 1, Yo = (Y - 1) // stride + 1, Xo = (X - 1) // stride + 1
    cdef Py_ssize_t O = w.shape[0]
    y_arr = np.zeros((B, O, Zo, Yo, Xo), dtype=dtype)
    cdef real[:, :, :, :, ::1] y = y_arr
    cdef Py_ssize_t b, o, c, zo, yo, xo, kz, ky, kx, zi, yi
    cdef real wv
    cdef real* yrow
    cdef real* xrow
    cdef int nt = _threads()
    # innermost loop runs over the contiguous output x-axis so it vectorises
    for zo in prange(Zo, nogil=True, schedule='static', num_threads=nt):
        for b in range(B):
            for o in range(O):
                for c in range(C):
                    for kz in range(3):
                        zi = zo * stride + kz
                        for yo in range(Yo):
                            for ky in range(3):
                                yi = yo * stride + ky
                                for kx in range(3):
                                    wv = w[o, c, kz, ky, kx]
                                    yrow = &y[b, o, zo, yo, 0]
                                    xrow = &xp[b, c, zi, yi, kx]
                                    if stride == 1:
                                        for xo in range(Xo):
                                            yrow[xo] += wv * xrow[xo]
                                    else:
                                        for xo in range(Xo):
                                            yrow[xo] += wv * xrow[xo * stride]
    return y_arr


def conv3d_grad_input(gy, w, in_spatial, int stride=1):
    """Gradient of conv3d_forward w.r.t. the input volume.

    Realised as correlation of the zero-stuffed output gradient with the
    flipped, channel-transposed weights, which shares the fast forward
    loop structure for both strides.
    """
    Z, Y, X = in_spatial
    if stride == 1:
        gz = gy
    else:
        gz = np.zeros((gy.shape[0], gy.shape[1], Z, Y, X), dtype=gy.dtype)
        gz[:, :, ::stride, ::stride, ::stride] = gy
    gp = np.pad(gz, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    if gy.dtype == np.float32:
        return _conv3d_corr(gp.astype(np.float32, copy=False), np.ascontiguousarray(w, np.float32), np.float32)
    return _conv3d_corr(gp.astype(np.float64, copy=False), np.ascontiguousarray(w, np.float64), np.float64)


def _conv3d_corr(real[:, :, :, :, ::1] gp, real[:, :, :, :, ::1] w, dtype):
    cdef Py_ssize_t B = gp.shape[0], O = gp.shape[1]
    cdef Py_ssize_t Z = gp.shape[2] - 2, Y = gp.shape[3] - 2, X = gp.shape[4] - 2
    cdef Py_ssize_t C = w.shape[1]
    gx_arr = np.zeros((B, C, Z, Y, X), dtype=dtype)
    cdef real[:, :, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, o, c, zi, yi, xi, kz, ky, kx
    cdef real wv
    cdef real* grow
    cdef real* prow
    cdef int nt = _threads()
    for zi in prange(Z, nogil=True, schedule='static', num_threads=nt):
        for b in range(B):
            for c in range(C):
                for o in range(O):
                    for kz in range(3):
                        for yi in range(Y):
                            for ky in range(3):
                                for kx in range(3):
                                    wv = w[o, c, 2 - kz, 2 - ky, 2 - kx]
                                    grow = &gx[b, c, zi, yi, 0]
                                    prow = &gp[b, o, zi + kz, yi + ky, kx]
                                    for xi in range(X):
                                        grow[xi] += wv * prow[xi]
    return gx_arr


def conv3d_grad_weight(gy, x, int stride=1):
    """Gradient of conv3d_forward w.r.t. the weights; returns (O, C, 3, 3, 3)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    if gy.dtype == np.float32:
        return _conv3d_grad_weight(np.ascontiguousarray(gy, np.float32), xp.astype(np.float32, copy=False), stride, np.float32)
    return _conv3d_grad_weight(np.ascontiguousarray(gy, np.float64), xp.astype(np.float64, copy=False), stride, np.float64)


def _conv3d_grad_weight(real[:, :, :, :, ::1] gy, real[:, :, :, :, ::1] xp, int stride, dtype):
    cdef Py_ssize_t B = gy.shape[0], O = gy.shape[1]
    cdef Py_ssize_t Zo = gy.shape[2], Yo = gy.shape[3], Xo = gy.shape[4]
    cdef Py_ssize_t C = xp.shape[1]
    gw_arr = np.zeros((O, C, 3, 3, 3), dtype=np.float64)
    cdef double[:, :, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, o, c, zo, yo, xo, kz, ky, kx
    cdef double acc
    cdef real* grow
    cdef real* xrow
    cdef int nt = _threads()
    # each (o, c, k) tap reduces a contiguous dot over the output x-axis
    for o in prange(O, nogil=True, schedule='static', num_threads=nt):
        for c in range(C):
            for kz in range(3):
                for ky in range(3):
                    for kx in range(3):
                        acc = 0.0
                        for b in range(B):
                            for zo in range(Zo):
                                for yo in range(Yo):
                                    grow = &gy[b, o, zo, yo, 0]
                                    xrow = &xp[b, c, zo * stride + kz, yo * stride + ky, kx]
                                    acc = acc + _dot_rows(grow, xrow, Xo, stride)
                        gw[o, c, kz, ky, kx] = acc
    return gw_arr.astype(dtype)


def sample_trilinear(vol, coords, double cval=0.0):
    """Trilinear sampling at continuous voxel coords (N, 3) zyx, constant outside."""
    return _sample_trilinear(np.ascontiguousarray(vol, np.float64),
                             np.ascontiguousarray(coords, np.float64), cval)


def _sample_trilinear(double[:, :, ::1] vol, double[:, ::1] coords, double cval):
    cdef Py_ssize_t N = coords.shape[0]
    cdef Py_ssize_t Z = vol.shape[0], Y = vol.shape[1], X = vol.shape[2]
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, z0, y0, x0, dz, dy, dx, zi, yi, xi
    cdef double cz, cy, cx, fz, fy, fx, acc, wz, wy, wx, v
    cdef int nt = _threads()
    for i in prange(N, nogil=True, schedule='static', num_threads=nt):
        cz = coords[i, 0]; cy = coords[i, 1]; cx = coords[i, 2]
        z0 = <Py_ssize_t> floor(cz); fz = cz - floor(cz)
        y0 = <Py_ssize_t> floor(cy); fy = cy - floor(cy)
        x0 = <Py_ssize_t> floor(cx); fx = cx - floor(cx)
        acc = 0.0
        for dz in range(2):
            zi = z0 + dz
            wz = fz if dz else 1.0 - fz
            for dy in range(2):
                yi = y0 + dy
                wy = fy if dy else 1.0 - fy
                for dx in range(2):
                    xi = x0 + dx
                    wx = fx if dx else 1.0 - fx
                    if 0 <= zi < Z and 0 <= yi < Y and 0 <= xi < X:
                        v = vol[zi, yi, xi]
                    else:
                        v = cval
                    acc = acc + wz * wy * wx * v
        out[i] = acc
    return out_arr


def sample_nearest(vol, coords, double cval=0.0):
    """Nearest-neighbour sampling; ties round toward +infinity."""
    return _sample_nearest(np.ascontiguousarray(vol, np.float64),
                           np.ascontiguousarray(coords, np.float64), cval)


def _sample_nearest(double[:, :, ::1] vol, double[:, ::1] coords, double cval):
    cdef Py_ssize_t N = coords.shape[0]
    cdef Py_ssize_t Z = vol.shape[0], Y = vol.shape[1], X = vol.shape[2]
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, zi, yi, xi
    cdef int nt = _threads()
    for i in prange(N, nogil=True, schedule='static', num_threads=nt):
        zi = <Py_ssize_t> floor(coords[i, 0] + 0.5)
        yi = <Py_ssize_t> floor(coords[i, 1] + 0.5)
        xi = <Py_ssize_t> floor(coords[i, 2] + 0.5)
        if 0 <= zi < Z and 0 <= yi < Y and 0 <= xi < X:
            out[i] = vol[zi, yi, xi]
        else:
            out[i] = cval
    return out_arr


cdef void _dt1d(double* f, Py_ssize_t n, double s, double* d, Py_ssize_t* v, double* z) noexcept nogil:
    """1-D squared-distance transform by lower envelope of parabolas."""
    cdef Py_ssize_t k = -1, q, j
    cdef double fq, sq, xj, inter
    for q in range(n):
        fq = f[q]
        if fq == INFINITY:
            continue
        sq = q * s
        while k >= 0:
            j = v[k]
            xj = j * s
            inter = (fq + sq * sq - (f[j] + xj * xj)) / (2.0 * sq - 2.0 * xj)
            if inter <= z[k]:
                k -= 1
            else:
                break
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INFINITY
        else:
            k += 1
            v[k] = q
            z[k] = inter
        z[k + 1] = INFINITY
    if k < 0:
        for q in range(n):
            d[q] = INFINITY
        return
    j = 0
    for q in range(n):
        sq = q * s
        while z[j + 1] < sq:
            j += 1
        xj = v[j] * s
        d[q] = (sq - xj) * (sq - xj) + f[v[j]]


def edt(features, spacing):
    """Exact Euclidean distance (mm) to the nearest True voxel (Felzenszwalb sweeps)."""
    mask = np.ascontiguousarray(features, dtype=bool)
    cdef double sz = spacing[0], sy = spacing[1], sx = spacing[2]
    d2 = np.where(mask, 0.0, np.inf)
    cdef double[:, :, ::1] g = d2
    cdef Py_ssize_t Z = g.shape[0], Y = g.shape[1], X = g.shape[2]
    cdef Py_ssize_t n = max(Z, max(Y, X))
    buf = np.empty(n, dtype=np.float64)
    out = np.empty(n, dtype=np.float64)
    varr = np.empty(n, dtype=np.intp)
    zarr = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] fb = buf, db = out, zb = zarr
    cdef Py_ssize_t[::1] vb = varr
    cdef Py_ssize_t i, j, kk
    with nogil:
        for i in range(Z):
            for j in range(Y):
                _dt1d(&g[i, j, 0], X, sx, &db[0], &vb[0], &zb[0])
                for kk in range(X):
                    g[i, j, kk] = db[kk]
        for i in range(Z):
            for kk in range(X):
                for j in range(Y):
                    fb[j] = g[i, j, kk]
                _dt1d(&fb[0], Y, sy, &db[0], &vb[0], &zb[0])
                for j in range(Y):
                    g[i, j, kk] = db[j]
        for j in range(Y):
            for kk in range(X):
                for i in range(Z):
                    fb[i] = g[i, j, kk]
                _dt1d(&fb[0], Z, sz, &db[0], &vb[0], &zb[0])
                for i in range(Z):
                    g[i, j, kk] = db[i]
    return np.sqrt(d2)


def label_components(mask, int connectivity=26):
    """Connected-component labelling by scan-order flood fill."""
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    offs = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dz == dy == dx == 0:
                    continue
                if connectivity == 6 and abs(dz) + abs(dy) + abs(dx) != 1:
                    continue
                offs.append((dz, dy, dx))
    noff = np.asarray(offs, dtype=np.intp)
    return _label_components(m, noff)


def _label_components(cnp.uint8_t[:, :, ::1] m, Py_ssize_t[:, ::1] offs):
    cdef Py_ssize_t Z = m.shape[0], Y = m.shape[1], X = m.shape[2]
    labels_arr = np.zeros((Z, Y, X), dtype=np.int32)
    cdef cnp.int32_t[:, :, ::1] labels = labels_arr
    stack_arr = np.empty(Z * Y * X, dtype=np.intp)
    cdef Py_ssize_t[::1] stack = stack_arr
    cdef Py_ssize_t z, y, x, nz, ny, nx, z2, y2, x2, top, cur, k, noffs = offs.shape[0]
    cdef cnp.int32_t nlab = 0
    with nogil:
        for z in range(Z):
            for y in range(Y):
                for x in range(X):
                    if m[z, y, x] == 0 or labels[z, y, x] != 0:
                        continue
                    nlab += 1
                    labels[z, y, x] = nlab
                    top = 0
                    stack[0] = (z * Y + y) * X + x
                    while top >= 0:
                        cur = stack[top]
                        top -= 1
                        nz = cur // (Y * X)
                        ny = (cur // X) % Y
                        nx = cur % X
                        for k in range(noffs):
                            z2 = nz + offs[k, 0]
                            y2 = ny + offs[k, 1]
                            x2 = nx + offs[k, 2]
                            if 0 <= z2 < Z and 0 <= y2 < Y and 0 <= x2 < X:
                                if m[z2, y2, x2] != 0 and labels[z2, y2, x2] == 0:
                                    labels[z2, y2, x2] = nlab
                                    top += 1
                                    stack[top] = (z2 * Y + y2) * X + x2
    return labels_arr, int(nlab)


def mc_cell_triangles(padded, tri_counts, tri_offsets, tri_edges, edge_axis, edge_base):
    """Per-cell marching-cubes sweep emitting int64 lattice-edge keys."""
    return _mc_cells(np.ascontiguousarray(padded, np.uint8),
                     np.ascontiguousarray(tri_counts, np.int32),
                     np.ascontiguousarray(tri_offsets, np.int32),
                     np.ascontiguousarray(tri_edges, np.int32),
                     np.ascontiguousarray(edge_axis, np.int32),
                     np.ascontiguousarray(edge_base, np.int32))


def _mc_cells(cnp.uint8_t[:, :, ::1] m, cnp.int32_t[::1] tri_counts, cnp.int32_t[::1] tri_offsets,
              cnp.int32_t[::1] tri_edges, cnp.int32_t[::1] edge_axis, cnp.int32_t[:, ::1] edge_base):
    cdef Py_ssize_t Zp = m.shape[0], Yp = m.shape[1], Xp = m.shape[2]
    cdef Py_ssize_t Z = Zp - 1, Y = Yp - 1, X = Xp - 1
    cdef Py_ssize_t z, y, x, c, t, e, total = 0
    cdef int case
    with nogil:
        for z in range(Z):
            for y in range(Y):
                for x in range(X):
                    case = _cell_case(m, z, y, x)
                    total += tri_counts[case]
    keys_arr = np.empty((total, 3), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] keys = keys_arr
    cdef Py_ssize_t pos = 0, off
    cdef cnp.int64_t nvox = Zp * Yp * Xp
    cdef cnp.int32_t le
    with nogil:
        for z in range(Z):
            for y in range(Y):
                for x in range(X):
                    case = _cell_case(m, z, y, x)
                    off = tri_offsets[case]
                    for t in range(tri_counts[case]):
                        for e in range(3):
                            le = tri_edges[off + 3 * t + e]
                            keys[pos, e] = (<cnp.int64_t> edge_axis[le]) * nvox + \
                                ((z + edge_base[le, 2]) * Yp + (y + edge_base[le, 1])) * Xp + (x + edge_base[le, 0])
                        pos += 1
    return keys_arr


cdef inline int _cell_case(cnp.uint8_t[:, :, ::1] m, Py_ssize_t z, Py_ssize_t y, Py_ssize_t x) noexcept nogil:
    cdef int case = 0
    if m[z, y, x]:
        case |= 1
    if m[z, y, x + 1]:
        case |= 2
    if m[z, y + 1, x]:
        case |= 4
    if m[z, y + 1, x + 1]:
        case |= 8
    if m[z + 1, y, x]:
        case |= 16
    if m[z + 1, y, x + 1]:
        case |= 32
    if m[z + 1, y + 1, x]:
        case |= 64
    if m[z + 1, y + 1, x + 1]:
        case |= 128
    return case
